#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "mceage/phantom.hpp"
#include "mceage/roi.hpp"
#include "phantom_oracles.hpp"
#include "test_util.hpp"

using namespace mceage;

namespace {

PhantomSpec specFor(std::uint64_t seed, double age) {
  PhantomSpec s;
  s.seed = seed;
  s.age = age;
  return s;
}

double maxAbsDiff(const FloatVolume& a, const FloatVolume& b) {
  REQUIRE(a.dims() == b.dims());
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - b.data()[i]));
  return m;
}

}  // namespace

TEST_CASE("MCE box arithmetic") {
  const AxisBox clav{{10.0, 5.0, 20.0}, {100.0, 50.0, 60.0}};
  const AxisBox b = mceBox(clav);
  CHECK(b.min.x == 75.0);
  CHECK(b.max.x == 100.0);
  CHECK(b.min.y == 25.0);
  CHECK(b.max.y == 50.0);
  CHECK(b.min.z == 20.0);
  CHECK(b.max.z == 45.0);
  CHECK_THROWS_AS(mceBox(AxisBox::empty()), InvalidArgument);
}

TEST_CASE("extraction shape, range and laterality handling") {
  const PhantomScene scene = generateScene(specFor(2, 17.0));
  for (const ClavicleTruth& t : scene.clavicles) {
    const MceVolume m = localizeMce(t.maskBox, scene.volume, t.side);
    CHECK(m.data.dims() == Dims3{50, 50, 50});
    CHECK(m.data.spacing().x == 0.5);
    CHECK(m.laterality == t.side);
    const auto [lo, hi] = std::minmax_element(m.data.data().begin(), m.data.data().end());
    CHECK(*lo >= 0.0f);
    CHECK(*hi <= 1.0f);
    CHECK(*hi > windowHu(600.0));
  }
  CHECK_THROWS_AS(localizeMce(scene.clavicles[0].maskBox, scene.volume, Laterality::Unknown), InvalidArgument);

  // Crops reaching outside the scan are padded with air.
  const MceVolume edge = localizeMce(AxisBox{{0, 0, 0}, {10, 10, 10}}, scene.volume, Laterality::Right);
  CHECK(edge.data.at(0, 0, 0) == windowHu(kAirHu));
}

TEST_CASE("mesh overload uses the clavicle's bounding box") {
  const PhantomScene scene = generateScene(specFor(4, 20.0));
  const ComponentSet set = boneComponents(scene.volume);
  const std::vector<int> labels = componentObjectLabels(set.components, scene.labels);
  const auto it = std::find(labels.begin(), labels.end(), kLabelLeftClavicle);
  REQUIRE(it != labels.end());
  const TriangleMesh& left = set.components[static_cast<std::size_t>(it - labels.begin())];
  const MceVolume a = localizeMce(left, scene.volume, Laterality::Left);
  const MceVolume b = localizeMce(scene.clavicles[1].maskBox, scene.volume, Laterality::Left);
  CHECK(a == b);
  CHECK_THROWS_AS(localizeMce(TriangleMesh{}, scene.volume, Laterality::Left), InvalidArgument);
}

TEST_CASE("left clavicle of a symmetric phantom matches the right") {
  PhantomSpec spec = specFor(9, 16.5);
  spec.symmetric = true;
  const PhantomScene scene = generateScene(spec);
  const MceVolume r = localizeMce(scene.clavicles[0].maskBox, scene.volume, Laterality::Right);
  const MceVolume l = localizeMce(scene.clavicles[1].maskBox, scene.volume, Laterality::Left);
  CHECK(maxAbsDiff(r.data, l.data) <= 1e-6);
}

TEST_CASE("mirroring equivariance") {
  const PhantomScene scene = generateScene(specFor(13, 15.5));
  const HuVolume mirrored = mirrorX(scene.volume);
  for (const ClavicleTruth& t : scene.clavicles) {
    const MceVolume direct = localizeMce(t.maskBox, scene.volume, t.side);
    const MceVolume flipped =
        localizeMce(mirrorBoxX(scene.volume.geometry(), t.maskBox), mirrored, opposite(t.side));
    CHECK(maxAbsDiff(direct.data, flipped.data) <= 1e-6);
  }
}

TEST_CASE("re-extraction from the crop is idempotent") {
  const PhantomScene scene = generateScene(specFor(17, 19.0));
  const ClavicleTruth& t = scene.clavicles[0];
  const MceVolume first = localizeMce(t.maskBox, scene.volume, Laterality::Right);
  // HU crop on the MCE grid, then the same rule applied to its own box.
  HuVolume crop(first.data.geometry(), std::int16_t{0});
  for (int k = 0; k < 50; ++k)
    for (int j = 0; j < 50; ++j)
      for (int i = 0; i < 50; ++i)
        crop.at(i, j, k) = static_cast<std::int16_t>(
            std::lround(sampleTrilinear(scene.volume, crop.geometry().worldOf(i, j, k))));
  const AxisBox cropBox{first.worldBox.min, first.worldBox.min + Vec3{25.0, 25.0, 25.0}};
  const MceVolume second = localizeMce(cropBox, crop, Laterality::Right);
  CHECK(maxAbsDiff(first.data, second.data) < 1e-3);
}

TEST_CASE("slice stacks partition the volume") {
  const PhantomScene scene = generateScene(specFor(21, 18.0));
  const MceVolume m = localizeMce(scene.clavicles[0].maskBox, scene.volume, Laterality::Right);
  for (View v : {View::Axial, View::Coronal, View::Sagittal}) {
    const auto stack = sliceStack(m, v);
    REQUIRE(stack.size() == 50);
    for (int k = 0; k < 50; ++k) CHECK(stack[k].index == k);
    CHECK(assembleStack(stack, m.data.geometry()) == m.data);
  }
  MceVolume flat = m;
  std::fill(flat.data.data().begin(), flat.data.data().end(), 0.25f);
  const auto stack = sliceStack(flat, View::Coronal);
  for (const PlanarSlice& s : stack) CHECK(s.pixels == stack.front().pixels);
  // Ascending world coordinate along the normal: slice k of the axial stack is the plane z = min.z + k/2.
  CHECK(sliceStack(m, View::Axial)[7].pixels == extractSlice(m.data, View::Axial, 7).pixels);
}

TEST_CASE("the gap plane carries the strongest bone-gap contrast") {
  const float gapLevel = windowHu(400.0);
  const float boneLevel = windowHu(600.0);
  for (std::uint64_t seed = 30; seed < 36; ++seed) {
    const PhantomScene scene = generateScene(specFor(seed, 16.0));
    for (const ClavicleTruth& t : scene.clavicles) {
      const MceVolume m = localizeMce(t.maskBox, scene.volume, t.side);
      for (View v : {View::Axial, View::Coronal}) {
        const auto stack = sliceStack(m, v);
        int best = 0;
        int bestCount = -1;
        for (int k = 0; k < 50; ++k) {
          const int c = oracle::flankedGapPixels(stack[k], gapLevel, boneLevel);
          if (c > bestCount) {
            bestCount = c;
            best = k;
          }
        }
        CAPTURE(seed);
        CAPTURE(nameOf(v));
        CHECK(bestCount > 0);
        CHECK(std::abs(best - t.gapPlaneIndex[v == View::Axial ? 0 : 1]) <= 3);
      }
    }
  }
}

TEST_CASE("MCE persistence") {
  TempDir dir;
  const PhantomScene scene = generateScene(specFor(23, 21.0));
  const MceVolume m = localizeMce(scene.clavicles[1].maskBox, scene.volume, Laterality::Left);
  saveMce(dir.path() / "m.ctv", m);
  const MceVolume back = loadMce(dir.path() / "m.ctv");
  CHECK(back == m);
  CHECK(back.laterality == Laterality::Left);
}
