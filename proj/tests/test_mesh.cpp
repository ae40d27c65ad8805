#include <doctest.h>

#include <numbers>
#include <random>
#include <set>

#include "mceage/mesh.hpp"
#include "shapes.hpp"
#include "test_util.hpp"

using namespace mceage;

namespace {

// V - E + F counted directly on the produced mesh.
long eulerCharacteristic(const TriangleMesh& m) {
  std::set<std::pair<std::uint32_t, std::uint32_t>> edges;
  for (const auto& t : m.triangles)
    for (int e = 0; e < 3; ++e) edges.insert(std::minmax(t[e], t[(e + 1) % 3]));
  return static_cast<long>(m.vertices.size()) - static_cast<long>(edges.size()) + static_cast<long>(m.triangles.size());
}

bool hasDegenerateTriangle(const TriangleMesh& m) {
  for (const auto& t : m.triangles) {
    const Vec3& a = m.vertices[t[0]];
    if (norm(cross(m.vertices[t[1]] - a, m.vertices[t[2]] - a)) <= 1e-12) return true;
  }
  return false;
}

// 26-connected foreground regions, counted on the mask directly.
int maskRegions(const BinaryMask& mask) {
  std::vector<int> label(mask.data().size(), 0);
  int regions = 0;
  const Dims3 d = mask.dims();
  std::vector<std::array<int, 3>> stack;
  for (int k = 0; k < d.z; ++k)
    for (int j = 0; j < d.y; ++j)
      for (int i = 0; i < d.x; ++i) {
        if (!mask.at(i, j, k) || label[mask.index(i, j, k)]) continue;
        ++regions;
        stack.push_back({i, j, k});
        label[mask.index(i, j, k)] = regions;
        while (!stack.empty()) {
          auto [a, b, c] = stack.back();
          stack.pop_back();
          for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const int x = a + dx, y = b + dy, z = c + dz;
                if (!mask.contains(x, y, z) || !mask.at(x, y, z) || label[mask.index(x, y, z)]) continue;
                label[mask.index(x, y, z)] = regions;
                stack.push_back({x, y, z});
              }
        }
      }
  return regions;
}

}  // namespace

TEST_CASE("marching cubes basics") {
  BinaryMask empty(VolumeGeometry{{6, 6, 6}, {1, 1, 1}, {}}, std::uint8_t{0});
  CHECK(marchingCubes(empty).triangles.empty());

  BinaryMask single = empty;
  single.at(3, 3, 3) = 1;
  const TriangleMesh m = marchingCubes(single);
  CHECK(isWatertight(m));
  CHECK(eulerCharacteristic(m) == 2);
  CHECK(enclosedVolume(m) > 0.0);

  SUBCASE("voxels on the grid border still close") {
    BinaryMask corner = empty;
    corner.at(0, 0, 0) = 1;
    corner.at(5, 5, 5) = 1;
    const TriangleMesh c = marchingCubes(corner);
    CHECK(isWatertight(c));
    CHECK(connectedComponents(c).components.size() == 2);
  }
}

TEST_CASE("marching cubes is watertight on random masks") {
  std::mt19937_64 rng(1234);
  for (int trial = 0; trial < 40; ++trial) {
    std::bernoulli_distribution fill(0.15 + 0.02 * (trial % 20));
    BinaryMask mask(VolumeGeometry{{9, 8, 7}, {0.5, 1.0, 1.5}, {1, 2, 3}}, std::uint8_t{0});
    for (auto& b : mask.data()) b = fill(rng);
    const TriangleMesh m = marchingCubes(mask);
    REQUIRE(isWatertight(m));
    CHECK_FALSE(hasDegenerateTriangle(m));
    for (const TriangleMesh& part : connectedComponents(m).components) {
      CHECK(isWatertight(part));
      // Every closed surface of a solid region encloses positive volume
      // except cavity surfaces, which are negative; the total is positive.
    }
    CHECK(enclosedVolume(m) > 0.0);
  }
}

TEST_CASE("digitized sphere volume") {
  const double r = 20.0;
  const BinaryMask mask = shapes::sphereMask(r, 46, {22.5, 22.5, 22.5});
  const TriangleMesh m = marchingCubes(mask);
  const double expected = 4.0 / 3.0 * std::numbers::pi * r * r * r;
  CHECK(std::abs(enclosedVolume(m) - expected) / expected < 0.02);
  CHECK(connectedComponents(m).components.size() == 1);
}

TEST_CASE("connected components") {
  BinaryMask mask(VolumeGeometry{{40, 20, 20}, {1, 1, 1}, {}}, std::uint8_t{0});
  auto addBall = [&](Vec3 c, double r) {
    for (int k = 0; k < 20; ++k)
      for (int j = 0; j < 20; ++j)
        for (int i = 0; i < 40; ++i)
          if (norm(Vec3{double(i), double(j), double(k)} - c) <= r) mask.at(i, j, k) = 1;
  };
  addBall({9, 9, 9}, 6);
  const ComponentSet one = connectedComponents(marchingCubes(mask));
  CHECK(one.components.size() == 1);
  addBall({28, 10, 10}, 4);
  const TriangleMesh both = marchingCubes(mask);
  const ComponentSet two = connectedComponents(both);
  REQUIRE(two.components.size() == 2);
  CHECK(two.components[0].triangles.size() >= two.components[1].triangles.size());
  std::size_t total = 0;
  for (const auto& c : two.components) total += c.triangles.size();
  CHECK(total == both.triangles.size());
  CHECK(static_cast<int>(two.components.size()) == maskRegions(mask));
}

TEST_CASE("component count equals 26-connected region count for separated solids") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    BinaryMask mask(VolumeGeometry{{30, 30, 30}, {1, 1, 1}, {}}, std::uint8_t{0});
    // Random boxes on a lattice of cells separated by >= 2 voxels of background.
    std::bernoulli_distribution on(0.5);
    std::uniform_int_distribution<int> size(1, 4);
    for (int cz = 0; cz < 5; ++cz)
      for (int cy = 0; cy < 5; ++cy)
        for (int cx = 0; cx < 5; ++cx) {
          if (!on(rng)) continue;
          const int sx = size(rng), sy = size(rng), sz = size(rng);
          for (int k = 0; k < sz; ++k)
            for (int j = 0; j < sy; ++j)
              for (int i = 0; i < sx; ++i) mask.at(cx * 6 + i, cy * 6 + j, cz * 6 + k) = 1;
        }
    CHECK(static_cast<int>(connectedComponents(marchingCubes(mask)).components.size()) == maskRegions(mask));
  }
}

TEST_CASE("surface area, volume and extents of analytic shapes") {
  const TriangleMesh cube = shapes::unitCube();
  CHECK(surfaceArea(cube) == doctest::Approx(6.0).epsilon(1e-12));
  CHECK(enclosedVolume(cube) == doctest::Approx(1.0).epsilon(1e-12));
  const Extents e = obbExtents(cube);
  CHECK(e.length == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(e.width == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(e.height == doctest::Approx(1.0).epsilon(1e-9));

  const double r = 3.0;
  const TriangleMesh sphere = shapes::icosphere(r, 5);
  CHECK(std::abs(surfaceArea(sphere) - 4 * std::numbers::pi * r * r) / (4 * std::numbers::pi * r * r) < 0.01);
  const double vol = 4.0 / 3.0 * std::numbers::pi * r * r * r;
  CHECK(std::abs(enclosedVolume(sphere) - vol) / vol < 0.01);

  const TriangleMesh box = shapes::boxMesh(4, 2, 1);
  for (int trial = 0; trial < 5; ++trial) {
    const TriangleMesh rotated =
        transformed(box, shapes::rotation(0.3 * trial, 1.1 - 0.2 * trial, 0.7 * trial), {5, -3, 2});
    const Extents x = obbExtents(rotated);
    CHECK(x.length == doctest::Approx(4.0).epsilon(1e-9));
    CHECK(x.width == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(x.height == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("volume is invariant under rigid motion and scales as s^3") {
  const TriangleMesh sphere = shapes::icosphere(2.0, 3, {1, 2, 3});
  const double v0 = enclosedVolume(sphere);
  const double a0 = surfaceArea(sphere);
  const TriangleMesh moved = transformed(sphere, shapes::rotation(0.4, -1.2, 2.5), {100, -50, 7});
  CHECK(std::abs(enclosedVolume(moved) - v0) / v0 < 1e-9);
  const TriangleMesh big = scaled(sphere, 2.5);
  CHECK(enclosedVolume(big) == doctest::Approx(v0 * 2.5 * 2.5 * 2.5).epsilon(1e-9));
  CHECK(surfaceArea(big) == doctest::Approx(a0 * 2.5 * 2.5).epsilon(1e-9));
}

TEST_CASE("open meshes are rejected by enclosedVolume") {
  TriangleMesh open = shapes::unitCube();
  open.triangles.pop_back();
  CHECK_FALSE(isWatertight(open));
  CHECK_THROWS_AS(enclosedVolume(open), InvalidArgument);
}

TEST_CASE("mirrorMeshX keeps outward orientation") {
  const VolumeGeometry g{{10, 10, 10}, {1, 1, 1}, {}};
  const TriangleMesh sphere = shapes::icosphere(2.0, 2, {2, 5, 5});
  const TriangleMesh m = mirrorMeshX(sphere, g);
  CHECK(enclosedVolume(m) == doctest::Approx(enclosedVolume(sphere)));
  CHECK(areaCentroid(m).x == doctest::Approx(7.0));
}

TEST_CASE("OFF export") {
  TempDir dir;
  writeOff(dir.path() / "cube.off", shapes::unitCube());
  const std::string text = readBytes(dir.path() / "cube.off");
  CHECK(text.rfind("OFF\n8 12 0\n", 0) == 0);
}

TEST_CASE("boneComponents drops enclosed cavity shells") {
  const double r = 10.0;
  HuVolume vol(VolumeGeometry{{30, 30, 30}, {1, 1, 1}, {}}, std::int16_t{40});
  for (int k = 0; k < 30; ++k)
    for (int j = 0; j < 30; ++j)
      for (int i = 0; i < 30; ++i) {
        const double d = std::sqrt((i - 15.0) * (i - 15.0) + (j - 15.0) * (j - 15.0) + (k - 15.0) * (k - 15.0));
        if (d <= r && d > 5.0) vol.at(i, j, k) = 900;
      }
  const ComponentSet raw = connectedComponents(marchingCubes(thresholdBone(vol)));
  REQUIRE(raw.components.size() == 2);
  CHECK(enclosedVolume(raw.components[1]) < 0.0);
  const ComponentSet bone = boneComponents(vol);
  REQUIRE(bone.components.size() == 1);
  CHECK(enclosedVolume(bone.components[0]) > 0.0);
  CHECK(bone.components[0].triangles.size() == raw.components[0].triangles.size());
}
