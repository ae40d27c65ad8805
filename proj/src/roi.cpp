#include "mceage/roi.hpp"

#include "mceage/error.hpp"

namespace mceage {

AxisBox mceBox(const AxisBox& box) {
  if (!box.valid()) throw InvalidArgument("clavicle bounding box is empty");
  return {{box.max.x - kMceExtent, box.max.y - kMceExtent, box.min.z},
          {box.max.x, box.max.y, box.min.z + kMceExtent}};
}

AxisBox mirrorBoxX(const VolumeGeometry& geometry, const AxisBox& box) {
  const double c2 = 2.0 * geometry.mirrorCenterX();
  return {{c2 - box.max.x, box.min.y, box.min.z}, {c2 - box.min.x, box.max.y, box.max.z}};
}

namespace {

MceVolume sampleMce(const HuVolume& volume, const AxisBox& box, Laterality laterality) {
  VolumeGeometry g;
  g.dims = {kMceSamples, kMceSamples, kMceSamples};
  g.spacing = {kMceSpacing, kMceSpacing, kMceSpacing};
  g.origin = box.min;
  MceVolume mce{laterality, FloatVolume(g, 0.0f), box};
  for (int k = 0; k < kMceSamples; ++k)
    for (int j = 0; j < kMceSamples; ++j)
      for (int i = 0; i < kMceSamples; ++i)
        mce.data.at(i, j, k) = windowHu(sampleTrilinear(volume, g.worldOf(i, j, k), kAirHu));
  return mce;
}

}  // namespace

MceVolume localizeMce(const AxisBox& clavicleBox, const HuVolume& volume, Laterality laterality) {
  switch (laterality) {
    case Laterality::Right: return sampleMce(volume, mceBox(clavicleBox), laterality);
    case Laterality::Left:
      return sampleMce(mirrorX(volume), mceBox(mirrorBoxX(volume.geometry(), clavicleBox)), laterality);
    case Laterality::Unknown: break;
  }
  throw InvalidArgument("MCE extraction needs a known laterality");
}

MceVolume localizeMce(const TriangleMesh& clavicle, const HuVolume& volume, Laterality laterality) {
  if (clavicle.empty()) throw InvalidArgument("clavicle mesh is empty");
  return localizeMce(boundingBox(clavicle), volume, laterality);
}

std::vector<PlanarSlice> sliceStack(const MceVolume& mce, View view) {
  const int n = mce.data.dims()[normalAxis(view)];
  std::vector<PlanarSlice> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) out.push_back(extractSlice(mce.data, view, k));
  return out;
}

FloatVolume assembleStack(const std::vector<PlanarSlice>& slices, const VolumeGeometry& geometry) {
  if (slices.empty()) throw InvalidArgument("no slices to assemble");
  const View view = slices.front().view;
  const int axis = normalAxis(view);
  const Dims3 d = geometry.dims;
  if (static_cast<int>(slices.size()) != d[axis]) throw InvalidArgument("slice count does not match the geometry");
  FloatVolume out(geometry, 0.0f);
  for (int s = 0; s < d[axis]; ++s) {
    const PlanarSlice& sl = slices[static_cast<std::size_t>(s)];
    if (sl.view != view || sl.index != s) throw InvalidArgument("slices are not an ordered stack of one view");
    for (int r = 0; r < sl.rows; ++r) {
      for (int c = 0; c < sl.cols; ++c) {
        switch (view) {
          case View::Axial: out.at(c, r, s) = sl.at(r, c); break;
          case View::Coronal: out.at(c, s, r) = sl.at(r, c); break;
          case View::Sagittal: out.at(s, c, r) = sl.at(r, c); break;
        }
      }
    }
  }
  return out;
}

void saveMce(const std::filesystem::path& path, const MceVolume& mce) {
  const nlohmann::json extra = {
      {"laterality", nameOf(mce.laterality)},
      {"world_box", {mce.worldBox.min.x, mce.worldBox.min.y, mce.worldBox.min.z, mce.worldBox.max.x,
                     mce.worldBox.max.y, mce.worldBox.max.z}}};
  saveFloatVolume(path, mce.data, extra);
}

MceVolume loadMce(const std::filesystem::path& path) {
  nlohmann::json header;
  MceVolume mce;
  mce.data = loadFloatVolume(path, &header);
  try {
    mce.laterality = lateralityFromString(header.at("laterality").get<std::string>());
    const auto b = header.at("world_box").get<std::vector<double>>();
    if (b.size() != 6) throw FormatError(FormatError::Kind::MalformedHeader, "world_box needs 6 numbers");
    mce.worldBox = {{b[0], b[1], b[2]}, {b[3], b[4], b[5]}};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::MalformedHeader, std::string("MCE header: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(FormatError::Kind::MalformedHeader, e.what());
  }
  return mce;
}

}  // namespace mceage
