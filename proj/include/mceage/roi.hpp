#pragma once

#include <filesystem>
#include <vector>

#include "mceage/detector.hpp"
#include "mceage/mesh.hpp"
#include "mceage/volume.hpp"

namespace mceage {

inline constexpr int kMceSamples = 50;
inline constexpr double kMceSpacing = 0.5;
inline constexpr double kMceExtent = 25.0;

// Windowed medial-end crop in right-clavicle orientation.
struct MceVolume {
  Laterality laterality = Laterality::Unknown;
  FloatVolume data;
  AxisBox worldBox;  // in the (possibly mirrored) frame the samples were drawn from

  friend bool operator==(const MceVolume&, const MceVolume&) = default;
};

// [X_max-25, X_max] x [Y_max-25, Y_max] x [Z_min, Z_min+25] of a right-oriented bounding box.
AxisBox mceBox(const AxisBox& clavicleBox);

// Mirror of a box under mirrorX on the given geometry.
AxisBox mirrorBoxX(const VolumeGeometry& geometry, const AxisBox& box);

// Core extraction from a clavicle bounding box. Left boxes are given in the
// unmirrored scene frame.
MceVolume localizeMce(const AxisBox& clavicleBox, const HuVolume& volume, Laterality laterality);
MceVolume localizeMce(const TriangleMesh& clavicle, const HuVolume& volume, Laterality laterality);

// 50 slices, index k at offset k along the view's normal.
std::vector<PlanarSlice> sliceStack(const MceVolume& mce, View view);
FloatVolume assembleStack(const std::vector<PlanarSlice>& slices, const VolumeGeometry& geometry);

void saveMce(const std::filesystem::path& path, const MceVolume& mce);
MceVolume loadMce(const std::filesystem::path& path);

}  // namespace mceage
