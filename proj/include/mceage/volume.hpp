#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mceage/error.hpp"
#include "mceage/geometry.hpp"

namespace mceage {

struct Dims3 {
  int x = 0;
  int y = 0;
  int z = 0;

  constexpr int operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
  constexpr std::size_t count() const {
    return static_cast<std::size_t>(x) * static_cast<std::size_t>(y) * static_cast<std::size_t>(z);
  }
  friend constexpr bool operator==(const Dims3&, const Dims3&) = default;
};

// Sampling lattice of a volume. Sample (i,j,k) sits at origin + (i,j,k)*spacing;
// the physical extent of an axis is dims*spacing.
struct VolumeGeometry {
  Dims3 dims;
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin;

  Vec3 worldOf(double i, double j, double k) const {
    return {origin.x + i * spacing.x, origin.y + j * spacing.y, origin.z + k * spacing.z};
  }
  // Continuous voxel index of a world point.
  Vec3 indexOf(const Vec3& p) const {
    return {(p.x - origin.x) / spacing.x, (p.y - origin.y) / spacing.y, (p.z - origin.z) / spacing.z};
  }
  AxisBox extent() const {
    return {origin, {origin.x + dims.x * spacing.x, origin.y + dims.y * spacing.y,
                     origin.z + dims.z * spacing.z}};
  }
  // World X of the plane about which mirrorX reflects.
  double mirrorCenterX() const { return origin.x + 0.5 * (dims.x - 1) * spacing.x; }

  void validate() const;
  friend bool operator==(const VolumeGeometry&, const VolumeGeometry&) = default;
};

// Dense scalar field in X-fastest order.
template <class T>
class Grid3 {
 public:
  using value_type = T;

  Grid3() = default;
  Grid3(const VolumeGeometry& geometry, T fill) : geometry_(geometry), data_(geometry.dims.count(), fill) {
    geometry_.validate();
  }
  Grid3(const VolumeGeometry& geometry, std::vector<T> data) : geometry_(geometry), data_(std::move(data)) {
    geometry_.validate();
    if (data_.size() != geometry_.dims.count()) {
      throw FormatError(FormatError::Kind::SizeMismatch, "voxel count does not match dims");
    }
  }

  const VolumeGeometry& geometry() const { return geometry_; }
  const Dims3& dims() const { return geometry_.dims; }
  const Vec3& spacing() const { return geometry_.spacing; }
  const Vec3& origin() const { return geometry_.origin; }

  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(geometry_.dims.x) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(geometry_.dims.y) * static_cast<std::size_t>(k));
  }
  bool contains(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < geometry_.dims.x && j < geometry_.dims.y && k < geometry_.dims.z;
  }
  T at(int i, int j, int k) const { return data_[index(i, j, k)]; }
  T& at(int i, int j, int k) { return data_[index(i, j, k)]; }

  const std::vector<T>& data() const { return data_; }
  std::vector<T>& data() { return data_; }

  friend bool operator==(const Grid3&, const Grid3&) = default;

 private:
  VolumeGeometry geometry_;
  std::vector<T> data_;
};

using HuVolume = Grid3<std::int16_t>;
using BinaryMask = Grid3<std::uint8_t>;
using FloatVolume = Grid3<float>;

inline constexpr std::int16_t kMinHu = -1024;
inline constexpr std::int16_t kMaxHu = 3071;
inline constexpr double kAirHu = -1000.0;

enum class View { Axial, Coronal, Sagittal };

std::string nameOf(View view);
View viewFromString(std::string_view name);
// Axis normal to the view's plane: axial -> Z, coronal -> Y, sagittal -> X.
int normalAxis(View view);

// One plane of a volume. Rows/cols: axial (Y, X), coronal (Z, X), sagittal (Z, Y).
struct PlanarSlice {
  View view = View::Axial;
  int index = 0;
  int rows = 0;
  int cols = 0;
  std::vector<float> pixels;
  double pixelSpacing = 0.0;

  float at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * cols + c]; }
};

// .ctv container: JSON header, '\n', NUL, then the little-endian payload.
HuVolume loadVolume(const std::filesystem::path& path);
void saveVolume(const std::filesystem::path& path, const HuVolume& volume, const nlohmann::json& extraHeader = {});
FloatVolume loadFloatVolume(const std::filesystem::path& path, nlohmann::json* header = nullptr);
void saveFloatVolume(const std::filesystem::path& path, const FloatVolume& volume,
                     const nlohmann::json& extraHeader = {});

// Mask bit set iff HU >= threshold.
BinaryMask thresholdBone(const HuVolume& volume, int threshold = 300);

// Trilinear resampling onto an isotropic grid anchored at the source origin.
HuVolume resampleIsotropic(const HuVolume& volume, double targetSpacing = 0.5);

// Resamples the box [min, max) at the source spacing; samples outside the
// source are padded.
HuVolume cropBox(const HuVolume& volume, const AxisBox& box, double padValue = kAirHu);

// Trilinear HU sample at a world point; neighbours outside the grid read as pad.
double sampleTrilinear(const HuVolume& volume, const Vec3& world, double padValue = kAirHu);

// Model-input intensity window: clip to [-1000, 2000] HU, map affinely to [0, 1].
inline float windowHu(double hu) {
  const double clipped = std::clamp(hu, -1000.0, 2000.0);
  return static_cast<float>((clipped + 1000.0) / 3000.0);
}

PlanarSlice extractSlice(const HuVolume& volume, View view, int index);
PlanarSlice extractSlice(const FloatVolume& volume, View view, int index);

template <class T>
Grid3<T> mirrorX(const Grid3<T>& volume) {
  Grid3<T> out(volume.geometry(), T{});
  const Dims3 d = volume.dims();
  for (int k = 0; k < d.z; ++k) {
    for (int j = 0; j < d.y; ++j) {
      for (int i = 0; i < d.x; ++i) {
        out.at(d.x - 1 - i, j, k) = volume.at(i, j, k);
      }
    }
  }
  return out;
}

// World-space reflection matching mirrorX on the given geometry.
inline Vec3 mirrorPointX(const VolumeGeometry& geometry, const Vec3& p) {
  return {2.0 * geometry.mirrorCenterX() - p.x, p.y, p.z};
}

}  // namespace mceage
