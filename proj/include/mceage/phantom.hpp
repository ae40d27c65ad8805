#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mceage/detector.hpp"
#include "mceage/mesh.hpp"
#include "mceage/volume.hpp"

namespace mceage {

// Synthetic torso scene description. Ages in years, lengths in mm.
struct PhantomSpec {
  std::uint64_t seed = 0;
  double age = 20.0;
  double gapSlope = 0.35;
  double gapMaxAge = 24.0;
  int distractorCount = 6;
  double noiseSigma = 25.0;
  double voxelSpacing = 1.0;
  Dims3 volumeDims{160, 120, 120};
  // Exact X mirror symmetry: the high-X half is a copy of the low-X half.
  bool symmetric = false;

  double gapWidth() const;
  void validate() const;
};

nlohmann::json toJson(const PhantomSpec& spec);
PhantomSpec phantomSpecFromJson(const nlohmann::json& j);

// Voxel labels: 0 background, 1 right clavicle, 2 left clavicle, 3.. distractors.
inline constexpr std::uint8_t kLabelBackground = 0;
inline constexpr std::uint8_t kLabelRightClavicle = 1;
inline constexpr std::uint8_t kLabelLeftClavicle = 2;
inline constexpr std::uint8_t kFirstDistractorLabel = 3;

using LabelVolume = Grid3<std::uint8_t>;

enum class ComponentClass { RightClavicle, LeftClavicle, Distractor };
std::string nameOf(ComponentClass c);

struct ClavicleTruth {
  Laterality side = Laterality::Unknown;
  double gapWidth = 0.0;
  double capLength = 0.0;
  // Medial axis from the medial tip inward; world mm.
  std::vector<Vec3> axis;
  Vec3 gapCenter;
  // Bounding box of the clavicle's thresholded voxels grown by half a voxel,
  // i.e. the box of its marching-cubes surface.
  AxisBox maskBox;
  // Plane index inside the 50^3 MCE crop through the gap centre, per view
  // (axial, coronal, sagittal), in right-clavicle orientation.
  std::array<int, 3> gapPlaneIndex{};
};

struct PhantomScene {
  PhantomSpec spec;
  HuVolume volume;
  LabelVolume labels;
  double trueAge = 0.0;
  std::array<ClavicleTruth, 2> clavicles;  // right, left
  int distractorCount = 0;
};

PhantomScene generateScene(const PhantomSpec& spec);

// Renders only the voxels needed for one clavicle's MCE. The returned volume
// is a sub-grid whose voxels equal the corresponding voxels of the full scene.
struct ClavicleRegion {
  HuVolume volume;
  ClavicleTruth truth;
};
ClavicleRegion renderClavicleRegion(const PhantomSpec& spec, Laterality side);

// Object label under each component, by majority over its vertices' adjacent
// labelled voxels (0 if none). Each clavicle label goes to one component only,
// the one with the most votes; detached fragments of a clavicle get 0.
std::vector<int> componentObjectLabels(const std::vector<TriangleMesh>& components, const LabelVolume& labels);
ComponentClass classOfLabel(int label);

struct DatasetSplit {
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> test;
};

struct PhantomDataset {
  std::vector<PhantomSpec> subjects;
  DatasetSplit split;
};

// Subject specs with uniform ages and a 64/16/20 split stratified by integer
// age. Scenes are rendered on demand with generateScene.
PhantomDataset generateDataset(int n, double ageLo, double ageHi, std::uint64_t seed, const PhantomSpec& base = {});

nlohmann::json sidecarJson(const PhantomScene& scene, const std::vector<int>& componentLabels = {});
void saveScene(const std::filesystem::path& ctvPath, const PhantomScene& scene);

}  // namespace mceage
