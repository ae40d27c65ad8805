#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

namespace mceage {

// Binary classification forest over dense real-valued features.
struct ForestConfig {
  int trees = 50;
  int featuresPerSplit = 0;  // 0 selects floor(sqrt(feature count))
  int minLeafSize = 1;
  int maxDepth = 0;  // 0 is unbounded
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;  // rows with value <= threshold go left
  int left = -1;
  int right = -1;
  double count0 = 0.0;
  double count1 = 0.0;
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // root at index 0
};

struct ForestModel {
  int nFeatures = 0;
  int featuresPerSplit = 0;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> treeSeeds;
  std::vector<DecisionTree> trees;
  double classPrior = 0.0;  // fraction of positive training rows
  double oobAccuracy = 0.0;
  int oobRows = 0;

  friend bool operator==(const ForestModel&, const ForestModel&);
};

// Bootstrap-resampled entropy trees. Deterministic given seed.
ForestModel trainForest(const std::vector<std::vector<double>>& rows, const std::vector<int>& labels,
                        std::uint64_t seed, const ForestConfig& config = {});

// Mean over trees of the leaf's positive-class frequency.
double predictProbability(const ForestModel& model, const std::vector<double>& row);

nlohmann::json toJson(const ForestModel& model);
ForestModel forestFromJson(const nlohmann::json& j);

}  // namespace mceage
