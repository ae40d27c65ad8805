#include "mceage/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mceage/error.hpp"
#include "mceage/random.hpp"

namespace mceage {

namespace {

double entropy(double n0, double n1) {
  const double n = n0 + n1;
  double h = 0.0;
  for (double c : {n0, n1})
    if (c > 0.0) h -= (c / n) * std::log2(c / n);
  return h;
}

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double gain = -1.0;
};

class TreeBuilder {
 public:
  TreeBuilder(const std::vector<std::vector<double>>& rows, const std::vector<int>& labels, const ForestConfig& cfg,
              int mtry, std::mt19937_64& rng)
      : rows_(rows), labels_(labels), cfg_(cfg), mtry_(mtry), rng_(rng) {}

  DecisionTree build(std::vector<int> sample) {
    tree_.nodes.clear();
    grow(sample, 0);
    return std::move(tree_);
  }

 private:
  int grow(std::vector<int>& idx, int depth) {
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    double n0 = 0.0;
    double n1 = 0.0;
    for (int r : idx) (labels_[r] ? n1 : n0) += 1.0;
    tree_.nodes[id].count0 = n0;
    tree_.nodes[id].count1 = n1;

    const bool pure = n0 == 0.0 || n1 == 0.0;
    const bool tooSmall = static_cast<int>(idx.size()) < 2 * cfg_.minLeafSize;
    const bool tooDeep = cfg_.maxDepth > 0 && depth >= cfg_.maxDepth;
    if (pure || tooSmall || tooDeep) return id;

    const Split split = findSplit(idx, n0, n1);
    if (split.feature < 0) return id;

    std::vector<int> left;
    std::vector<int> right;
    for (int r : idx) (rows_[r][split.feature] <= split.threshold ? left : right).push_back(r);
    idx.clear();
    idx.shrink_to_fit();
    tree_.nodes[id].feature = split.feature;
    tree_.nodes[id].threshold = split.threshold;
    const int l = grow(left, depth + 1);
    const int r = grow(right, depth + 1);
    tree_.nodes[id].left = l;
    tree_.nodes[id].right = r;
    return id;
  }

  // Tries mtry random features; if none of them can split the node, keeps
  // drawing the remaining features in random order.
  Split findSplit(const std::vector<int>& idx, double n0, double n1) {
    const int m = static_cast<int>(rows_.front().size());
    std::vector<int> features(m);
    std::iota(features.begin(), features.end(), 0);
    const double parent = entropy(n0, n1);
    const double n = n0 + n1;
    Split best;
    std::vector<std::pair<double, int>> column(idx.size());
    for (int drawn = 0; drawn < m; ++drawn) {
      if (drawn >= mtry_ && best.feature >= 0) break;
      std::uniform_int_distribution<int> pick(drawn, m - 1);
      std::swap(features[drawn], features[pick(rng_)]);
      const int f = features[drawn];
      for (std::size_t s = 0; s < idx.size(); ++s) column[s] = {rows_[idx[s]][f], labels_[idx[s]]};
      std::sort(column.begin(), column.end());
      double l0 = 0.0;
      double l1 = 0.0;
      const int minLeaf = cfg_.minLeafSize;
      for (std::size_t s = 0; s + 1 < column.size(); ++s) {
        (column[s].second ? l1 : l0) += 1.0;
        if (column[s].first == column[s + 1].first) continue;
        const double nl = l0 + l1;
        const double nr = n - nl;
        if (nl < minLeaf || nr < minLeaf) continue;
        const double gain = parent - (nl / n) * entropy(l0, l1) - (nr / n) * entropy(n0 - l0, n1 - l1);
        if (gain > best.gain) {
          best.gain = gain;
          best.feature = f;
          best.threshold = 0.5 * (column[s].first + column[s + 1].first);
          if (!(best.threshold < column[s + 1].first)) best.threshold = column[s].first;
        }
      }
    }
    return best;
  }

  const std::vector<std::vector<double>>& rows_;
  const std::vector<int>& labels_;
  const ForestConfig& cfg_;
  int mtry_;
  std::mt19937_64& rng_;
  DecisionTree tree_;
};

const TreeNode& leafFor(const DecisionTree& tree, const std::vector<double>& row) {
  int node = 0;
  while (tree.nodes[node].feature >= 0) {
    const TreeNode& n = tree.nodes[node];
    node = row[n.feature] <= n.threshold ? n.left : n.right;
  }
  return tree.nodes[node];
}

double leafProbability(const TreeNode& leaf) { return leaf.count1 / (leaf.count0 + leaf.count1); }

}  // namespace

bool operator==(const ForestModel& a, const ForestModel& b) {
  if (a.nFeatures != b.nFeatures || a.featuresPerSplit != b.featuresPerSplit || a.seed != b.seed ||
      a.treeSeeds != b.treeSeeds || a.classPrior != b.classPrior || a.oobAccuracy != b.oobAccuracy ||
      a.oobRows != b.oobRows || a.trees.size() != b.trees.size())
    return false;
  for (std::size_t t = 0; t < a.trees.size(); ++t) {
    const auto& x = a.trees[t].nodes;
    const auto& y = b.trees[t].nodes;
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i].feature != y[i].feature || x[i].threshold != y[i].threshold || x[i].left != y[i].left ||
          x[i].right != y[i].right || x[i].count0 != y[i].count0 || x[i].count1 != y[i].count1)
        return false;
  }
  return true;
}

ForestModel trainForest(const std::vector<std::vector<double>>& rows, const std::vector<int>& labels,
                        std::uint64_t seed, const ForestConfig& config) {
  if (rows.size() < 2) throw InvalidArgument("forest training needs at least two rows");
  if (rows.size() != labels.size()) throw InvalidArgument("row and label counts differ");
  const int m = static_cast<int>(rows.front().size());
  if (m == 0) throw InvalidArgument("rows have no features");
  for (const auto& r : rows)
    if (static_cast<int>(r.size()) != m) throw InvalidArgument("rows differ in length");
  int positives = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw InvalidArgument("labels must be 0 or 1");
    positives += l;
  }
  if (positives == 0 || positives == static_cast<int>(labels.size()))
    throw InvalidArgument("forest training needs both classes");
  if (config.trees < 1 || config.minLeafSize < 1) throw InvalidArgument("invalid forest configuration");

  ForestModel model;
  model.nFeatures = m;
  model.featuresPerSplit =
      config.featuresPerSplit > 0 ? std::min(config.featuresPerSplit, m)
                                  : std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(m)))));
  model.seed = seed;
  model.classPrior = static_cast<double>(positives) / static_cast<double>(labels.size());

  const int n = static_cast<int>(rows.size());
  std::vector<double> oobSum(n, 0.0);
  std::vector<int> oobCount(n, 0);
  for (int t = 0; t < config.trees; ++t) {
    const std::uint64_t treeSeed = deriveSeed(seed, static_cast<std::uint64_t>(t));
    model.treeSeeds.push_back(treeSeed);
    std::mt19937_64 rng(treeSeed);
    std::uniform_int_distribution<int> draw(0, n - 1);
    std::vector<int> sample(n);
    std::vector<char> inBag(n, 0);
    for (int& s : sample) inBag[s = draw(rng)] = 1;
    TreeBuilder builder(rows, labels, config, model.featuresPerSplit, rng);
    model.trees.push_back(builder.build(std::move(sample)));
    for (int r = 0; r < n; ++r) {
      if (inBag[r]) continue;
      oobSum[r] += leafProbability(leafFor(model.trees.back(), rows[r]));
      ++oobCount[r];
    }
  }
  int correct = 0;
  for (int r = 0; r < n; ++r) {
    if (!oobCount[r]) continue;
    ++model.oobRows;
    const int predicted = oobSum[r] / oobCount[r] >= 0.5 ? 1 : 0;
    correct += predicted == labels[r];
  }
  model.oobAccuracy = model.oobRows ? static_cast<double>(correct) / model.oobRows : 0.0;
  return model;
}

double predictProbability(const ForestModel& model, const std::vector<double>& row) {
  if (static_cast<int>(row.size()) != model.nFeatures)
    throw InvalidArgument("feature vector length " + std::to_string(row.size()) + " does not match model (" +
                          std::to_string(model.nFeatures) + ")");
  if (model.trees.empty()) throw InvalidArgument("forest has no trees");
  double sum = 0.0;
  for (const DecisionTree& tree : model.trees) sum += leafProbability(leafFor(tree, row));
  return sum / static_cast<double>(model.trees.size());
}

nlohmann::json toJson(const ForestModel& model) {
  nlohmann::json trees = nlohmann::json::array();
  for (const DecisionTree& tree : model.trees) {
    nlohmann::json feature = nlohmann::json::array(), threshold = nlohmann::json::array(),
                   left = nlohmann::json::array(), right = nlohmann::json::array(),
                   c0 = nlohmann::json::array(), c1 = nlohmann::json::array();
    for (const TreeNode& n : tree.nodes) {
      feature.push_back(n.feature);
      threshold.push_back(n.threshold);
      left.push_back(n.left);
      right.push_back(n.right);
      c0.push_back(n.count0);
      c1.push_back(n.count1);
    }
    trees.push_back({{"feature", feature}, {"threshold", threshold}, {"left", left}, {"right", right},
                     {"count0", c0}, {"count1", c1}});
  }
  return {{"format", "mceage-forest"},
          {"version", 1},
          {"n_features", model.nFeatures},
          {"features_per_split", model.featuresPerSplit},
          {"seed", model.seed},
          {"tree_seeds", model.treeSeeds},
          {"class_prior", model.classPrior},
          {"oob_accuracy", model.oobAccuracy},
          {"oob_rows", model.oobRows},
          {"trees", trees}};
}

ForestModel forestFromJson(const nlohmann::json& j) {
  try {
    if (j.at("format") != "mceage-forest") throw FormatError(FormatError::Kind::MalformedHeader, "not a forest model");
    if (j.at("version") != 1) throw FormatError(FormatError::Kind::Version, "unsupported forest version");
    ForestModel m;
    m.nFeatures = j.at("n_features");
    m.featuresPerSplit = j.at("features_per_split");
    m.seed = j.at("seed");
    m.treeSeeds = j.at("tree_seeds").get<std::vector<std::uint64_t>>();
    m.classPrior = j.at("class_prior");
    m.oobAccuracy = j.at("oob_accuracy");
    m.oobRows = j.at("oob_rows");
    for (const auto& t : j.at("trees")) {
      const auto feature = t.at("feature").get<std::vector<int>>();
      const auto threshold = t.at("threshold").get<std::vector<double>>();
      const auto left = t.at("left").get<std::vector<int>>();
      const auto right = t.at("right").get<std::vector<int>>();
      const auto c0 = t.at("count0").get<std::vector<double>>();
      const auto c1 = t.at("count1").get<std::vector<double>>();
      const std::size_t n = feature.size();
      if (threshold.size() != n || left.size() != n || right.size() != n || c0.size() != n || c1.size() != n || !n)
        throw FormatError(FormatError::Kind::SizeMismatch, "tree arrays differ in length");
      DecisionTree tree;
      for (std::size_t i = 0; i < n; ++i) {
        const bool split = feature[i] >= 0;
        const auto valid = [&](int c) { return c > static_cast<int>(i) && c < static_cast<int>(n); };
        if (split && (feature[i] >= m.nFeatures || !valid(left[i]) || !valid(right[i])))
          throw FormatError(FormatError::Kind::ValueRange, "tree node references are invalid");
        if (!split && !(c0[i] + c1[i] > 0.0)) throw FormatError(FormatError::Kind::ValueRange, "empty leaf");
        tree.nodes.push_back({feature[i], threshold[i], left[i], right[i], c0[i], c1[i]});
      }
      m.trees.push_back(std::move(tree));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::MalformedHeader, std::string("forest model: ") + e.what());
  }
}

}  // namespace mceage
