#pragma once

#include <filesystem>
#include <functional>
#include <vector>

#include "mceage/nnet.hpp"

namespace mceage {

// Scalar function value and gradient at a point.
using GradientFn = std::function<double(const std::vector<double>& x, std::vector<double>& grad)>;

constexpr int kDefaultIgSteps = 256;

// Midpoint-rule Integrated Gradients along the straight path from baseline to x.
std::vector<double> integratedGradients(const GradientFn& f, const std::vector<double>& x,
                                        const std::vector<double>& baseline, int steps = kDefaultIgSteps);

// Sum of attributions per branch: S_n over features [nF, (n+1)F).
std::vector<double> branchAggregate(const std::vector<double>& perFeature, int branches, int features);

// Weighted mean of positions by clamped scores; median of positions when all
// scores clamp to zero.
double mostInformativeSlice(const std::vector<double>& scores, const std::vector<double>& positions);

struct AttributionResult {
  std::vector<double> perFeature;
  std::vector<double> branchScores;
  std::vector<double> positions;
  double center = 0.0;
  double output = 0.0;    // model prediction at the input
  double baselineOutput = 0.0;

  double completenessError() const;  // |sum IG - (f(x) - f(0))| / |f(x) - f(0)|
};

// IG on the fusion input of a (double precision) regressor with a zero
// baseline, in prediction units.
AttributionResult attributeFusion(const MultiBranchRegressor<double>& model, const std::vector<const float*>& slices,
                                  const std::vector<double>& positions, int steps = kDefaultIgSteps);

// Same for an already computed fusion input.
AttributionResult attributeFusionInput(const MultiBranchRegressor<double>& model, const std::vector<double>& fusionInput,
                                       const std::vector<double>& positions, int steps = kDefaultIgSteps);

// Pixel-level IG of the prediction with respect to every input slice, zero
// baseline; one inputSize^2 map per branch.
std::vector<std::vector<double>> pixelAttributions(const MultiBranchRegressor<double>& model,
                                                   const std::vector<const float*>& slices,
                                                   int steps = kDefaultIgSteps);

// Heatmap as ASCII PGM (P2), min-max normalized to 0..255.
void writeHeatmapPgm(const std::filesystem::path& path, const std::vector<double>& map, int rows, int cols);
// Raw attribution values, one image row per line.
void writeHeatmapCsv(const std::filesystem::path& path, const std::vector<double>& map, int rows, int cols);

}  // namespace mceage
