#include "mceage/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "mceage/error.hpp"

namespace mceage {

std::vector<double> integratedGradients(const GradientFn& f, const std::vector<double>& x,
                                        const std::vector<double>& baseline, int steps) {
  if (x.size() != baseline.size()) throw InvalidArgument("input and baseline differ in length");
  if (steps < 1) throw InvalidArgument("integration needs at least one step");
  const std::size_t n = x.size();
  std::vector<double> sum(n, 0.0);
  std::vector<double> point(n);
  std::vector<double> grad;
  for (int k = 0; k < steps; ++k) {
    const double alpha = (k + 0.5) / steps;
    for (std::size_t i = 0; i < n; ++i) point[i] = baseline[i] + alpha * (x[i] - baseline[i]);
    grad.assign(n, 0.0);
    f(point, grad);
    if (grad.size() != n) throw InvalidArgument("gradient has the wrong length");
    for (std::size_t i = 0; i < n; ++i) sum[i] += grad[i];
  }
  for (std::size_t i = 0; i < n; ++i) sum[i] = (x[i] - baseline[i]) * sum[i] / steps;
  return sum;
}

std::vector<double> branchAggregate(const std::vector<double>& perFeature, int branches, int features) {
  if (branches < 1 || features < 1 || perFeature.size() != static_cast<std::size_t>(branches) * features)
    throw InvalidArgument("attribution length does not match branches x features");
  std::vector<double> s(static_cast<std::size_t>(branches), 0.0);
  for (int b = 0; b < branches; ++b)
    for (int j = 0; j < features; ++j) s[b] += perFeature[static_cast<std::size_t>(b) * features + j];
  return s;
}

double mostInformativeSlice(const std::vector<double>& scores, const std::vector<double>& positions) {
  if (scores.empty() || scores.size() != positions.size())
    throw InvalidArgument("scores and positions must be non-empty and of equal length");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double s = std::max(0.0, scores[i]);
    num += s * positions[i];
    den += s;
  }
  if (den > 0.0) return num / den;
  std::vector<double> p = positions;
  std::sort(p.begin(), p.end());
  const std::size_t mid = p.size() / 2;
  return p.size() % 2 ? p[mid] : 0.5 * (p[mid - 1] + p[mid]);
}

double AttributionResult::completenessError() const {
  double total = 0.0;
  for (double v : perFeature) total += v;
  const double delta = output - baselineOutput;
  const double gap = std::abs(total - delta);
  return delta == 0.0 ? gap : gap / std::abs(delta);
}

AttributionResult attributeFusionInput(const MultiBranchRegressor<double>& model, const std::vector<double>& fusionInput,
                                       const std::vector<double>& positions, int steps) {
  const int branches = model.config().branches;
  const int features = model.config().branch.features;
  if (static_cast<int>(positions.size()) != branches) throw InvalidArgument("one slice position per branch required");
  const double scale = model.config().targetScale;
  const GradientFn f = [&](const std::vector<double>& x, std::vector<double>& grad) {
    const double y = model.fusion.inputGradient(x, grad);
    for (double& g : grad) g *= scale;
    return model.toTarget(y);
  };
  const std::vector<double> zero(fusionInput.size(), 0.0);
  AttributionResult r;
  r.perFeature = integratedGradients(f, fusionInput, zero, steps);
  r.branchScores = branchAggregate(r.perFeature, branches, features);
  r.positions = positions;
  r.center = mostInformativeSlice(r.branchScores, positions);
  r.output = model.toTarget(model.fusion.forward(fusionInput, Mode::Eval, nullptr));
  r.baselineOutput = model.toTarget(model.fusion.forward(zero, Mode::Eval, nullptr));
  return r;
}

AttributionResult attributeFusion(const MultiBranchRegressor<double>& model, const std::vector<const float*>& slices,
                                  const std::vector<double>& positions, int steps) {
  return attributeFusionInput(model, model.branchFeatures(slices), positions, steps);
}

std::vector<std::vector<double>> pixelAttributions(const MultiBranchRegressor<double>& model,
                                                   const std::vector<const float*>& slices, int steps) {
  const int branches = model.config().branches;
  if (static_cast<int>(slices.size()) != branches) throw InvalidArgument("one slice per branch required");
  if (steps < 1) throw InvalidArgument("integration needs at least one step");
  const std::size_t pixels = static_cast<std::size_t>(model.config().branch.inputSize) * model.config().branch.inputSize;
  const std::size_t nf = static_cast<std::size_t>(model.config().branch.features);
  MultiBranchRegressor<double> work = model;
  std::vector<std::vector<double>> sum(static_cast<std::size_t>(branches), std::vector<double>(pixels, 0.0));
  std::vector<BranchNet<double>::Trace> traces(static_cast<std::size_t>(branches));
  for (int k = 0; k < steps; ++k) {
    const double alpha = (k + 0.5) / steps;
    std::vector<double> x;
    for (int b = 0; b < branches; ++b) {
      std::vector<double> in(pixels);
      for (std::size_t i = 0; i < pixels; ++i) in[i] = alpha * slices[b][i];
      work.branches[b].forwardFrom(0, in, traces[b]);
      x.insert(x.end(), traces[b].features.begin(), traces[b].features.end());
    }
    FusionNet<double>::Trace ft;
    work.fusion.forward(x, Mode::Eval, nullptr, &ft);
    const std::vector<double> dx = work.fusion.inputBackward(ft, work.config().targetScale);
    for (int b = 0; b < branches; ++b) {
      const std::vector<double> df(dx.begin() + static_cast<std::ptrdiff_t>(b * nf),
                                   dx.begin() + static_cast<std::ptrdiff_t>((b + 1) * nf));
      std::vector<double> dIn;
      work.branches[b].backward(traces[b], 0, df, 0, &dIn);
      for (std::size_t i = 0; i < pixels; ++i) sum[b][i] += dIn[i];
    }
  }
  for (int b = 0; b < branches; ++b)
    for (std::size_t i = 0; i < pixels; ++i) sum[b][i] = slices[b][i] * sum[b][i] / steps;
  return sum;
}

namespace {

void checkMap(const std::vector<double>& map, int rows, int cols) {
  if (rows < 1 || cols < 1 || map.size() != static_cast<std::size_t>(rows) * cols)
    throw InvalidArgument("heatmap size does not match rows x cols");
}

}  // namespace

void writeHeatmapPgm(const std::filesystem::path& path, const std::vector<double>& map, int rows, int cols) {
  checkMap(map, rows, cols);
  const auto [lo, hi] = std::minmax_element(map.begin(), map.end());
  const double range = *hi - *lo;
  std::ofstream out(path);
  if (!out) throw FormatError(FormatError::Kind::Io, "cannot write " + path.string());
  out << "P2\n" << cols << ' ' << rows << "\n255\n";
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double v = map[static_cast<std::size_t>(r) * cols + c];
      const int level = range > 0.0 ? static_cast<int>(std::lround(255.0 * (v - *lo) / range)) : 0;
      out << (c ? " " : "") << level;
    }
    out << '\n';
  }
  if (!out) throw FormatError(FormatError::Kind::Io, "write failed for " + path.string());
}

void writeHeatmapCsv(const std::filesystem::path& path, const std::vector<double>& map, int rows, int cols) {
  checkMap(map, rows, cols);
  std::ofstream out(path);
  if (!out) throw FormatError(FormatError::Kind::Io, "cannot write " + path.string());
  out << std::setprecision(17);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) out << (c ? "," : "") << map[static_cast<std::size_t>(r) * cols + c];
    out << '\n';
  }
  if (!out) throw FormatError(FormatError::Kind::Io, "write failed for " + path.string());
}

}  // namespace mceage
