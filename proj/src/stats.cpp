#include "mceage/stats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "mceage/error.hpp"
#include "mceage/random.hpp"

namespace mceage {

namespace {

void checkPaired(const std::vector<double>& a, const std::vector<double>& b, std::size_t minSize) {
  if (a.size() != b.size()) throw InvalidArgument("paired inputs differ in length");
  if (a.size() < minSize) throw InvalidArgument("not enough observations");
}

std::vector<double> differences(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return d;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

std::size_t pick(std::mt19937_64& rng, std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)));
}

ConfidenceInterval bootstrapMean(const std::vector<double>& v, int resamples, std::uint64_t seed) {
  if (v.empty()) throw InvalidArgument("cannot bootstrap an empty sample");
  if (resamples < 1) throw InvalidArgument("resample count must be positive");
  std::mt19937_64 rng(seed);
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (double& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) s += v[pick(rng, v.size())];
    m = s / static_cast<double>(v.size());
  }
  std::sort(means.begin(), means.end());
  return {quantileSorted(means, 0.025), quantileSorted(means, 0.975)};
}

std::string cell(const std::optional<double>& v) {
  if (!v) return "null";
  std::ostringstream s;
  s << std::setprecision(17) << *v;
  return s.str();
}

std::optional<double> parseCell(const std::string& s) {
  if (s == "null") return std::nullopt;
  return std::stod(s);
}

nlohmann::json optionalJson(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> optionalFrom(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

std::vector<double> absoluteErrors(const std::vector<double>& preds, const std::vector<double>& truths) {
  checkPaired(preds, truths, 1);
  std::vector<double> e(preds.size());
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = std::abs(preds[i] - truths[i]);
  return e;
}

double meanAbsoluteError(const std::vector<double>& preds, const std::vector<double>& truths) {
  return mean(absoluteErrors(preds, truths));
}

MaeR2 maeAndR2(const std::vector<double>& preds, const std::vector<double>& truths) {
  checkPaired(preds, truths, 1);
  const double mu = mean(truths);
  double ssRes = 0.0;
  double ssTot = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    ssRes += (preds[i] - truths[i]) * (preds[i] - truths[i]);
    ssTot += (truths[i] - mu) * (truths[i] - mu);
  }
  if (!(ssTot > 0.0)) throw InvalidArgument("R2 is undefined for constant truths");
  return {meanAbsoluteError(preds, truths), 1.0 - ssRes / ssTot};
}

double empiricalCoverage(const std::vector<double>& preds, const std::vector<double>& truths, double d) {
  checkPaired(preds, truths, 1);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (std::abs(preds[i] - truths[i]) <= d) ++hit;
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

std::vector<CoverageRow> coverageTable(const std::vector<double>& fusedAges, const std::vector<double>& truths,
                                       const ConformalCalibrator& calibrator, const std::vector<double>& betas,
                                       double threshold) {
  checkPaired(fusedAges, truths, 1);
  if (!std::is_sorted(betas.begin(), betas.end())) throw InvalidArgument("betas must be sorted ascending");
  std::vector<CoverageRow> rows;
  for (double beta : betas) {
    CoverageRow r;
    r.beta = beta;
    r.d = calibrator.d(beta);
    for (std::size_t i = 0; i < fusedAges.size(); ++i) {
      const bool predicted = minimumAgeDecision(interval(fusedAges[i], r.d), threshold) == AgeDecision::Adult;
      const bool actual = truths[i] >= threshold;
      if (predicted && actual) ++r.tp;
      else if (predicted) ++r.fp;
      else if (actual) ++r.fn;
      else ++r.tn;
    }
    const auto rate = [&](int num, int den, const char* name) -> std::optional<double> {
      if (den == 0) {
        r.undefined.push_back(name);
        return std::nullopt;
      }
      return static_cast<double>(num) / den;
    };
    r.ppv = rate(r.tp, r.tp + r.fp, "ppv");
    r.sensitivity = rate(r.tp, r.tp + r.fn, "sensitivity");
    r.specificity = rate(r.tn, r.tn + r.fp, "specificity");
    r.accuracy = rate(r.tp + r.tn, r.tp + r.tn + r.fp + r.fn, "accuracy");
    rows.push_back(std::move(r));
  }
  return rows;
}

void writeCoverageCsv(const std::filesystem::path& path, const std::vector<CoverageRow>& rows) {
  std::ofstream out(path);
  if (!out) throw FormatError(FormatError::Kind::Io, "cannot write " + path.string());
  out << "beta,d,ppv,sensitivity,specificity,accuracy,tp,fp,tn,fn,undefined\n";
  for (const auto& r : rows) {
    std::string flags;
    for (const auto& u : r.undefined) flags += (flags.empty() ? "" : ";") + u;
    out << cell(r.beta) << ',' << cell(r.d) << ',' << cell(r.ppv) << ',' << cell(r.sensitivity) << ','
        << cell(r.specificity) << ',' << cell(r.accuracy) << ',' << r.tp << ',' << r.fp << ',' << r.tn << ',' << r.fn
        << ',' << flags << '\n';
  }
  if (!out) throw FormatError(FormatError::Kind::Io, "write failed for " + path.string());
}

std::vector<CoverageRow> readCoverageCsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(FormatError::Kind::Io, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "beta,d,ppv,sensitivity,specificity,accuracy,tp,fp,tn,fn,undefined")
    throw FormatError(FormatError::Kind::MalformedHeader, path.string() + ": unexpected coverage header");
  std::vector<CoverageRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (cells.size() == 10) cells.emplace_back();
    if (cells.size() != 11) throw FormatError(FormatError::Kind::SizeMismatch, "coverage row has the wrong width");
    try {
      CoverageRow r;
      r.beta = std::stod(cells[0]);
      r.d = std::stod(cells[1]);
      r.ppv = parseCell(cells[2]);
      r.sensitivity = parseCell(cells[3]);
      r.specificity = parseCell(cells[4]);
      r.accuracy = parseCell(cells[5]);
      r.tp = std::stoi(cells[6]);
      r.fp = std::stoi(cells[7]);
      r.tn = std::stoi(cells[8]);
      r.fn = std::stoi(cells[9]);
      std::stringstream fs(cells[10]);
      std::string f;
      while (std::getline(fs, f, ';'))
        if (!f.empty()) r.undefined.push_back(f);
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw FormatError(FormatError::Kind::ValueRange, "coverage row has a bad number");
    }
  }
  return rows;
}

nlohmann::json toJson(const CoverageRow& r) {
  return {{"beta", r.beta},
          {"d", r.d},
          {"ppv", optionalJson(r.ppv)},
          {"sensitivity", optionalJson(r.sensitivity)},
          {"specificity", optionalJson(r.specificity)},
          {"accuracy", optionalJson(r.accuracy)},
          {"tp", r.tp},
          {"fp", r.fp},
          {"tn", r.tn},
          {"fn", r.fn},
          {"undefined", r.undefined}};
}

CoverageRow coverageRowFromJson(const nlohmann::json& j) {
  CoverageRow r;
  r.beta = j.at("beta");
  r.d = j.at("d");
  r.ppv = optionalFrom(j.at("ppv"));
  r.sensitivity = optionalFrom(j.at("sensitivity"));
  r.specificity = optionalFrom(j.at("specificity"));
  r.accuracy = optionalFrom(j.at("accuracy"));
  r.tp = j.at("tp");
  r.fp = j.at("fp");
  r.tn = j.at("tn");
  r.fn = j.at("fn");
  r.undefined = j.at("undefined").get<std::vector<std::string>>();
  return r;
}

double quantileSorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw InvalidArgument("quantile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("quantile level must lie in [0, 1]");
  const double h = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

ConfidenceInterval bootstrapCiMae(const std::vector<double>& absErrors, int resamples, std::uint64_t seed) {
  return bootstrapMean(absErrors, resamples, seed);
}

ConfidenceInterval bootstrapCiMeanDifference(const std::vector<double>& a, const std::vector<double>& b, int resamples,
                                             std::uint64_t seed) {
  checkPaired(a, b, 1);
  return bootstrapMean(differences(a, b), resamples, seed);
}

double pairedPermutationTest(const std::vector<double>& errA, const std::vector<double>& errB, int permutations,
                             std::uint64_t seed) {
  checkPaired(errA, errB, 2);
  if (permutations < 1) throw InvalidArgument("permutation count must be positive");
  const std::vector<double> d = differences(errA, errB);
  const double n = static_cast<double>(d.size());
  double observed = 0.0;
  for (double x : d) observed += x;
  observed = std::abs(observed) / n;
  double scale = 0.0;
  for (double x : d) scale += std::abs(x);
  const double tol = 1e-12 * scale / n;
  std::mt19937_64 rng(seed);
  long count = 0;
  for (int p = 0; p < permutations; ++p) {
    double s = 0.0;
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (i % 64 == 0) bits = rng();
      s += (bits & 1u) ? d[i] : -d[i];
      bits >>= 1;
    }
    if (std::abs(s) / n >= observed - tol) ++count;
  }
  return static_cast<double>(count + 1) / static_cast<double>(permutations + 1);
}

double cohenDPaired(const std::vector<double>& errA, const std::vector<double>& errB) {
  checkPaired(errA, errB, 2);
  const std::vector<double> d = differences(errA, errB);
  const double mu = mean(d);
  double ss = 0.0;
  for (double x : d) ss += (x - mu) * (x - mu);
  const double sd = std::sqrt(ss / static_cast<double>(d.size() - 1));
  if (!(sd > 1e-12 * std::max(1.0, std::abs(mu)))) throw InvalidArgument("Cohen's d is undefined for constant differences");
  return mu / sd;
}

double hodgesLehmann(const std::vector<double>& errA, const std::vector<double>& errB) {
  checkPaired(errA, errB, 1);
  const std::vector<double> d = differences(errA, errB);
  std::vector<double> walsh;
  walsh.reserve(d.size() * (d.size() + 1) / 2);
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = i; j < d.size(); ++j) walsh.push_back(0.5 * (d[i] + d[j]));
  return median(std::move(walsh));
}

double medianDifference(const std::vector<double>& errA, const std::vector<double>& errB) {
  checkPaired(errA, errB, 1);
  return median(differences(errA, errB));
}

PairedComparison comparePaired(const std::vector<double>& errA, const std::vector<double>& errB, int resamples,
                               std::uint64_t seed) {
  checkPaired(errA, errB, 2);
  PairedComparison c;
  c.n = static_cast<int>(errA.size());
  c.meanDiff = mean(differences(errA, errB));
  c.bootCi95 = bootstrapCiMeanDifference(errA, errB, resamples, deriveSeed(seed, 1));
  c.pValue = pairedPermutationTest(errA, errB, resamples, deriveSeed(seed, 2));
  try {
    c.cohenD = cohenDPaired(errA, errB);
  } catch (const InvalidArgument&) {
    c.cohenD.reset();
  }
  c.hodgesLehmann = hodgesLehmann(errA, errB);
  c.medianDifference = medianDifference(errA, errB);
  return c;
}

nlohmann::json toJson(const PairedComparison& c) {
  return {{"n", c.n},
          {"mean_diff", c.meanDiff},
          {"boot_ci95", {c.bootCi95.lo, c.bootCi95.hi}},
          {"p_value", c.pValue},
          {"cohen_d", optionalJson(c.cohenD)},
          {"hodges_lehmann", c.hodgesLehmann},
          {"median_difference", c.medianDifference}};
}

bool AgeBand::contains(double age) const {
  const bool aboveLo = loInclusive ? age >= lo : age > lo;
  const bool belowHi = hiInclusive ? age <= hi : age < hi;
  return aboveLo && belowHi;
}

const std::vector<AgeBand>& reportAgeBands() {
  static const std::vector<AgeBand> bands{{"[14,17)", 14.0, 17.0, true, false},
                                          {"[17,25]", 17.0, 25.0, true, true},
                                          {"(25,26)", 25.0, 26.0, false, false}};
  return bands;
}

EvalReport evaluate(const std::vector<double>& preds, const std::vector<double>& truths, int resamples,
                    std::uint64_t seed) {
  checkPaired(preds, truths, 1);
  EvalReport r;
  r.n = static_cast<int>(preds.size());
  const std::vector<double> errors = absoluteErrors(preds, truths);
  r.mae = mean(errors);
  try {
    r.r2 = maeAndR2(preds, truths).r2;
  } catch (const InvalidArgument&) {
    r.r2.reset();
  }
  r.maeCi95 = bootstrapCiMae(errors, resamples, seed);
  for (const auto& band : reportAgeBands()) {
    BandError b;
    b.band = band.label;
    double sum = 0.0;
    for (std::size_t i = 0; i < truths.size(); ++i)
      if (band.contains(truths[i])) {
        sum += errors[i];
        ++b.n;
      }
    if (b.n > 0) b.mae = sum / b.n;
    r.perAgeBand.push_back(b);
  }
  return r;
}

nlohmann::json toJson(const EvalReport& r) {
  nlohmann::json bands = nlohmann::json::array();
  for (const auto& b : r.perAgeBand) bands.push_back({{"band", b.band}, {"n", b.n}, {"mae", optionalJson(b.mae)}});
  return {{"n", r.n},
          {"mae", r.mae},
          {"r2", optionalJson(r.r2)},
          {"mae_ci95", {r.maeCi95.lo, r.maeCi95.hi}},
          {"per_age_band", bands}};
}

EvalReport evalReportFromJson(const nlohmann::json& j) {
  EvalReport r;
  r.n = j.at("n");
  r.mae = j.at("mae");
  r.r2 = optionalFrom(j.at("r2"));
  r.maeCi95 = {j.at("mae_ci95").at(0).get<double>(), j.at("mae_ci95").at(1).get<double>()};
  for (const auto& b : j.at("per_age_band"))
    r.perAgeBand.push_back({b.at("band").get<std::string>(), b.at("n").get<int>(), optionalFrom(b.at("mae"))});
  return r;
}

}  // namespace mceage
