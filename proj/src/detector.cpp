#include "mceage/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "mceage/error.hpp"

namespace mceage {

std::string nameOf(Laterality laterality) {
  switch (laterality) {
    case Laterality::Left: return "left";
    case Laterality::Right: return "right";
    case Laterality::Unknown: return "unknown";
  }
  return "unknown";
}

Laterality lateralityFromString(std::string_view name) {
  if (name == "left") return Laterality::Left;
  if (name == "right") return Laterality::Right;
  if (name == "unknown") return Laterality::Unknown;
  throw InvalidArgument("unknown laterality '" + std::string(name) + "'");
}

Laterality opposite(Laterality laterality) {
  switch (laterality) {
    case Laterality::Left: return Laterality::Right;
    case Laterality::Right: return Laterality::Left;
    default: return Laterality::Unknown;
  }
}

std::string nameOf(PairRule rule) {
  switch (rule) {
    case PairRule::FastPath: return "fast-path";
    case PairRule::PairX1X2: return "pair-x1-x2";
    case PairRule::PairX1X3: return "pair-x1-x3";
    case PairRule::SingleX1: return "single-x1";
    case PairRule::Empty: return "empty";
  }
  return "empty";
}

void AnatomicalConfig::validate() const {
  if (!(epsilon > 0.0)) throw InvalidArgument("epsilon must be positive");
  if (!(probThreshold > 0.0 && probThreshold < 1.0)) throw InvalidArgument("probability threshold must be in (0,1)");
  if (!(tieBand >= 0.0) || !(endBand >= 0.0)) throw InvalidArgument("bands must be non-negative");
}

EndPoints endPoints(const TriangleMesh& mesh, double band) {
  if (mesh.vertices.empty()) throw InvalidArgument("end points of an empty mesh");
  double lo = mesh.vertices.front().x;
  double hi = lo;
  for (const Vec3& v : mesh.vertices) {
    lo = std::min(lo, v.x);
    hi = std::max(hi, v.x);
  }
  Vec3 sumLo;
  Vec3 sumHi;
  int nLo = 0;
  int nHi = 0;
  for (const Vec3& v : mesh.vertices) {
    if (v.x <= lo + band) {
      sumLo += v;
      ++nLo;
    }
    if (v.x >= hi - band) {
      sumHi += v;
      ++nHi;
    }
  }
  return {sumLo / nLo, sumHi / nHi};
}

Laterality lateralityOf(const TriangleMesh& mesh, const AnatomicalConfig& cfg) {
  if (mesh.vertices.empty()) throw InvalidArgument("laterality of an empty mesh");
  const EndPoints e = endPoints(mesh, cfg.endBand);
  const double diff = e.atXmax.z - e.atXmin.z;
  if (std::abs(diff) < cfg.tieBand) return Laterality::Unknown;
  return diff < 0.0 ? Laterality::Right : Laterality::Left;
}

Vec3 medialPoint(const TriangleMesh& mesh, Laterality laterality, const AnatomicalConfig& cfg) {
  const EndPoints e = endPoints(mesh, cfg.endBand);
  if (laterality == Laterality::Right) return e.atXmax;
  if (laterality == Laterality::Left) return e.atXmin;
  throw InvalidArgument("medial point needs a known laterality");
}

bool checkAnatomicalCompatibility(const TriangleMesh& a, const TriangleMesh& b, const AnatomicalConfig& cfg) {
  const Laterality la = lateralityOf(a, cfg);
  const Laterality lb = lateralityOf(b, cfg);
  if (la == Laterality::Unknown || lb == Laterality::Unknown || la == lb) return false;
  const TriangleMesh& right = la == Laterality::Right ? a : b;
  const TriangleMesh& left = la == Laterality::Right ? b : a;
  const Vec3 mr = medialPoint(right, Laterality::Right, cfg);
  const Vec3 ml = medialPoint(left, Laterality::Left, cfg);
  if (!(mr.x < ml.x)) return false;
  return std::abs(mr.z - ml.z) <= cfg.epsilon;
}

std::vector<int> DetectionResult::selected() const {
  std::vector<int> ids;
  for (const auto& id : {right, left, unassigned})
    if (id) ids.push_back(*id);
  return ids;
}

DetectionResult pairCandidates(const std::vector<DetectionCandidate>& top,
                               const std::function<bool(int, int)>& compatible, const AnatomicalConfig& cfg) {
  const int n = std::min<int>(3, static_cast<int>(top.size()));
  for (int i = 1; i < n; ++i)
    if (top[i].probability > top[i - 1].probability) throw InvalidArgument("candidates must be sorted by probability");
  const auto p = [&](int i) { return i < n ? top[i].probability : 0.0; };
  const auto pairOk = [&](int i, int j) {
    if (j >= n) return false;
    const Laterality a = top[i].laterality;
    const Laterality b = top[j].laterality;
    return a != Laterality::Unknown && b != Laterality::Unknown && a != b && compatible(i, j);
  };
  const auto pairResult = [&](int i, int j, PairRule rule) {
    DetectionResult r;
    r.rule = rule;
    const bool iRight = top[i].laterality == Laterality::Right;
    r.right = top[iRight ? i : j].componentId;
    r.left = top[iRight ? j : i].componentId;
    return r;
  };

  const double t = cfg.probThreshold;
  if (p(1) >= t && p(2) < t && pairOk(0, 1)) return pairResult(0, 1, PairRule::FastPath);
  if (pairOk(0, 1)) return pairResult(0, 1, PairRule::PairX1X2);
  if (pairOk(0, 2)) return pairResult(0, 2, PairRule::PairX1X3);
  DetectionResult r;
  if (n >= 1 && p(0) > t) {
    r.rule = PairRule::SingleX1;
    switch (top[0].laterality) {
      case Laterality::Right: r.right = top[0].componentId; break;
      case Laterality::Left: r.left = top[0].componentId; break;
      case Laterality::Unknown: r.unassigned = top[0].componentId; break;
    }
  }
  return r;
}

DetectionResult pairCandidates(const std::vector<DetectionCandidate>& top, const std::vector<TriangleMesh>& meshes,
                               const AnatomicalConfig& cfg) {
  std::vector<DetectionCandidate> withLaterality = top;
  for (auto& c : withLaterality) {
    if (c.componentId < 0 || c.componentId >= static_cast<int>(meshes.size()))
      throw InvalidArgument("candidate refers to a missing component");
    c.laterality = lateralityOf(meshes[c.componentId], cfg);
  }
  return pairCandidates(
      withLaterality,
      [&](int i, int j) {
        return checkAnatomicalCompatibility(meshes[withLaterality[i].componentId],
                                            meshes[withLaterality[j].componentId], cfg);
      },
      cfg);
}

nlohmann::json toJson(const DetectorModel& model) {
  return {{"format", "mceage-detector"},
          {"version", 1},
          {"ranges", {{"d1", model.ranges.d1}, {"d2", model.ranges.d2}, {"d3", model.ranges.d3}}},
          {"shape_samples", model.shapeSamples},
          {"forest", toJson(model.forest)}};
}

DetectorModel detectorFromJson(const nlohmann::json& j) {
  try {
    if (j.at("format") != "mceage-detector") throw FormatError(FormatError::Kind::MalformedHeader, "not a detector");
    if (j.at("version") != 1) throw FormatError(FormatError::Kind::Version, "unsupported detector version");
    DetectorModel m;
    m.ranges = {j.at("ranges").at("d1"), j.at("ranges").at("d2"), j.at("ranges").at("d3")};
    m.shapeSamples = j.at("shape_samples");
    m.forest = forestFromJson(j.at("forest"));
    if (m.forest.nFeatures != kFeatureLength)
      throw FormatError(FormatError::Kind::SizeMismatch, "detector forest has the wrong feature count");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::MalformedHeader, std::string("detector model: ") + e.what());
  }
}

void saveDetector(const std::filesystem::path& path, const DetectorModel& model) {
  std::ofstream out(path);
  if (!out) throw FormatError(FormatError::Kind::Io, "cannot write " + path.string());
  out << toJson(model).dump() << '\n';
  if (!out) throw FormatError(FormatError::Kind::Io, "write failed for " + path.string());
}

DetectorModel loadDetector(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(FormatError::Kind::Io, "cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::MalformedHeader, std::string("detector model: ") + e.what());
  }
  return detectorFromJson(j);
}

DescriptorRanges rangesFromMeshes(const std::vector<TriangleMesh>& meshes) {
  if (meshes.empty()) throw InvalidArgument("no meshes to derive descriptor ranges from");
  std::vector<DescriptorRanges> per;
  per.reserve(meshes.size());
  for (const auto& m : meshes) per.push_back(analyticRanges(m));
  return trainingRanges(per);
}

std::vector<FeatureVector> componentFeatures(const std::vector<TriangleMesh>& components, const DescriptorRanges& ranges,
                                             std::uint64_t seed, int shapeSamples) {
  std::vector<FeatureVector> out;
  out.reserve(components.size());
  for (std::size_t c = 0; c < components.size(); ++c)
    out.push_back(featureVector(components[c], ranges, deriveSeed(seed, c), shapeSamples));
  return out;
}

DetectorModel trainDetector(const std::vector<FeatureVector>& rows, const std::vector<int>& labels,
                            const DescriptorRanges& ranges, std::uint64_t seed, const ForestConfig& forest,
                            int shapeSamples) {
  DetectorModel m;
  m.ranges = ranges;
  m.shapeSamples = shapeSamples;
  m.forest = trainForest(rows, labels, seed, forest);
  return m;
}

SceneDetection detectClavicles(const std::vector<TriangleMesh>& components, const std::vector<FeatureVector>& features,
                               const DetectorModel& model, const AnatomicalConfig& cfg) {
  if (components.size() != features.size()) throw InvalidArgument("one feature vector per component is required");
  SceneDetection out;
  for (std::size_t c = 0; c < components.size(); ++c) {
    out.scores.push_back({static_cast<int>(c), predictProbability(model.forest, features[c]),
                          lateralityOf(components[c], cfg)});
  }
  std::vector<ComponentScore> ranked = out.scores;
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const ComponentScore& a, const ComponentScore& b) { return a.probability > b.probability; });
  std::vector<DetectionCandidate> top;
  for (std::size_t i = 0; i < std::min<std::size_t>(3, ranked.size()); ++i)
    top.push_back({ranked[i].componentId, ranked[i].probability, ranked[i].laterality});
  out.result = pairCandidates(top, components, cfg);
  return out;
}

AverageClavicle buildAverageClavicle(const std::vector<FeatureVector>& clavicles,
                                     const std::vector<FeatureVector>& allTraining, const DescriptorRanges& ranges) {
  if (clavicles.empty()) throw InvalidArgument("average clavicle needs at least one example");
  if (allTraining.size() < 2) throw InvalidArgument("scalar standardization needs at least two rows");
  AverageClavicle avg;
  avg.ranges = ranges;
  avg.mean.assign(kFeatureLength, 0.0);
  for (const FeatureVector& fv : clavicles) {
    if (fv.size() != static_cast<std::size_t>(kFeatureLength)) throw InvalidArgument("feature vector has wrong length");
    for (int i = 0; i < kFeatureLength; ++i) avg.mean[i] += fv[i] / static_cast<double>(clavicles.size());
  }
  const int base = 4 * kShapeBins;
  for (int s = 0; s < kGeometricScalars; ++s) {
    double sum = 0.0;
    for (const FeatureVector& fv : allTraining) sum += fv.at(base + s);
    const double mu = sum / static_cast<double>(allTraining.size());
    double ss = 0.0;
    for (const FeatureVector& fv : allTraining) ss += (fv[base + s] - mu) * (fv[base + s] - mu);
    avg.scalarMean[s] = mu;
    avg.scalarStd[s] = std::sqrt(ss / static_cast<double>(allTraining.size() - 1));
    if (!(avg.scalarStd[s] > 0.0)) avg.scalarStd[s] = 1.0;
  }
  return avg;
}

double distanceToAverage(const FeatureVector& fv, const AverageClavicle& avg) {
  double d = 0.0;
  for (ShapeKind kind : {ShapeKind::A3, ShapeKind::D1, ShapeKind::D2, ShapeKind::D3})
    d += wassersteinDistance(distributionOf(fv, kind, avg.ranges), distributionOf(avg.mean, kind, avg.ranges));
  const int base = 4 * kShapeBins;
  double ss = 0.0;
  for (int s = 0; s < kGeometricScalars; ++s) {
    const double diff = (fv[base + s] - avg.mean[base + s]) / avg.scalarStd[s];
    ss += diff * diff;
  }
  return d + std::sqrt(ss);
}

std::array<int, 2> baselineDistanceDetect(const std::vector<FeatureVector>& components, const AverageClavicle& avg) {
  if (components.size() < 2) throw InvalidArgument("baseline needs at least two components");
  std::vector<std::pair<double, int>> d;
  for (std::size_t c = 0; c < components.size(); ++c)
    d.push_back({distanceToAverage(components[c], avg), static_cast<int>(c)});
  std::partial_sort(d.begin(), d.begin() + 2, d.end());
  return {d[0].second, d[1].second};
}

}  // namespace mceage
