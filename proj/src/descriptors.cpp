#include "mceage/descriptors.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include "mceage/error.hpp"

namespace mceage {

std::string nameOf(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::A3: return "A3";
    case ShapeKind::D1: return "D1";
    case ShapeKind::D2: return "D2";
    case ShapeKind::D3: return "D3";
  }
  return "?";
}

double DescriptorRanges::upper(ShapeKind kind) const {
  switch (kind) {
    case ShapeKind::A3: return std::numbers::pi;
    case ShapeKind::D1: return d1;
    case ShapeKind::D2: return d2;
    case ShapeKind::D3: return d3;
  }
  return 0.0;
}

SurfaceSampler::SurfaceSampler(const TriangleMesh& mesh) : mesh_(mesh) {
  if (mesh.empty()) throw InvalidArgument("cannot sample an empty mesh");
  cumulative_.reserve(mesh.triangles.size());
  double total = 0.0;
  for (const auto& t : mesh.triangles) {
    const Vec3& a = mesh.vertices[t[0]];
    total += 0.5 * norm(cross(mesh.vertices[t[1]] - a, mesh.vertices[t[2]] - a));
    cumulative_.push_back(total);
  }
  if (!(total > 0.0)) throw InvalidArgument("mesh has zero surface area");
}

Vec3 SurfaceSampler::pointAt(double pick, double u, double v) const {
  const double target = pick * cumulative_.back();
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), target);
  if (it == cumulative_.end()) --it;
  const auto& t = mesh_.triangles[static_cast<std::size_t>(it - cumulative_.begin())];
  const double su = std::sqrt(u);
  const Vec3& a = mesh_.vertices[t[0]];
  const Vec3& b = mesh_.vertices[t[1]];
  const Vec3& c = mesh_.vertices[t[2]];
  return (1.0 - su) * a + (su * (1.0 - v)) * b + (su * v) * c;
}

double angleAt(const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 u = a - b;
  const Vec3 w = c - b;
  return std::atan2(norm(cross(u, w)), dot(u, w));
}

std::vector<double> sampleShapeValues(const TriangleMesh& mesh, ShapeKind kind, int nSamples, std::uint64_t seed) {
  if (nSamples <= 0) throw InvalidArgument("sample count must be positive");
  const SurfaceSampler sampler(mesh);
  std::mt19937_64 rng(deriveSeed(seed, static_cast<std::uint64_t>(kind)));
  const Vec3 centroid = areaCentroid(mesh);
  std::vector<double> values(static_cast<std::size_t>(nSamples));
  for (double& value : values) {
    switch (kind) {
      case ShapeKind::A3: {
        const Vec3 a = sampler.sample(rng);
        const Vec3 b = sampler.sample(rng);
        value = angleAt(a, b, sampler.sample(rng));
        break;
      }
      case ShapeKind::D1: value = norm(sampler.sample(rng) - centroid); break;
      case ShapeKind::D2: {
        const Vec3 a = sampler.sample(rng);
        value = norm(sampler.sample(rng) - a);
        break;
      }
      case ShapeKind::D3: {
        const Vec3 a = sampler.sample(rng);
        const Vec3 b = sampler.sample(rng);
        value = std::sqrt(0.5 * norm(cross(b - a, sampler.sample(rng) - a)));
        break;
      }
    }
  }
  return values;
}

ShapeDistribution sampleShapeDistribution(const TriangleMesh& mesh, ShapeKind kind, double upper, int nSamples,
                                          std::uint64_t seed) {
  if (!(upper > 0.0) || !std::isfinite(upper)) throw InvalidArgument("histogram range must be positive");
  ShapeDistribution dist;
  dist.kind = kind;
  dist.lo = 0.0;
  dist.hi = upper;
  dist.nSamples = nSamples;
  dist.seed = seed;
  std::vector<std::int64_t> counts(kShapeBins, 0);
  for (double value : sampleShapeValues(mesh, kind, nSamples, seed)) {
    const double pos = value / upper * kShapeBins;
    const int bin = pos >= kShapeBins ? kShapeBins - 1 : std::max(0, static_cast<int>(pos));
    ++counts[static_cast<std::size_t>(bin)];
  }
  dist.bins.resize(kShapeBins);
  for (int b = 0; b < kShapeBins; ++b) dist.bins[b] = static_cast<double>(counts[b]) / nSamples;
  return dist;
}

DescriptorRanges analyticRanges(const TriangleMesh& mesh) {
  if (mesh.empty()) throw InvalidArgument("empty mesh");
  const Vec3 c = areaCentroid(mesh);
  double r = 0.0;
  for (const auto& t : mesh.triangles)
    for (auto v : t) r = std::max(r, norm(mesh.vertices[v] - c));
  return {r, 2.0 * r, std::sqrt(3.0 * std::sqrt(3.0) / 4.0) * r};
}

DescriptorRanges trainingRanges(const std::vector<DescriptorRanges>& perMesh) {
  if (perMesh.empty()) throw InvalidArgument("no meshes to derive histogram ranges from");
  DescriptorRanges out{0.0, 0.0, 0.0};
  for (const auto& r : perMesh) {
    out.d1 = std::max(out.d1, r.d1);
    out.d2 = std::max(out.d2, r.d2);
    out.d3 = std::max(out.d3, r.d3);
  }
  out.d1 *= 1.1;
  out.d2 *= 1.1;
  out.d3 *= 1.1;
  return out;
}

GeometricFeatures geometricFeatures(const TriangleMesh& mesh) {
  if (!isWatertight(mesh)) throw InvalidArgument("geometric features need a watertight mesh");
  GeometricFeatures g;
  g.area = surfaceArea(mesh);
  g.volume = enclosedVolume(mesh);
  if (!(g.area > 0.0) || !(g.volume > 0.0)) throw NumericError("mesh encloses no positive volume");
  g.normalizedShapeIndex = std::pow(g.area, 1.5) / (6.0 * std::sqrt(std::numbers::pi) * g.volume);
  g.areaToVolume = g.area / g.volume;
  const Extents e = obbExtents(mesh);
  g.lengthToWidth = e.width > 0.0 ? e.length / e.width : 0.0;
  g.sphericity = std::cbrt(std::numbers::pi) * std::pow(6.0 * g.volume, 2.0 / 3.0) / g.area;
  return g;
}

FeatureVector featureVector(const TriangleMesh& mesh, const DescriptorRanges& ranges, std::uint64_t seed,
                            int nSamples) {
  const GeometricFeatures g = geometricFeatures(mesh);
  FeatureVector fv;
  fv.reserve(kFeatureLength);
  for (ShapeKind kind : {ShapeKind::A3, ShapeKind::D1, ShapeKind::D2, ShapeKind::D3}) {
    const ShapeDistribution d = sampleShapeDistribution(mesh, kind, ranges.upper(kind), nSamples, seed);
    fv.insert(fv.end(), d.bins.begin(), d.bins.end());
  }
  fv.insert(fv.end(), {g.area, g.volume, g.normalizedShapeIndex, g.areaToVolume, g.lengthToWidth, g.sphericity});
  return fv;
}

ShapeDistribution distributionOf(const FeatureVector& fv, ShapeKind kind, const DescriptorRanges& ranges) {
  if (fv.size() != static_cast<std::size_t>(kFeatureLength)) throw InvalidArgument("feature vector has wrong length");
  ShapeDistribution d;
  d.kind = kind;
  d.hi = ranges.upper(kind);
  const auto begin = fv.begin() + static_cast<std::ptrdiff_t>(static_cast<int>(kind) * kShapeBins);
  d.bins.assign(begin, begin + kShapeBins);
  return d;
}

GeometricFeatures geometricOf(const FeatureVector& fv) {
  if (fv.size() != static_cast<std::size_t>(kFeatureLength)) throw InvalidArgument("feature vector has wrong length");
  const double* g = fv.data() + 4 * kShapeBins;
  return {g[0], g[1], g[2], g[3], g[4], g[5]};
}

double wassersteinDistance(const ShapeDistribution& a, const ShapeDistribution& b) {
  if (a.kind != b.kind) throw InvalidArgument("cannot compare distributions of different kinds");
  if (a.bins.size() != b.bins.size() || a.lo != b.lo || a.hi != b.hi)
    throw InvalidArgument("distributions use different binning");
  double ca = 0.0;
  double cb = 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < a.bins.size(); ++i) {
    ca += a.bins[i];
    cb += b.bins[i];
    sum += std::abs(ca - cb);
  }
  return sum * a.binWidth();
}

void writeFeatureCsv(const std::filesystem::path& path, const LabeledFeatures& data) {
  if (data.rows.size() != data.componentIds.size() || data.rows.size() != data.labels.size())
    throw InvalidArgument("feature table columns disagree in length");
  std::ofstream out(path);
  if (!out) throw FormatError(FormatError::Kind::Io, "cannot write " + path.string());
  for (int c = 0; c < kFeatureLength; ++c) out << 'f' << c << ',';
  out << "component_id,label\n";
  out << std::setprecision(17);
  for (std::size_t r = 0; r < data.rows.size(); ++r) {
    if (data.rows[r].size() != static_cast<std::size_t>(kFeatureLength))
      throw InvalidArgument("feature vector has wrong length");
    for (double v : data.rows[r]) out << v << ',';
    out << data.componentIds[r] << ',' << data.labels[r] << '\n';
  }
  if (!out) throw FormatError(FormatError::Kind::Io, "write failed for " + path.string());
}

LabeledFeatures readFeatureCsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(FormatError::Kind::Io, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(FormatError::Kind::MalformedHeader, "empty feature file");
  LabeledFeatures data;
  int lineNo = 1;
  while (std::getline(in, line)) {
    ++lineNo;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != static_cast<std::size_t>(kFeatureLength + 2))
      throw FormatError(FormatError::Kind::SizeMismatch, "line " + std::to_string(lineNo) + ": wrong column count");
    FeatureVector fv(kFeatureLength);
    try {
      for (int c = 0; c < kFeatureLength; ++c) fv[c] = std::stod(cells[c]);
      const int label = std::stoi(cells.back());
      if (label != 0 && label != 1) throw std::invalid_argument("label");
      data.labels.push_back(label);
    } catch (const std::logic_error&) {
      throw FormatError(FormatError::Kind::ValueRange, "line " + std::to_string(lineNo) + ": bad number");
    }
    data.rows.push_back(std::move(fv));
    data.componentIds.push_back(cells[kFeatureLength]);
  }
  return data;
}

}  // namespace mceage
