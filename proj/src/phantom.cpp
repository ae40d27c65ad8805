#include "mceage/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <numbers>
#include <random>

#include "mceage/error.hpp"
#include "mceage/random.hpp"
#include "mceage/roi.hpp"

namespace mceage {

namespace {

constexpr double kShaftHu = 900.0;
constexpr double kCapHu = 700.0;
constexpr double kGapHu = 100.0;
constexpr double kSoftTissueHu = 40.0;
constexpr double kSternumHu = 150.0;
constexpr double kRibHu = 850.0;
constexpr double kTubeHu = 950.0;
constexpr double kBlobHu = 800.0;
constexpr double kBoneThreshold = 300.0;
constexpr double kClavicleClearance = 10.0;
constexpr double kDistractorClearance = 4.0;
constexpr int kAxisPoints = 121;
constexpr double kTaperLength = 18.0;

double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

double smoothstep(double w) {
  w = std::clamp(w, 0.0, 1.0);
  return w * w * (3.0 - 2.0 * w);
}

struct Sample {
  bool inside = false;
  double hu = 0.0;
  double margin = 0.0;  // lower bound on the distance to the nearest material boundary
};

class Solid {
 public:
  virtual ~Solid() = default;
  virtual Sample eval(const Vec3& p) const = 0;
  AxisBox bounds;
  int label = 0;
};

bool insideBox(const AxisBox& b, const Vec3& p, double pad) {
  return p.x >= b.min.x - pad && p.x <= b.max.x + pad && p.y >= b.min.y - pad && p.y <= b.max.y + pad &&
         p.z >= b.min.z - pad && p.z <= b.max.z + pad;
}

// Nearest point on a polyline, searched over segments [lo, hi).
struct Projection {
  int segment = 0;
  double t = 0.0;  // unclamped segment parameter
  double dist2 = std::numeric_limits<double>::infinity();
};

Projection project(const std::vector<Vec3>& pts, const Vec3& p, int lo, int hi) {
  Projection best;
  for (int s = lo; s < hi; ++s) {
    const Vec3 a = pts[s];
    const Vec3 ab = pts[s + 1] - a;
    const double t = dot(p - a, ab) / dot(ab, ab);
    const Vec3 q = a + std::clamp(t, 0.0, 1.0) * ab;
    const double d2 = dot(p - q, p - q);
    if (d2 < best.dist2) best = {s, t, d2};
  }
  return best;
}

class Tube : public Solid {
 public:
  Tube(std::vector<Vec3> pts, double radius, double hu) : pts_(std::move(pts)), radius_(radius), hu_(hu) {
    bounds = AxisBox::empty();
    for (const Vec3& q : pts_) bounds.expand(q);
    bounds.min -= Vec3{radius, radius, radius};
    bounds.max += Vec3{radius, radius, radius};
  }
  Sample eval(const Vec3& p) const override {
    const double d = std::sqrt(project(pts_, p, 0, static_cast<int>(pts_.size()) - 1).dist2);
    return {d <= radius_, hu_, std::abs(d - radius_)};
  }
  const std::vector<Vec3>& points() const { return pts_; }
  double radius() const { return radius_; }

 private:
  std::vector<Vec3> pts_;
  double radius_;
  double hu_;
};

class Ellipsoid : public Solid {
 public:
  Ellipsoid(const Vec3& centre, const Vec3& radii, const std::array<Vec3, 3>& axes)
      : centre_(centre), radii_(radii), axes_(axes) {
    bounds = AxisBox::empty();
    for (int a = 0; a < 3; ++a) {
      double h = 0.0;
      for (int k = 0; k < 3; ++k) h += std::abs(axes_[k][a]) * radii_[k];
      bounds.min[a] = centre[a] - h;
      bounds.max[a] = centre[a] + h;
    }
  }
  Sample eval(const Vec3& p) const override {
    const Vec3 d = p - centre_;
    double r2 = 0.0;
    for (int k = 0; k < 3; ++k) r2 += std::pow(dot(d, axes_[k]) / radii_[k], 2);
    const double rho = std::sqrt(r2);
    const double rmin = std::min({radii_.x, radii_.y, radii_.z});
    return {rho <= 1.0, kBlobHu, std::abs(rho - 1.0) * rmin};
  }
  const Vec3& centre() const { return centre_; }
  double boundingRadius() const { return std::max({radii_.x, radii_.y, radii_.z}); }

 private:
  Vec3 centre_;
  Vec3 radii_;
  std::array<Vec3, 3> axes_;
};

class Slab : public Solid {
 public:
  Slab(const AxisBox& box, double hu) : hu_(hu) { bounds = box; }
  Sample eval(const Vec3& p) const override {
    double m = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) m = std::min({m, std::abs(p[a] - bounds.min[a]), std::abs(p[a] - bounds.max[a])});
    return {insideBox(bounds, p, 0.0), hu_, m};
  }

 private:
  double hu_;
};

struct ClavicleShape {
  Laterality side = Laterality::Right;
  double medialX = 0.0;  // X of the medial face
  double y0 = 0.0;
  double z0 = 0.0;
  double span = 0.0;  // X distance medial to lateral
  double sweep = 0.0;  // posterior displacement of the lateral end
  double rise = 0.0;  // superior displacement of the lateral end
  double ryEnd = 0.0, rzEnd = 0.0, ryShaft = 0.0, rzShaft = 0.0;
  double capLength = 0.0;
  double gap = 0.0;
  // Gap notch in the cross-section, as an ellipse in (v_y, v_z) relative to the end radii.
  double notchY = 0.0, notchZ = 0.0, notchRy = 0.0, notchRz = 0.0;
};

class Clavicle : public Solid {
 public:
  explicit Clavicle(const ClavicleShape& s) : s_(s) {
    const double dir = s.side == Laterality::Right ? -1.0 : 1.0;
    for (int i = 0; i < kAxisPoints; ++i) {
      const double t = static_cast<double>(i) / (kAxisPoints - 1);
      const double bend = 0.5 * (1.0 - std::cos(std::numbers::pi * t));
      pts_.push_back({s.medialX + dir * s.span * t, s.y0 - s.sweep * bend, s.z0 + s.rise * bend});
    }
    cum_.push_back(0.0);
    for (int i = 1; i < kAxisPoints; ++i) cum_.push_back(cum_.back() + norm(pts_[i] - pts_[i - 1]));
    const double r = std::max(s.ryEnd, s.rzEnd);
    bounds = AxisBox::empty();
    for (const Vec3& q : pts_) bounds.expand(q);
    bounds.min -= Vec3{r, r, r};
    bounds.max += Vec3{r, r, r};
    const double step = s.span / (kAxisPoints - 1);
    window_ = static_cast<int>(std::ceil((r + 4.0) / step)) + 1;
  }

  double length() const { return cum_.back(); }
  const std::vector<Vec3>& axis() const { return pts_; }
  const ClavicleShape& shape() const { return s_; }

  double radiusY(double s) const { return s_.ryShaft + (s_.ryEnd - s_.ryShaft) * smoothstep(1.0 - s / kTaperLength); }
  double radiusZ(double s) const { return s_.rzShaft + (s_.rzEnd - s_.rzShaft) * smoothstep(1.0 - s / kTaperLength); }

  Vec3 pointAt(double s) const {
    const auto it = std::upper_bound(cum_.begin(), cum_.end(), s);
    const int seg = std::clamp(static_cast<int>(it - cum_.begin()) - 1, 0, kAxisPoints - 2);
    const double t = (s - cum_[seg]) / (cum_[seg + 1] - cum_[seg]);
    return pts_[seg] + t * (pts_[seg + 1] - pts_[seg]);
  }

  bool inNotch(double vy, double vz) const {
    const double ny = (vy - s_.notchY * s_.ryEnd) / (s_.notchRy * s_.ryEnd);
    const double nz = (vz - s_.notchZ * s_.rzEnd) / (s_.notchRz * s_.rzEnd);
    return ny * ny + nz * nz <= 1.0;
  }

  Sample eval(const Vec3& p) const override {
    const double dir = s_.side == Laterality::Right ? -1.0 : 1.0;
    const double step = s_.span / (kAxisPoints - 1);
    const int guess = static_cast<int>(std::floor(dir * (p.x - s_.medialX) / step));
    const int lo = std::clamp(guess - window_, 0, kAxisPoints - 2);
    const int hi = std::clamp(guess + window_ + 1, lo + 1, kAxisPoints - 1);
    const Projection pr = project(pts_, p, lo, hi);
    const Vec3 a = pts_[pr.segment];
    const Vec3 ab = pts_[pr.segment + 1] - a;
    const double segLen = norm(ab);
    const double s = cum_[pr.segment] + std::clamp(pr.t, 0.0, 1.0) * segLen;
    Sample out;
    if ((pr.segment == 0 && pr.t < 0.0) || (pr.segment == kAxisPoints - 2 && pr.t > 1.0)) {
      const double beyond = pr.t < 0.0 ? -pr.t * segLen : (pr.t - 1.0) * segLen;
      out.margin = beyond;
      return out;
    }
    const Vec3 t = ab / segLen;
    const Vec3 up = normalized(Vec3{0, 0, 1} - t.z * t);
    const Vec3 side = s_.side == Laterality::Right ? cross(t, up) : cross(up, t);
    const Vec3 d = p - (a + std::clamp(pr.t, 0.0, 1.0) * ab);
    const double vy = dot(d, side);
    const double vz = dot(d, up);
    const double ry = radiusY(s);
    const double rz = radiusZ(s);
    const double rho = std::sqrt((vy / ry) * (vy / ry) + (vz / rz) * (vz / rz));
    out.inside = rho <= 1.0;
    out.margin = std::min({std::abs(1.0 - rho) * std::min(ry, rz), s, length() - s});
    if (!out.inside) return out;
    out.margin = std::min(out.margin, std::abs(s - s_.capLength));
    if (s < s_.capLength) {
      out.hu = kCapHu;
      return out;
    }
    if (s_.gap > 0.0) {
      out.margin = std::min(out.margin, std::abs(s - s_.capLength - s_.gap));
      // notch boundary in the cross-section
      const double ny = (vy - s_.notchY * s_.ryEnd) / (s_.notchRy * s_.ryEnd);
      const double nz = (vz - s_.notchZ * s_.rzEnd) / (s_.notchRz * s_.rzEnd);
      const double nrho = std::sqrt(ny * ny + nz * nz);
      out.margin = std::min(out.margin, std::abs(nrho - 1.0) * std::min(s_.notchRy * s_.ryEnd, s_.notchRz * s_.rzEnd));
      if (s < s_.capLength + s_.gap && nrho <= 1.0) {
        out.hu = kGapHu;
        return out;
      }
    }
    out.hu = kShaftHu;
    return out;
  }

 private:
  ClavicleShape s_;
  std::vector<Vec3> pts_;
  std::vector<double> cum_;
  int window_ = 1;
};

// Skeleton used for clearance checks: points with a covering radius.
struct Skeleton {
  std::vector<Vec3> points;
  std::vector<double> radii;
};

double clearance(const Skeleton& a, const Skeleton& b) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < a.points.size(); ++i)
    for (std::size_t j = 0; j < b.points.size(); ++j)
      best = std::min(best, norm(a.points[i] - b.points[j]) - a.radii[i] - b.radii[j]);
  return best;
}

Skeleton skeletonOf(const Clavicle& c) {
  Skeleton s;
  const double len = c.length();
  for (double at = 0.0; at <= len; at += 1.0) {
    s.points.push_back(c.pointAt(at));
    s.radii.push_back(std::max(c.radiusY(at), c.radiusZ(at)));
  }
  return s;
}

Skeleton skeletonOf(const Tube& t) {
  Skeleton s;
  const auto& pts = t.points();
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double len = norm(pts[i + 1] - pts[i]);
    const int n = std::max(1, static_cast<int>(std::ceil(len)));
    for (int k = 0; k < n; ++k) {
      s.points.push_back(pts[i] + (static_cast<double>(k) / n) * (pts[i + 1] - pts[i]));
      s.radii.push_back(t.radius());
    }
  }
  s.points.push_back(pts.back());
  s.radii.push_back(t.radius());
  return s;
}

Vec3 randomUnit(std::mt19937_64& rng) {
  const double z = uniform(rng, -1.0, 1.0);
  const double phi = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double r = std::sqrt(1.0 - z * z);
  return {r * std::cos(phi), r * std::sin(phi), z};
}

std::array<Vec3, 2> basisPerpendicular(const Vec3& n) {
  const Vec3 helper = std::abs(n.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
  const Vec3 e1 = normalized(cross(n, helper));
  return {e1, cross(n, e1)};
}

struct Layout {
  PhantomSpec spec;
  VolumeGeometry geometry;
  std::vector<std::unique_ptr<Solid>> solids;  // bones first, sternum last
  const Clavicle* right = nullptr;
  const Clavicle* left = nullptr;
  int distractors = 0;
  int mirroredLabelOffset = 0;
  std::uint64_t noiseKey = 0;
};

ClavicleShape drawRightClavicle(std::mt19937_64& rng, const VolumeGeometry& g, const PhantomSpec& spec) {
  const AxisBox ext = g.extent();
  const double c = g.mirrorCenterX();
  ClavicleShape s;
  s.side = Laterality::Right;
  s.medialX = c - uniform(rng, 8.0, 11.0);
  s.span = uniform(rng, 56.0, std::min(63.0, s.medialX - ext.min.x - 8.0));
  s.y0 = ext.min.y + 0.68 * (ext.max.y - ext.min.y) + uniform(rng, -4.0, 4.0);
  s.z0 = ext.min.z + 0.45 * (ext.max.z - ext.min.z) + uniform(rng, -4.0, 4.0);
  s.sweep = uniform(rng, 15.0, 22.0);
  s.rise = uniform(rng, 8.0, 14.0);
  s.ryEnd = uniform(rng, 8.0, 10.5);
  s.rzEnd = uniform(rng, 6.5, 8.5);
  s.ryShaft = uniform(rng, 5.0, 6.5);
  s.rzShaft = uniform(rng, 4.0, 5.0);
  s.capLength = uniform(rng, 2.5, 4.0);
  s.gap = spec.gapWidth();
  s.notchY = uniform(rng, -0.15, 0.15);
  s.notchRy = uniform(rng, 0.5, 0.6);
  s.notchZ = uniform(rng, -0.5, -0.35);
  s.notchRz = uniform(rng, 0.8, 0.9);
  return s;
}

ClavicleShape mirroredShape(const ClavicleShape& right, const VolumeGeometry& g) {
  ClavicleShape s = right;
  s.side = Laterality::Left;
  s.medialX = 2.0 * g.mirrorCenterX() - right.medialX;
  return s;
}

ClavicleShape jitteredLeft(std::mt19937_64& rng, const ClavicleShape& right, const VolumeGeometry& g) {
  ClavicleShape s = mirroredShape(right, g);
  const double c = g.mirrorCenterX();
  const double halfGap = std::clamp(c - right.medialX + uniform(rng, -1.0, 1.0), 8.0, 11.0);
  s.medialX = c + halfGap;
  s.span = std::clamp(right.span + uniform(rng, -2.0, 2.0), 54.0, g.extent().max.x - s.medialX - 8.0);
  s.y0 += uniform(rng, -1.5, 1.5);
  s.z0 += uniform(rng, -1.5, 1.5);
  s.sweep *= uniform(rng, 0.95, 1.05);
  s.rise *= uniform(rng, 0.95, 1.05);
  for (double* r : {&s.ryEnd, &s.rzEnd, &s.ryShaft, &s.rzShaft}) *r *= uniform(rng, 0.97, 1.03);
  return s;
}

Layout buildLayout(const PhantomSpec& spec) {
  spec.validate();
  Layout lay;
  lay.spec = spec;
  lay.geometry.dims = spec.volumeDims;
  lay.geometry.spacing = {spec.voxelSpacing, spec.voxelSpacing, spec.voxelSpacing};
  const AxisBox ext = lay.geometry.extent();
  const Vec3 size = ext.extent();
  if (size.x < 150.0 || size.y < 110.0 || size.z < 110.0)
    throw InvalidArgument("phantom volume must span at least 150 x 110 x 110 mm to place the geometry");
  lay.noiseKey = deriveSeed(spec.seed, 2);
  std::mt19937_64 rng(deriveSeed(spec.seed, 1));

  const ClavicleShape rs = drawRightClavicle(rng, lay.geometry, spec);
  const ClavicleShape ls = spec.symmetric ? mirroredShape(rs, lay.geometry) : jitteredLeft(rng, rs, lay.geometry);
  auto right = std::make_unique<Clavicle>(rs);
  auto left = std::make_unique<Clavicle>(ls);
  right->label = kLabelRightClavicle;
  left->label = kLabelLeftClavicle;
  lay.right = right.get();
  lay.left = left.get();
  const std::vector<Skeleton> clavicleSkeletons = {skeletonOf(*right), skeletonOf(*left)};
  lay.solids.push_back(std::move(right));
  lay.solids.push_back(std::move(left));

  const double c = lay.geometry.mirrorCenterX();
  const int toPlace = spec.symmetric ? (spec.distractorCount + 1) / 2 : spec.distractorCount;
  std::vector<Skeleton> placed;
  for (int k = 0; k < toPlace; ++k) {
    bool ok = false;
    for (int attempt = 0; attempt < 4000 && !ok; ++attempt) {
      const Vec3 centre{uniform(rng, ext.min.x, spec.symmetric ? c : ext.max.x), uniform(rng, ext.min.y, ext.max.y),
                        uniform(rng, ext.min.z, ext.max.z)};
      std::unique_ptr<Solid> solid;
      Skeleton skel;
      switch (k % 3) {
        case 0: {  // curved rib-like tube
          const double tilt = uniform(rng, 0.0, 0.6);
          const double az = uniform(rng, 0.0, 2.0 * std::numbers::pi);
          const Vec3 n{std::sin(tilt) * std::cos(az), std::sin(tilt) * std::sin(az), std::cos(tilt)};
          const auto [e1, e2] = basisPerpendicular(n);
          const double radius = uniform(rng, 35.0, 55.0);
          const double arc = uniform(rng, 1.0, 1.7);
          const double start = uniform(rng, 0.0, 2.0 * std::numbers::pi);
          std::vector<Vec3> pts;
          for (int i = 0; i <= 32; ++i) {
            const double th = start + arc * i / 32.0;
            pts.push_back(centre + radius * (std::cos(th) * e1 + std::sin(th) * e2) -
                          radius * (std::cos(start + 0.5 * arc) * e1 + std::sin(start + 0.5 * arc) * e2));
          }
          auto tube = std::make_unique<Tube>(std::move(pts), uniform(rng, 3.5, 6.0), kRibHu);
          skel = skeletonOf(*tube);
          solid = std::move(tube);
          break;
        }
        case 1: {  // straight tube
          const Vec3 d = randomUnit(rng);
          const double half = 0.5 * uniform(rng, 30.0, 65.0);
          auto tube = std::make_unique<Tube>(std::vector<Vec3>{centre - half * d, centre + half * d},
                                             uniform(rng, 4.0, 7.0), kTubeHu);
          skel = skeletonOf(*tube);
          solid = std::move(tube);
          break;
        }
        default: {  // ellipsoid
          const Vec3 n = randomUnit(rng);
          const auto [e1, e2] = basisPerpendicular(n);
          const double spin = uniform(rng, 0.0, 2.0 * std::numbers::pi);
          const Vec3 a1 = std::cos(spin) * e1 + std::sin(spin) * e2;
          const Vec3 a2 = cross(n, a1);
          auto blob = std::make_unique<Ellipsoid>(
              centre, Vec3{uniform(rng, 5.0, 14.0), uniform(rng, 5.0, 12.0), uniform(rng, 4.0, 10.0)},
              std::array<Vec3, 3>{a1, a2, n});
          skel.points = {blob->centre()};
          skel.radii = {blob->boundingRadius()};
          solid = std::move(blob);
          break;
        }
      }
      const double margin = 2.0 * spec.voxelSpacing;
      const AxisBox& b = solid->bounds;
      bool fits = b.min.x >= ext.min.x + margin && b.min.y >= ext.min.y + margin && b.min.z >= ext.min.z + margin &&
                  b.max.x <= ext.max.x - margin - spec.voxelSpacing && b.max.y <= ext.max.y - margin - spec.voxelSpacing &&
                  b.max.z <= ext.max.z - margin - spec.voxelSpacing;
      if (spec.symmetric) fits = fits && b.max.x < c - 2.0;
      if (!fits) continue;
      bool clear = true;
      for (const Skeleton& cs : clavicleSkeletons) clear = clear && clearance(skel, cs) >= kClavicleClearance;
      for (const Skeleton& ps : placed) clear = clear && clearance(skel, ps) >= kDistractorClearance;
      if (!clear) continue;
      solid->label = kFirstDistractorLabel + k;
      lay.solids.push_back(std::move(solid));
      placed.push_back(std::move(skel));
      ok = true;
    }
    if (!ok) throw InvalidArgument("could not place distractor " + std::to_string(k) + " in the phantom volume");
  }
  lay.distractors = spec.symmetric ? 2 * toPlace : toPlace;
  lay.mirroredLabelOffset = toPlace;

  // Soft-tissue sternum block between the medial ends.
  const double half = std::min(c - rs.medialX, ls.medialX - c) - 3.0;
  const AxisBox sternum{{c - half, rs.y0 - 20.0, std::max(ext.min.z + 2.0, rs.z0 - 40.0)},
                        {c + half, rs.y0 + 3.0, rs.z0 + 5.0}};
  lay.solids.push_back(std::make_unique<Slab>(sternum, kSternumHu));
  return lay;
}

double gaussianNoise(std::uint64_t key, std::size_t index) {
  const std::uint64_t h1 = splitmix64(key ^ (static_cast<std::uint64_t>(index) * 2 + 1));
  const std::uint64_t h2 = splitmix64(h1 ^ 0x632be59bd9b4e019ULL);
  const double u1 = (static_cast<double>(h1 >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = static_cast<double>(h2 >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

struct Rendered {
  HuVolume volume;
  LabelVolume labels;
};

// Voxel box [lo, hi) of the full scene grid.
Rendered render(const Layout& lay, const std::array<int, 3>& lo, const std::array<int, 3>& hi) {
  const VolumeGeometry& g = lay.geometry;
  const double sp = lay.spec.voxelSpacing;
  VolumeGeometry sub;
  sub.dims = {hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]};
  sub.spacing = g.spacing;
  sub.origin = g.worldOf(lo[0], lo[1], lo[2]);
  Rendered out{HuVolume(sub, std::int16_t{0}), LabelVolume(sub, std::uint8_t{0})};
  const double reach = 0.87 * sp;
  const double q = 0.25 * sp;
  std::vector<const Solid*> near;
  for (int k = lo[2]; k < hi[2]; ++k) {
    for (int j = lo[1]; j < hi[1]; ++j) {
      for (int i = lo[0]; i < hi[0]; ++i) {
        // In symmetric mode the high-X half copies the low-X half.
        const int src = lay.spec.symmetric ? std::min(i, g.dims.x - 1 - i) : i;
        const bool mirrored = src != i;
        const Vec3 p = g.worldOf(src, j, k);
        near.clear();
        for (const auto& s : lay.solids)
          if (insideBox(s->bounds, p, sp)) near.push_back(s.get());
        double hu = kSoftTissueHu;
        int label = 0;
        if (!near.empty()) {
          const auto material = [&](const Vec3& x, int& hitLabel) {
            for (const Solid* s : near) {
              const Sample smp = s->eval(x);
              if (smp.inside) {
                if (hitLabel == 0) hitLabel = s->label;
                return smp.hu;
              }
            }
            return kSoftTissueHu;
          };
          double margin = std::numeric_limits<double>::infinity();
          for (const Solid* s : near) margin = std::min(margin, s->eval(p).margin);
          if (margin >= reach) {
            hu = material(p, label);
          } else {
            double acc = 0.0;
            for (int c = 0; c < 8; ++c) {
              const Vec3 x = p + Vec3{(c & 1) ? q : -q, (c & 2) ? q : -q, (c & 4) ? q : -q};
              acc += material(x, label);
            }
            hu = acc / 8.0;
          }
        }
        if (mirrored && label != 0) {
          if (label == kLabelRightClavicle) label = kLabelLeftClavicle;
          else if (label == kLabelLeftClavicle) label = kLabelRightClavicle;
          else label += lay.mirroredLabelOffset;
        }
        hu += lay.spec.noiseSigma * gaussianNoise(lay.noiseKey, g.dims.x * (static_cast<std::size_t>(j) + static_cast<std::size_t>(g.dims.y) * k) + src);
        const int li = i - lo[0];
        const int lj = j - lo[1];
        const int lk = k - lo[2];
        out.volume.at(li, lj, lk) =
            static_cast<std::int16_t>(std::clamp<long>(std::lround(hu), kMinHu, kMaxHu));
        out.labels.at(li, lj, lk) = static_cast<std::uint8_t>(label);
      }
    }
  }
  return out;
}

AxisBox maskBoxOf(const Rendered& r, int label) {
  AxisBox box = AxisBox::empty();
  const Dims3 d = r.volume.dims();
  const Vec3 h = 0.5 * r.volume.spacing();
  for (int k = 0; k < d.z; ++k)
    for (int j = 0; j < d.y; ++j)
      for (int i = 0; i < d.x; ++i)
        if (r.labels.at(i, j, k) == label && r.volume.at(i, j, k) >= kBoneThreshold) {
          const Vec3 p = r.volume.geometry().worldOf(i, j, k);
          box.expand(p - h);
          box.expand(p + h);
        }
  if (!box.valid()) throw NumericError("clavicle produced no bone voxels");
  return box;
}

// Offset along one cross-section axis maximizing the gap's chord in the
// perpendicular direction.
double bestOffset(const Clavicle& c, double s, bool alongZ) {
  const ClavicleShape& sh = c.shape();
  const double ry = c.radiusY(s);
  const double rz = c.radiusZ(s);
  const double r = alongZ ? rz : ry;
  double best = 0.0;
  double bestLen = -1.0;
  for (double v = -r; v <= r; v += 0.005) {
    // chord of the bone cross-section and of the notch at this offset
    double bHalf;
    double nLo;
    double nHi;
    if (alongZ) {
      bHalf = ry * std::sqrt(std::max(0.0, 1.0 - (v / rz) * (v / rz)));
      const double t = (v - sh.notchZ * sh.rzEnd) / (sh.notchRz * sh.rzEnd);
      const double nh = sh.notchRy * sh.ryEnd * std::sqrt(std::max(0.0, 1.0 - t * t));
      nLo = sh.notchY * sh.ryEnd - nh;
      nHi = sh.notchY * sh.ryEnd + nh;
      if (std::abs(t) > 1.0) continue;
    } else {
      bHalf = rz * std::sqrt(std::max(0.0, 1.0 - (v / ry) * (v / ry)));
      const double t = (v - sh.notchY * sh.ryEnd) / (sh.notchRy * sh.ryEnd);
      const double nh = sh.notchRz * sh.rzEnd * std::sqrt(std::max(0.0, 1.0 - t * t));
      nLo = sh.notchZ * sh.rzEnd - nh;
      nHi = sh.notchZ * sh.rzEnd + nh;
      if (std::abs(t) > 1.0) continue;
    }
    const double len = std::max(0.0, std::min(nHi, bHalf) - std::max(nLo, -bHalf));
    if (len > bestLen + 1e-12) {
      bestLen = len;
      best = v;
    }
  }
  return best;
}

ClavicleTruth truthOf(const Layout& lay, const Clavicle& c, const AxisBox& maskBox) {
  const ClavicleShape& sh = c.shape();
  ClavicleTruth t;
  t.side = sh.side;
  t.gapWidth = sh.gap;
  t.capLength = sh.capLength;
  t.axis = c.axis();
  const double sGap = sh.capLength + 0.5 * sh.gap;
  t.gapCenter = c.pointAt(sGap);
  t.maskBox = maskBox;
  AxisBox frameBox = maskBox;
  Vec3 centre = t.gapCenter;
  if (sh.side == Laterality::Left) {
    frameBox = mirrorBoxX(lay.geometry, maskBox);
    centre = mirrorPointX(lay.geometry, centre);
  }
  const AxisBox mce = mceBox(frameBox);
  const double zStar = centre.z + bestOffset(c, sGap, true);
  const double yStar = centre.y + bestOffset(c, sGap, false);
  const auto idx = [](double v) { return static_cast<int>(std::lround(v / kMceSpacing)); };
  t.gapPlaneIndex = {idx(zStar - mce.min.z), idx(yStar - mce.min.y), idx(centre.x - mce.min.x)};
  return t;
}

std::array<int, 3> toVoxel(const VolumeGeometry& g, const Vec3& p, bool up) {
  const Vec3 f = g.indexOf(p);
  std::array<int, 3> v{};
  for (int a = 0; a < 3; ++a) {
    const double x = up ? std::ceil(f[a]) + 1.0 : std::floor(f[a]);
    v[a] = std::clamp(static_cast<int>(x), 0, g.dims[a]);
  }
  return v;
}

}  // namespace

double PhantomSpec::gapWidth() const { return std::max(0.0, gapSlope * (gapMaxAge - age)); }

void PhantomSpec::validate() const {
  if (!(age >= 14.0 && age <= 26.0)) throw InvalidArgument("phantom age must lie in [14, 26]");
  if (!(gapSlope >= 0.0) || !std::isfinite(gapMaxAge)) throw InvalidArgument("gap model parameters are invalid");
  if (distractorCount < 0) throw InvalidArgument("distractor count must be non-negative");
  if (!(noiseSigma >= 0.0)) throw InvalidArgument("noise sigma must be non-negative");
  if (!(voxelSpacing > 0.0)) throw InvalidArgument("voxel spacing must be positive");
  if (volumeDims.x <= 0 || volumeDims.y <= 0 || volumeDims.z <= 0) throw InvalidArgument("volume dims must be positive");
  if (gapWidth() > 6.0) throw InvalidArgument("gap wider than the modelled epiphysis");
}

nlohmann::json toJson(const PhantomSpec& s) {
  return {{"seed", s.seed},
          {"age", s.age},
          {"gap_slope", s.gapSlope},
          {"gap_max_age", s.gapMaxAge},
          {"distractor_count", s.distractorCount},
          {"noise_sigma", s.noiseSigma},
          {"voxel_spacing", s.voxelSpacing},
          {"volume_dims", {s.volumeDims.x, s.volumeDims.y, s.volumeDims.z}},
          {"symmetric", s.symmetric}};
}

PhantomSpec phantomSpecFromJson(const nlohmann::json& j) {
  try {
    PhantomSpec s;
    s.seed = j.at("seed");
    s.age = j.at("age");
    s.gapSlope = j.at("gap_slope");
    s.gapMaxAge = j.at("gap_max_age");
    s.distractorCount = j.at("distractor_count");
    s.noiseSigma = j.at("noise_sigma");
    s.voxelSpacing = j.at("voxel_spacing");
    const auto d = j.at("volume_dims").get<std::vector<int>>();
    if (d.size() != 3) throw InvalidArgument("volume_dims needs three entries");
    s.volumeDims = {d[0], d[1], d[2]};
    s.symmetric = j.value("symmetric", false);
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::MalformedHeader, std::string("phantom spec: ") + e.what());
  }
}

std::string nameOf(ComponentClass c) {
  switch (c) {
    case ComponentClass::RightClavicle: return "right-clavicle";
    case ComponentClass::LeftClavicle: return "left-clavicle";
    case ComponentClass::Distractor: return "distractor";
  }
  return "distractor";
}

ComponentClass classOfLabel(int label) {
  if (label == kLabelRightClavicle) return ComponentClass::RightClavicle;
  if (label == kLabelLeftClavicle) return ComponentClass::LeftClavicle;
  return ComponentClass::Distractor;
}

PhantomScene generateScene(const PhantomSpec& spec) {
  const Layout lay = buildLayout(spec);
  Rendered r = render(lay, {0, 0, 0}, {spec.volumeDims.x, spec.volumeDims.y, spec.volumeDims.z});
  PhantomScene scene;
  scene.spec = spec;
  scene.trueAge = spec.age;
  scene.distractorCount = lay.distractors;
  scene.clavicles[0] = truthOf(lay, *lay.right, maskBoxOf(r, kLabelRightClavicle));
  scene.clavicles[1] = truthOf(lay, *lay.left, maskBoxOf(r, kLabelLeftClavicle));
  scene.volume = std::move(r.volume);
  scene.labels = std::move(r.labels);
  return scene;
}

ClavicleRegion renderClavicleRegion(const PhantomSpec& spec, Laterality side) {
  if (side == Laterality::Unknown) throw InvalidArgument("clavicle region needs a laterality");
  const Layout lay = buildLayout(spec);
  const Clavicle& c = side == Laterality::Right ? *lay.right : *lay.left;
  AxisBox need = c.bounds;
  // The MCE extends 25 mm from the medial-anterior-inferior corner.
  const double reach = kMceExtent + 2.0 * spec.voxelSpacing;
  need.expand({side == Laterality::Right ? need.max.x - reach : need.min.x + reach, need.max.y - reach,
               need.min.z + reach});
  const double pad = 2.0 * spec.voxelSpacing;
  need.min -= Vec3{pad, pad, pad};
  need.max += Vec3{pad, pad, pad};
  const Rendered r = render(lay, toVoxel(lay.geometry, need.min, false), toVoxel(lay.geometry, need.max, true));
  const int label = side == Laterality::Right ? kLabelRightClavicle : kLabelLeftClavicle;
  ClavicleRegion out;
  out.truth = truthOf(lay, c, maskBoxOf(r, label));
  out.volume = r.volume;
  return out;
}

std::vector<int> componentObjectLabels(const std::vector<TriangleMesh>& components, const LabelVolume& labels) {
  std::vector<int> out;
  std::vector<int> support;
  const VolumeGeometry& g = labels.geometry();
  for (const TriangleMesh& m : components) {
    std::map<int, int> votes;
    for (const Vec3& v : m.vertices) {
      const Vec3 f = g.indexOf(v);
      const int i0 = static_cast<int>(std::floor(f.x));
      const int j0 = static_cast<int>(std::floor(f.y));
      const int k0 = static_cast<int>(std::floor(f.z));
      for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int i = i0 + dx, j = j0 + dy, k = k0 + dz;
            if (!labels.contains(i, j, k)) continue;
            if (std::abs(i - f.x) > 0.51 || std::abs(j - f.y) > 0.51 || std::abs(k - f.z) > 0.51) continue;
            if (const int l = labels.at(i, j, k); l != 0) ++votes[l];
          }
    }
    int best = 0;
    int bestCount = 0;
    for (const auto& [l, n] : votes)
      if (n > bestCount) {
        best = l;
        bestCount = n;
      }
    out.push_back(best);
    support.push_back(bestCount);
  }
  for (const int clav : {kLabelRightClavicle, kLabelLeftClavicle}) {
    int keep = -1;
    for (std::size_t c = 0; c < out.size(); ++c)
      if (out[c] == clav && (keep < 0 || support[c] > support[static_cast<std::size_t>(keep)])) keep = static_cast<int>(c);
    for (std::size_t c = 0; c < out.size(); ++c)
      if (out[c] == clav && static_cast<int>(c) != keep) out[c] = 0;
  }
  return out;
}

PhantomDataset generateDataset(int n, double ageLo, double ageHi, std::uint64_t seed, const PhantomSpec& base) {
  if (n < 25) throw InvalidArgument("a phantom dataset needs at least 25 subjects");
  if (!(ageLo >= 14.0 && ageHi <= 26.0 && ageLo < ageHi)) throw InvalidArgument("age range must lie in [14, 26]");
  PhantomDataset ds;
  std::mt19937_64 rng(deriveSeed(seed, 0x5eedULL));
  std::vector<std::pair<std::pair<int, double>, int>> order;
  for (int i = 0; i < n; ++i) {
    PhantomSpec s = base;
    s.seed = deriveSeed(seed, 1000 + static_cast<std::uint64_t>(i));
    s.age = std::min(ageLo + (ageHi - ageLo) * uniform01(rng), std::nextafter(ageHi, ageLo));
    ds.subjects.push_back(s);
    order.push_back({{static_cast<int>(std::floor(s.age)), uniform01(rng)}, i});
  }
  std::sort(order.begin(), order.end());

  // Exact split sizes by largest remainder, then interleaved along the
  // stratum-sorted order so each stratum is split proportionally.
  const std::array<double, 3> ratio{0.64, 0.16, 0.20};
  std::array<int, 3> target{};
  std::array<double, 3> frac{};
  int assigned = 0;
  for (int s = 0; s < 3; ++s) {
    target[s] = static_cast<int>(std::floor(n * ratio[s]));
    frac[s] = n * ratio[s] - target[s];
    assigned += target[s];
  }
  for (; assigned < n; ++assigned) {
    const int s = static_cast<int>(std::max_element(frac.begin(), frac.end()) - frac.begin());
    ++target[s];
    frac[s] = -1.0;
  }
  std::array<long, 3> weight{};
  for (const auto& item : order) {
    for (int s = 0; s < 3; ++s) weight[s] += target[s];
    const int pick = static_cast<int>(std::max_element(weight.begin(), weight.end()) - weight.begin());
    weight[pick] -= n;
    (pick == 0 ? ds.split.train : pick == 1 ? ds.split.val : ds.split.test).push_back(item.second);
  }
  for (auto* v : {&ds.split.train, &ds.split.val, &ds.split.test}) std::sort(v->begin(), v->end());
  return ds;
}

nlohmann::json sidecarJson(const PhantomScene& scene, const std::vector<int>& componentLabels) {
  nlohmann::json clav = nlohmann::json::array();
  for (const ClavicleTruth& t : scene.clavicles) {
    clav.push_back({{"laterality", nameOf(t.side)},
                    {"gap_width_mm", t.gapWidth},
                    {"gap_plane_index",
                     {{"axial", t.gapPlaneIndex[0]}, {"coronal", t.gapPlaneIndex[1]}, {"sagittal", t.gapPlaneIndex[2]}}},
                    {"mask_box",
                     {t.maskBox.min.x, t.maskBox.min.y, t.maskBox.min.z, t.maskBox.max.x, t.maskBox.max.y,
                      t.maskBox.max.z}}});
  }
  nlohmann::json labels = nlohmann::json::array();
  for (int l : componentLabels) labels.push_back(nameOf(classOfLabel(l)));
  return {{"format", "mceage-phantom"},
          {"version", 1},
          {"spec", toJson(scene.spec)},
          {"true_age", scene.trueAge},
          {"distractors", scene.distractorCount},
          {"clavicles", clav},
          {"component_labels", labels}};
}

void saveScene(const std::filesystem::path& ctvPath, const PhantomScene& scene) {
  saveVolume(ctvPath, scene.volume, {{"phantom_seed", scene.spec.seed}});
}

}  // namespace mceage
