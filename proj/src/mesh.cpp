#include "mceage/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <unordered_map>

#include <Eigen/Dense>

#include "mceage/error.hpp"

namespace mceage {

namespace {

// Cube corner c sits at (c & 1, (c >> 1) & 1, (c >> 2) & 1).
struct CubeEdge {
  int corner;  // lower corner
  int axis;
};

struct CubeTopology {
  std::array<CubeEdge, 12> edges{};
  // Loops of edge ids per configuration; each loop becomes a polygon.
  std::array<std::vector<std::vector<int>>, 256> loops;
};

Vec3 cornerPos(int c) { return {double(c & 1), double((c >> 1) & 1), double((c >> 2) & 1)}; }

CubeTopology buildTopology() {
  CubeTopology topo;
  int edgeId[8][8];
  for (auto& row : edgeId) std::fill(std::begin(row), std::end(row), -1);
  int n = 0;
  for (int c = 0; c < 8; ++c) {
    for (int axis = 0; axis < 3; ++axis) {
      if (c & (1 << axis)) continue;
      const int other = c | (1 << axis);
      topo.edges[n] = {c, axis};
      edgeId[c][other] = edgeId[other][c] = n;
      ++n;
    }
  }
  auto edgeMid = [&](int e) {
    Vec3 p = cornerPos(topo.edges[e].corner);
    p[topo.edges[e].axis] += 0.5;
    return p;
  };

  for (int config = 0; config < 256; ++config) {
    auto inside = [config](int c) { return ((config >> c) & 1) != 0; };
    std::array<int, 12> next;
    next.fill(-1);

    for (int axis = 0; axis < 3; ++axis) {
      const int b = (axis + 1) % 3;
      const int c2 = (axis + 2) % 3;
      for (int side = 0; side < 2; ++side) {
        const int base = side << axis;
        const std::array<int, 4> q = {base, base | (1 << b), base | (1 << b) | (1 << c2), base | (1 << c2)};
        std::array<int, 4> faceEdges;
        for (int t = 0; t < 4; ++t) faceEdges[t] = edgeId[q[t]][q[(t + 1) % 4]];

        std::vector<std::pair<int, int>> segments;
        std::vector<int> crossing;
        for (int t = 0; t < 4; ++t) {
          if (inside(q[t]) != inside(q[(t + 1) % 4])) crossing.push_back(t);
        }
        if (crossing.size() == 2) {
          segments.emplace_back(faceEdges[crossing[0]], faceEdges[crossing[1]]);
        } else if (crossing.size() == 4) {
          // Diagonal foreground corners: cut each one off separately.
          for (int t = 0; t < 4; ++t) {
            if (inside(q[t])) segments.emplace_back(faceEdges[(t + 3) % 4], faceEdges[t]);
          }
        }

        Vec3 normal{};
        normal[axis] = side ? 1.0 : -1.0;
        for (auto [ea, eb] : segments) {
          const Vec3 pa = edgeMid(ea);
          const Vec3 pb = edgeMid(eb);
          const Vec3 mid = 0.5 * (pa + pb);
          double best = 1e9;
          Vec3 nearestInside{};
          for (int t = 0; t < 4; ++t) {
            if (!inside(q[t])) continue;
            const double dist = norm(mid - cornerPos(q[t]));
            if (dist < best) {
              best = dist;
              nearestInside = cornerPos(q[t]);
            }
          }
          const Vec3 toOutside = mid - nearestInside;
          if (dot(cross(pb - pa, toOutside), normal) < 0) std::swap(ea, eb);
          next[ea] = eb;
        }
      }
    }

    std::array<bool, 12> used{};
    for (int start = 0; start < 12; ++start) {
      if (next[start] < 0 || used[start]) continue;
      std::vector<int> loop;
      for (int e = start; !used[e]; e = next[e]) {
        used[e] = true;
        loop.push_back(e);
      }
      topo.loops[config].push_back(std::move(loop));
    }
  }
  return topo;
}

const CubeTopology& topology() {
  static const CubeTopology topo = buildTopology();
  return topo;
}

struct UnionFind {
  std::vector<std::uint32_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0u); }
  std::uint32_t find(std::uint32_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) std::swap(a, b);
    parent[a] = b;  // root is the smallest index
  }
};

Eigen::Matrix3d surfaceCovariance(const TriangleMesh& mesh, const Vec3& centroid, double& totalArea) {
  // Exact second moment of the surface: for a triangle with (centred)
  // vertices a, b, c and area A, the integral of x x^T is
  // A/12 * (a a^T + b b^T + c c^T + s s^T) with s = a + b + c.
  Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
  totalArea = 0.0;
  for (const auto& t : mesh.triangles) {
    const Vec3 a = mesh.vertices[t[0]] - centroid;
    const Vec3 b = mesh.vertices[t[1]] - centroid;
    const Vec3 c = mesh.vertices[t[2]] - centroid;
    const double area = 0.5 * norm(cross(b - a, c - a));
    const Eigen::Vector3d ea(a.x, a.y, a.z), eb(b.x, b.y, b.z), ec(c.x, c.y, c.z);
    const Eigen::Vector3d s = ea + eb + ec;
    m += area / 12.0 * (ea * ea.transpose() + eb * eb.transpose() + ec * ec.transpose() + s * s.transpose());
    totalArea += area;
  }
  return m;
}

}  // namespace

TriangleMesh marchingCubes(const BinaryMask& mask) {
  const CubeTopology& topo = topology();
  const Dims3 d = mask.dims();
  const VolumeGeometry& g = mask.geometry();
  TriangleMesh mesh;

  auto value = [&](int i, int j, int k) -> int { return mask.contains(i, j, k) ? (mask.at(i, j, k) != 0) : 0; };
  const std::uint64_t px = static_cast<std::uint64_t>(d.x) + 2;
  const std::uint64_t py = static_cast<std::uint64_t>(d.y) + 2;
  std::unordered_map<std::uint64_t, std::uint32_t> edgeVertex;

  auto vertexFor = [&](int i, int j, int k, const CubeEdge& e) -> std::uint32_t {
    const int ci = i + (e.corner & 1);
    const int cj = j + ((e.corner >> 1) & 1);
    const int ck = k + ((e.corner >> 2) & 1);
    const std::uint64_t key =
        ((static_cast<std::uint64_t>(ck + 1) * py + static_cast<std::uint64_t>(cj + 1)) * px +
         static_cast<std::uint64_t>(ci + 1)) * 3 + static_cast<std::uint64_t>(e.axis);
    auto [it, inserted] = edgeVertex.try_emplace(key, static_cast<std::uint32_t>(mesh.vertices.size()));
    if (inserted) {
      double pos[3] = {double(ci), double(cj), double(ck)};
      pos[e.axis] += 0.5;
      mesh.vertices.push_back(g.worldOf(pos[0], pos[1], pos[2]));
    }
    return it->second;
  };

  std::vector<std::uint32_t> ids;
  for (int k = -1; k < d.z; ++k) {
    for (int j = -1; j < d.y; ++j) {
      for (int i = -1; i < d.x; ++i) {
        int config = 0;
        for (int c = 0; c < 8; ++c) {
          if (value(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1))) config |= 1 << c;
        }
        if (config == 0 || config == 255) continue;
        for (const auto& loop : topo.loops[config]) {
          ids.clear();
          for (int e : loop) ids.push_back(vertexFor(i, j, k, topo.edges[e]));
          if (ids.size() == 3) {
            mesh.triangles.push_back({ids[0], ids[1], ids[2]});
            continue;
          }
          Vec3 centre{};
          for (auto id : ids) centre += mesh.vertices[id];
          centre = centre / static_cast<double>(ids.size());
          const auto centreId = static_cast<std::uint32_t>(mesh.vertices.size());
          mesh.vertices.push_back(centre);
          for (std::size_t t = 0; t < ids.size(); ++t) {
            mesh.triangles.push_back({centreId, ids[t], ids[(t + 1) % ids.size()]});
          }
        }
      }
    }
  }
  return mesh;
}

ComponentSet connectedComponents(const TriangleMesh& mesh) {
  UnionFind uf(mesh.vertices.size());
  for (const auto& t : mesh.triangles) {
    uf.unite(t[0], t[1]);
    uf.unite(t[1], t[2]);
  }
  // Roots are the smallest vertex index in each group.
  std::map<std::uint32_t, std::vector<std::size_t>> byRoot;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) byRoot[uf.find(mesh.triangles[t][0])].push_back(t);

  struct Group {
    std::uint32_t root;
    const std::vector<std::size_t>* tris;
  };
  std::vector<Group> groups;
  for (const auto& [root, tris] : byRoot) groups.push_back({root, &tris});
  std::stable_sort(groups.begin(), groups.end(), [](const Group& a, const Group& b) {
    if (a.tris->size() != b.tris->size()) return a.tris->size() > b.tris->size();
    return a.root < b.root;
  });

  ComponentSet set;
  std::vector<std::uint32_t> remap(mesh.vertices.size(), UINT32_MAX);
  for (const Group& group : groups) {
    TriangleMesh part;
    for (std::size_t t : *group.tris) {
      std::array<std::uint32_t, 3> tri;
      for (int c = 0; c < 3; ++c) {
        const std::uint32_t v = mesh.triangles[t][c];
        if (remap[v] == UINT32_MAX) {
          remap[v] = static_cast<std::uint32_t>(part.vertices.size());
          part.vertices.push_back(mesh.vertices[v]);
        }
        tri[c] = remap[v];
      }
      part.triangles.push_back(tri);
    }
    set.components.push_back(std::move(part));
  }
  return set;
}

ComponentSet boneComponents(const HuVolume& volume, int threshold) {
  ComponentSet all = connectedComponents(marchingCubes(thresholdBone(volume, threshold)));
  ComponentSet out;
  out.sourceVolumeId = all.sourceVolumeId;
  for (TriangleMesh& m : all.components)
    if (enclosedVolume(m) > 0.0) out.components.push_back(std::move(m));
  return out;
}

double surfaceArea(const TriangleMesh& mesh) {
  double area = 0.0;
  for (const auto& t : mesh.triangles) {
    const Vec3& a = mesh.vertices[t[0]];
    area += 0.5 * norm(cross(mesh.vertices[t[1]] - a, mesh.vertices[t[2]] - a));
  }
  return area;
}

bool isWatertight(const TriangleMesh& mesh) {
  if (mesh.triangles.empty()) return false;
  std::unordered_map<std::uint64_t, int> directed;
  directed.reserve(mesh.triangles.size() * 3);
  auto key = [](std::uint32_t a, std::uint32_t b) { return (static_cast<std::uint64_t>(a) << 32) | b; };
  for (const auto& t : mesh.triangles) {
    for (int e = 0; e < 3; ++e) {
      if (++directed[key(t[e], t[(e + 1) % 3])] > 1) return false;
    }
  }
  for (const auto& [k, count] : directed) {
    const auto a = static_cast<std::uint32_t>(k >> 32);
    const auto b = static_cast<std::uint32_t>(k & 0xffffffffu);
    if (!directed.contains(key(b, a))) return false;
  }
  return true;
}

double enclosedVolume(const TriangleMesh& mesh) {
  if (!isWatertight(mesh)) throw InvalidArgument("enclosedVolume requires a watertight mesh");
  const Vec3 ref = mesh.vertices[mesh.triangles.front()[0]];
  double volume = 0.0;
  for (const auto& t : mesh.triangles) {
    const Vec3 a = mesh.vertices[t[0]] - ref;
    const Vec3 b = mesh.vertices[t[1]] - ref;
    const Vec3 c = mesh.vertices[t[2]] - ref;
    volume += dot(a, cross(b, c));
  }
  return volume / 6.0;
}

AxisBox boundingBox(const TriangleMesh& mesh) {
  AxisBox box = AxisBox::empty();
  for (const auto& t : mesh.triangles)
    for (auto v : t) box.expand(mesh.vertices[v]);
  return box;
}

Vec3 areaCentroid(const TriangleMesh& mesh) {
  Vec3 acc{};
  double total = 0.0;
  for (const auto& t : mesh.triangles) {
    const Vec3& a = mesh.vertices[t[0]];
    const Vec3& b = mesh.vertices[t[1]];
    const Vec3& c = mesh.vertices[t[2]];
    const double area = 0.5 * norm(cross(b - a, c - a));
    acc += (area / 3.0) * (a + b + c);
    total += area;
  }
  if (!(total > 0)) throw InvalidArgument("centroid of an empty mesh");
  return acc / total;
}

Extents obbExtents(const TriangleMesh& mesh) {
  if (mesh.empty()) throw InvalidArgument("obbExtents of an empty mesh");
  const Vec3 centroid = areaCentroid(mesh);
  double area = 0.0;
  const Eigen::Matrix3d cov = surfaceCovariance(mesh, centroid, area);
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
  const Eigen::Matrix3d axes = solver.eigenvectors();

  double lo[3] = {1e300, 1e300, 1e300};
  double hi[3] = {-1e300, -1e300, -1e300};
  for (const auto& t : mesh.triangles) {
    for (auto v : t) {
      const Vec3 p = mesh.vertices[v] - centroid;
      for (int a = 0; a < 3; ++a) {
        const double proj = p.x * axes(0, a) + p.y * axes(1, a) + p.z * axes(2, a);
        lo[a] = std::min(lo[a], proj);
        hi[a] = std::max(hi[a], proj);
      }
    }
  }
  std::array<double, 3> ext = {hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]};
  std::sort(ext.begin(), ext.end(), std::greater<>());
  return {ext[0], ext[1], ext[2]};
}

TriangleMesh transformed(const TriangleMesh& mesh, const std::array<double, 9>& r, const Vec3& translation) {
  TriangleMesh out = mesh;
  for (Vec3& p : out.vertices) {
    const Vec3 q = p;
    p = Vec3{r[0] * q.x + r[1] * q.y + r[2] * q.z, r[3] * q.x + r[4] * q.y + r[5] * q.z,
             r[6] * q.x + r[7] * q.y + r[8] * q.z} +
        translation;
  }
  return out;
}

TriangleMesh scaled(const TriangleMesh& mesh, double factor) {
  TriangleMesh out = mesh;
  for (Vec3& p : out.vertices) p *= factor;
  return out;
}

TriangleMesh mirrorMeshX(const TriangleMesh& mesh, const VolumeGeometry& geometry) {
  TriangleMesh out = mesh;
  for (Vec3& p : out.vertices) p = mirrorPointX(geometry, p);
  for (auto& t : out.triangles) std::swap(t[1], t[2]);
  return out;
}

void writeOff(const std::filesystem::path& path, const TriangleMesh& mesh) {
  std::ofstream out(path);
  if (!out) throw FormatError(FormatError::Kind::Io, "cannot open for writing: " + path.string());
  out.precision(17);
  out << "OFF\n" << mesh.vertices.size() << ' ' << mesh.triangles.size() << " 0\n";
  for (const Vec3& p : mesh.vertices) out << p.x << ' ' << p.y << ' ' << p.z << '\n';
  for (const auto& t : mesh.triangles) out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
}

}  // namespace mceage
