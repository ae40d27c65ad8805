#pragma once

// Analytic test meshes and masks.

#include <array>
#include <cmath>
#include <map>
#include <numbers>

#include "mceage/mesh.hpp"
#include "mceage/volume.hpp"

namespace shapes {

using mceage::TriangleMesh;
using mceage::Vec3;

inline TriangleMesh boxMesh(double lx, double ly, double lz) {
  TriangleMesh m;
  for (int c = 0; c < 8; ++c) m.vertices.push_back({(c & 1) * lx, ((c >> 1) & 1) * ly, ((c >> 2) & 1) * lz});
  // Outward-wound quads split into triangles.
  const int quads[6][4] = {{0, 2, 3, 1}, {4, 5, 7, 6}, {0, 1, 5, 4}, {2, 6, 7, 3}, {0, 4, 6, 2}, {1, 3, 7, 5}};
  for (const auto& q : quads) {
    m.triangles.push_back({std::uint32_t(q[0]), std::uint32_t(q[1]), std::uint32_t(q[2])});
    m.triangles.push_back({std::uint32_t(q[0]), std::uint32_t(q[2]), std::uint32_t(q[3])});
  }
  return m;
}

inline TriangleMesh unitCube() { return boxMesh(1, 1, 1); }

inline TriangleMesh icosphere(double radius, int subdivisions, Vec3 centre = {}) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                         {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  std::vector<std::array<std::uint32_t, 3>> f = {
      {0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
      {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8}, {3, 8, 9}, {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1}};
  for (auto& p : v) p = mceage::normalized(p);
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> mid;
    auto midpoint = [&](std::uint32_t a, std::uint32_t b) {
      auto key = std::minmax(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      v.push_back(mceage::normalized(0.5 * (v[a] + v[b])));
      const auto id = static_cast<std::uint32_t>(v.size() - 1);
      mid[key] = id;
      return id;
    };
    std::vector<std::array<std::uint32_t, 3>> next;
    for (const auto& tri : f) {
      const auto a = midpoint(tri[0], tri[1]);
      const auto b = midpoint(tri[1], tri[2]);
      const auto c = midpoint(tri[2], tri[0]);
      next.push_back({tri[0], a, c});
      next.push_back({tri[1], b, a});
      next.push_back({tri[2], c, b});
      next.push_back({a, b, c});
    }
    f = std::move(next);
  }
  TriangleMesh m;
  for (auto& p : v) m.vertices.push_back(centre + radius * p);
  m.triangles = std::move(f);
  return m;
}

// Digitized solid ball of the given radius (voxels) centred in the grid.
inline mceage::BinaryMask sphereMask(double radius, int dim, Vec3 centre, const Vec3& spacing = {1, 1, 1}) {
  mceage::BinaryMask mask(mceage::VolumeGeometry{{dim, dim, dim}, spacing, {}}, std::uint8_t{0});
  for (int k = 0; k < dim; ++k)
    for (int j = 0; j < dim; ++j)
      for (int i = 0; i < dim; ++i) {
        const double dx = i - centre.x, dy = j - centre.y, dz = k - centre.z;
        if (dx * dx + dy * dy + dz * dz <= radius * radius) mask.at(i, j, k) = 1;
      }
  return mask;
}

inline std::array<double, 9> rotation(double ax, double ay, double az) {
  const double cx = std::cos(ax), sx = std::sin(ax), cy = std::cos(ay), sy = std::sin(ay), cz = std::cos(az),
               sz = std::sin(az);
  // Rz * Ry * Rx
  return {cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx,
          sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx,
          -sy,     cy * sx,                cy * cx};
}

}  // namespace shapes
