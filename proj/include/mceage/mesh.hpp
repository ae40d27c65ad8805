#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mceage/geometry.hpp"
#include "mceage/volume.hpp"

namespace mceage {

// Triangle soup with shared vertices; triangles wind counter-clockwise when
// seen from outside the enclosed solid.
struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;

  bool empty() const { return triangles.empty(); }
};

struct ComponentSet {
  std::vector<TriangleMesh> components;
  std::string sourceVolumeId;
};

// Isosurface of the 0/1 mask at 0.5. The grid is treated as surrounded by
// background so every region yields closed surfaces. Ambiguous cube faces
// always separate diagonal foreground corners, which keeps adjacent cubes
// consistent and the output watertight.
TriangleMesh marchingCubes(const BinaryMask& mask);

// Partition by shared vertices; ordered by descending triangle count, ties by
// smallest original vertex index.
ComponentSet connectedComponents(const TriangleMesh& mesh);

// Threshold, mesh and split a CT volume into bone surfaces. Inward-facing
// shells (enclosed soft-tissue cavities, negative volume) are dropped.
ComponentSet boneComponents(const HuVolume& volume, int threshold = 300);

double surfaceArea(const TriangleMesh& mesh);
// Every directed edge is matched by exactly one opposite edge.
bool isWatertight(const TriangleMesh& mesh);
// Divergence theorem over oriented triangles; throws on open meshes.
double enclosedVolume(const TriangleMesh& mesh);
AxisBox boundingBox(const TriangleMesh& mesh);
Vec3 areaCentroid(const TriangleMesh& mesh);

struct Extents {
  double length = 0.0;
  double width = 0.0;
  double height = 0.0;
};
// Extents along the principal axes of the area-weighted surface covariance,
// sorted descending.
Extents obbExtents(const TriangleMesh& mesh);

// Row-major 3x3 rotation followed by translation.
TriangleMesh transformed(const TriangleMesh& mesh, const std::array<double, 9>& rotation, const Vec3& translation = {});
TriangleMesh scaled(const TriangleMesh& mesh, double factor);
// Reflection matching mirrorX() on the same geometry; winding is reversed so
// normals stay outward.
TriangleMesh mirrorMeshX(const TriangleMesh& mesh, const VolumeGeometry& geometry);

void writeOff(const std::filesystem::path& path, const TriangleMesh& mesh);

}  // namespace mceage
