#include "mceage/volume.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

namespace mceage {

namespace {

constexpr const char* kAxisConvention = "fig2d";

template <class T>
void appendLittleEndian(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(std::begin(bytes), std::end(bytes));
  }
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T readLittleEndian(const char* src) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, src, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(std::begin(bytes), std::end(bytes));
  }
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

nlohmann::json geometryHeader(const VolumeGeometry& g, const char* dtype) {
  nlohmann::json header;
  header["dims"] = {g.dims.x, g.dims.y, g.dims.z};
  header["spacing_mm"] = {g.spacing.x, g.spacing.y, g.spacing.z};
  header["origin_mm"] = {g.origin.x, g.origin.y, g.origin.z};
  header["dtype"] = dtype;
  header["axis_convention"] = kAxisConvention;
  return header;
}

template <class T>
void writeCtv(const std::filesystem::path& path, const Grid3<T>& volume, const char* dtype,
              const nlohmann::json& extra) {
  nlohmann::json header = geometryHeader(volume.geometry(), dtype);
  if (extra.is_object()) {
    for (const auto& [key, value] : extra.items()) header[key] = value;
  }
  std::string blob = header.dump();
  blob.push_back('\n');
  blob.push_back('\0');
  blob.reserve(blob.size() + volume.data().size() * sizeof(T));
  for (T v : volume.data()) appendLittleEndian(blob, v);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatError::Kind::Io, "cannot open for writing: " + path.string());
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw FormatError(FormatError::Kind::Io, "write failed: " + path.string());
}

struct RawCtv {
  nlohmann::json header;
  VolumeGeometry geometry;
  std::string payload;
};

RawCtv readCtv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::Io, "cannot open: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string blob = ss.str();

  const auto terminator = blob.find(std::string("\n\0", 2));
  if (terminator == std::string::npos) {
    throw FormatError(FormatError::Kind::MalformedHeader, "missing header terminator in " + path.string());
  }
  RawCtv raw;
  try {
    raw.header = nlohmann::json::parse(blob.substr(0, terminator));
    const auto& dims = raw.header.at("dims");
    const auto& spacing = raw.header.at("spacing_mm");
    const auto& origin = raw.header.at("origin_mm");
    if (dims.size() != 3 || spacing.size() != 3 || origin.size() != 3) {
      throw FormatError(FormatError::Kind::MalformedHeader, "dims/spacing/origin must have 3 entries");
    }
    raw.geometry.dims = {dims[0].get<int>(), dims[1].get<int>(), dims[2].get<int>()};
    raw.geometry.spacing = {spacing[0].get<double>(), spacing[1].get<double>(), spacing[2].get<double>()};
    raw.geometry.origin = {origin[0].get<double>(), origin[1].get<double>(), origin[2].get<double>()};
    if (raw.header.value("axis_convention", std::string()) != kAxisConvention) {
      throw FormatError(FormatError::Kind::MalformedHeader, "unsupported axis convention");
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::MalformedHeader, std::string("bad .ctv header: ") + e.what());
  }
  if (raw.geometry.dims.x <= 0 || raw.geometry.dims.y <= 0 || raw.geometry.dims.z <= 0) {
    throw FormatError(FormatError::Kind::MalformedHeader, "dims must be positive");
  }
  if (!(raw.geometry.spacing.x > 0 && raw.geometry.spacing.y > 0 && raw.geometry.spacing.z > 0)) {
    throw FormatError(FormatError::Kind::InvalidSpacing, "spacing must be strictly positive");
  }
  raw.payload = blob.substr(terminator + 2);
  return raw;
}

template <class T>
std::vector<T> decodePayload(const RawCtv& raw) {
  const std::size_t n = raw.geometry.dims.count();
  if (raw.payload.size() != n * sizeof(T)) {
    throw FormatError(FormatError::Kind::SizeMismatch,
                      "payload holds " + std::to_string(raw.payload.size() / sizeof(T)) + " voxels, header declares " +
                          std::to_string(n));
  }
  std::vector<T> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = readLittleEndian<T>(raw.payload.data() + i * sizeof(T));
  return data;
}

// Plane sampling shared by the HU and float variants.
template <class T, class Map>
PlanarSlice planeOf(const Grid3<T>& volume, View view, int index, Map map) {
  const Dims3 d = volume.dims();
  const int axis = normalAxis(view);
  if (index < 0 || index >= d[axis]) {
    throw InvalidArgument("slice index " + std::to_string(index) + " outside [0, " + std::to_string(d[axis]) + ")");
  }
  PlanarSlice s;
  s.view = view;
  s.index = index;
  switch (view) {
    case View::Axial:
      s.rows = d.y;
      s.cols = d.x;
      s.pixelSpacing = volume.spacing().x;
      s.pixels.resize(static_cast<std::size_t>(s.rows) * s.cols);
      for (int j = 0; j < d.y; ++j)
        for (int i = 0; i < d.x; ++i) s.pixels[static_cast<std::size_t>(j) * d.x + i] = map(volume.at(i, j, index));
      break;
    case View::Coronal:
      s.rows = d.z;
      s.cols = d.x;
      s.pixelSpacing = volume.spacing().x;
      s.pixels.resize(static_cast<std::size_t>(s.rows) * s.cols);
      for (int k = 0; k < d.z; ++k)
        for (int i = 0; i < d.x; ++i) s.pixels[static_cast<std::size_t>(k) * d.x + i] = map(volume.at(i, index, k));
      break;
    case View::Sagittal:
      s.rows = d.z;
      s.cols = d.y;
      s.pixelSpacing = volume.spacing().y;
      s.pixels.resize(static_cast<std::size_t>(s.rows) * s.cols);
      for (int k = 0; k < d.z; ++k)
        for (int j = 0; j < d.y; ++j) s.pixels[static_cast<std::size_t>(k) * d.y + j] = map(volume.at(index, j, k));
      break;
  }
  return s;
}

}  // namespace

void VolumeGeometry::validate() const {
  if (dims.x <= 0 || dims.y <= 0 || dims.z <= 0) throw InvalidArgument("volume dims must be positive");
  if (!(spacing.x > 0 && spacing.y > 0 && spacing.z > 0)) {
    throw FormatError(FormatError::Kind::InvalidSpacing, "spacing must be strictly positive");
  }
}

std::string nameOf(View view) {
  switch (view) {
    case View::Axial: return "axial";
    case View::Coronal: return "coronal";
    case View::Sagittal: return "sagittal";
  }
  return "?";
}

View viewFromString(std::string_view name) {
  if (name == "axial") return View::Axial;
  if (name == "coronal") return View::Coronal;
  if (name == "sagittal") return View::Sagittal;
  throw InvalidArgument("unknown view: " + std::string(name));
}

int normalAxis(View view) {
  switch (view) {
    case View::Axial: return 2;
    case View::Coronal: return 1;
    case View::Sagittal: return 0;
  }
  return 2;
}

HuVolume loadVolume(const std::filesystem::path& path) {
  const RawCtv raw = readCtv(path);
  if (raw.header.value("dtype", std::string()) != "i16le") {
    throw FormatError(FormatError::Kind::UnsupportedDtype, "expected dtype i16le in " + path.string());
  }
  std::vector<std::int16_t> data = decodePayload<std::int16_t>(raw);
  for (std::int16_t v : data) {
    if (v < kMinHu || v > kMaxHu) {
      throw FormatError(FormatError::Kind::ValueRange, "HU value " + std::to_string(v) + " outside [-1024, 3071]");
    }
  }
  return HuVolume(raw.geometry, std::move(data));
}

void saveVolume(const std::filesystem::path& path, const HuVolume& volume, const nlohmann::json& extraHeader) {
  writeCtv(path, volume, "i16le", extraHeader);
}

FloatVolume loadFloatVolume(const std::filesystem::path& path, nlohmann::json* header) {
  RawCtv raw = readCtv(path);
  if (raw.header.value("dtype", std::string()) != "f32le") {
    throw FormatError(FormatError::Kind::UnsupportedDtype, "expected dtype f32le in " + path.string());
  }
  FloatVolume volume(raw.geometry, decodePayload<float>(raw));
  if (header) *header = std::move(raw.header);
  return volume;
}

void saveFloatVolume(const std::filesystem::path& path, const FloatVolume& volume, const nlohmann::json& extraHeader) {
  writeCtv(path, volume, "f32le", extraHeader);
}

BinaryMask thresholdBone(const HuVolume& volume, int threshold) {
  BinaryMask mask(volume.geometry(), std::uint8_t{0});
  const auto& src = volume.data();
  auto& dst = mask.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] >= threshold ? 1 : 0;
  return mask;
}

double sampleTrilinear(const HuVolume& volume, const Vec3& world, double padValue) {
  const Vec3 idx = volume.geometry().indexOf(world);
  const int i0 = static_cast<int>(std::floor(idx.x));
  const int j0 = static_cast<int>(std::floor(idx.y));
  const int k0 = static_cast<int>(std::floor(idx.z));
  const double fx = idx.x - i0;
  const double fy = idx.y - j0;
  const double fz = idx.z - k0;
  auto value = [&](int i, int j, int k) -> double {
    return volume.contains(i, j, k) ? static_cast<double>(volume.at(i, j, k)) : padValue;
  };
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz) {
    const double wz = dz ? fz : 1.0 - fz;
    if (wz == 0.0) continue;
    for (int dy = 0; dy < 2; ++dy) {
      const double wy = dy ? fy : 1.0 - fy;
      if (wy == 0.0) continue;
      for (int dx = 0; dx < 2; ++dx) {
        const double wx = dx ? fx : 1.0 - fx;
        if (wx == 0.0) continue;
        acc += wx * wy * wz * value(i0 + dx, j0 + dy, k0 + dz);
      }
    }
  }
  return acc;
}

HuVolume resampleIsotropic(const HuVolume& volume, double targetSpacing) {
  if (!(targetSpacing > 0)) throw InvalidArgument("target spacing must be positive");
  const Dims3 d = volume.dims();
  if (d.x < 2 || d.y < 2 || d.z < 2) throw InvalidArgument("cannot resample a volume with a single-voxel axis");

  VolumeGeometry out;
  out.spacing = {targetSpacing, targetSpacing, targetSpacing};
  out.origin = volume.origin();
  int n[3];
  for (int a = 0; a < 3; ++a) {
    n[a] = std::max(1, static_cast<int>(std::lround(d[a] * volume.spacing()[a] / targetSpacing)));
  }
  out.dims = {n[0], n[1], n[2]};
  HuVolume result(out, std::int16_t{0});

  // Per-axis lower neighbour and weight; the last segment is extended linearly
  // past the final voxel centre so linear fields stay exact.
  struct Tap {
    int lo;
    double w;
  };
  std::vector<Tap> taps[3];
  for (int a = 0; a < 3; ++a) {
    taps[a].resize(n[a]);
    for (int s = 0; s < n[a]; ++s) {
      const double pos = s * targetSpacing / volume.spacing()[a];
      const int lo = std::clamp(static_cast<int>(std::floor(pos)), 0, d[a] - 2);
      taps[a][s] = {lo, pos - lo};
    }
  }
  for (int k = 0; k < n[2]; ++k) {
    const Tap tz = taps[2][k];
    for (int j = 0; j < n[1]; ++j) {
      const Tap ty = taps[1][j];
      for (int i = 0; i < n[0]; ++i) {
        const Tap tx = taps[0][i];
        double acc = 0.0;
        for (int dz = 0; dz < 2; ++dz) {
          const double wz = dz ? tz.w : 1.0 - tz.w;
          for (int dy = 0; dy < 2; ++dy) {
            const double wy = dy ? ty.w : 1.0 - ty.w;
            for (int dx = 0; dx < 2; ++dx) {
              const double wx = dx ? tx.w : 1.0 - tx.w;
              acc += wx * wy * wz * volume.at(tx.lo + dx, ty.lo + dy, tz.lo + dz);
            }
          }
        }
        const long rounded = std::lround(acc);
        result.at(i, j, k) = static_cast<std::int16_t>(std::clamp<long>(rounded, kMinHu, kMaxHu));
      }
    }
  }
  return result;
}

HuVolume cropBox(const HuVolume& volume, const AxisBox& box, double padValue) {
  if (box.degenerate()) throw InvalidArgument("crop box is degenerate");
  VolumeGeometry out;
  out.spacing = volume.spacing();
  out.origin = box.min;
  int n[3];
  for (int a = 0; a < 3; ++a) {
    n[a] = std::max(1, static_cast<int>(std::lround((box.max[a] - box.min[a]) / out.spacing[a])));
  }
  out.dims = {n[0], n[1], n[2]};
  HuVolume result(out, std::int16_t{0});
  for (int k = 0; k < n[2]; ++k) {
    for (int j = 0; j < n[1]; ++j) {
      for (int i = 0; i < n[0]; ++i) {
        const double v = sampleTrilinear(volume, out.worldOf(i, j, k), padValue);
        result.at(i, j, k) = static_cast<std::int16_t>(std::clamp<long>(std::lround(v), kMinHu, kMaxHu));
      }
    }
  }
  return result;
}

PlanarSlice extractSlice(const HuVolume& volume, View view, int index) {
  return planeOf(volume, view, index, [](std::int16_t hu) { return windowHu(hu); });
}

PlanarSlice extractSlice(const FloatVolume& volume, View view, int index) {
  return planeOf(volume, view, index, [](float v) { return v; });
}

}  // namespace mceage
