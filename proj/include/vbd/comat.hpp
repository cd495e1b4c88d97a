#pragma once

// Six-band pixel co-occurrence tensor: three spatial matrices (one per color
// channel, displacement (1,1)) and three cross-band matrices (RG, RB, GB,
// displacement (0,0)).

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vbd/binio.hpp"
#include "vbd/image.hpp"

namespace vbd {

struct Displacement {
  int dx = 0;
  int dy = 0;
  bool operator==(const Displacement&) const = default;
};

enum class CoMatKind : std::uint8_t { spatial, crossband };

/// bins x bins grid of counts (or frequencies once normalized), row index = first value.
struct CoMatPlane {
  int bins = 256;
  CoMatKind kind = CoMatKind::spatial;
  Displacement displacement{};
  std::vector<double> counts;

  CoMatPlane() = default;
  CoMatPlane(int b, CoMatKind k, Displacement d)
      : bins(b), kind(k), displacement(d), counts(static_cast<std::size_t>(b) * b, 0.0) {}

  double at(int i, int j) const { return counts[static_cast<std::size_t>(i) * bins + j]; }
  double& at(int i, int j) { return counts[static_cast<std::size_t>(i) * bins + j]; }
  double total() const { return std::accumulate(counts.begin(), counts.end(), 0.0); }

  bool operator==(const CoMatPlane&) const = default;
};

/// Plane order is fixed: R, G, B, RG, RB, GB.
struct CoMatTensor {
  static constexpr int kPlanes = 6;
  static constexpr Displacement kSpatialOffset{1, 1};
  static constexpr Displacement kCrossOffset{0, 0};

  int bins = 256;
  bool normalized = false;
  int source_width = 0;
  int source_height = 0;
  std::array<CoMatPlane, kPlanes> planes;

  /// Flat plane-major, then row-major copy.
  std::vector<float> flatten() const {
    std::vector<float> out;
    out.reserve(static_cast<std::size_t>(kPlanes) * bins * bins);
    for (const auto& p : planes)
      for (double v : p.counts) out.push_back(static_cast<float>(v));
    return out;
  }

  bool operator==(const CoMatTensor&) const = default;
};

inline CoMatPlane spatial_comat(const ChannelPlane& plane, Displacement d) {
  if (d.dx < 0 || d.dy < 0) throw std::invalid_argument("spatial_comat: negative displacement");
  if (d.dx >= plane.width || d.dy >= plane.height)
    throw std::invalid_argument("spatial_comat: displacement exceeds plane dimensions");
  CoMatPlane out(256, CoMatKind::spatial, d);
  const int w = plane.width;
  for (int y = 0; y + d.dy < plane.height; ++y) {
    const std::uint8_t* row = plane.samples.data() + static_cast<std::size_t>(y) * w;
    const std::uint8_t* next = plane.samples.data() + static_cast<std::size_t>(y + d.dy) * w + d.dx;
    for (int x = 0; x + d.dx < w; ++x) out.counts[static_cast<std::size_t>(row[x]) * 256 + next[x]] += 1.0;
  }
  return out;
}

inline CoMatPlane crossband_comat(const ChannelPlane& a, const ChannelPlane& b, Displacement d) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument("crossband_comat: plane dimensions differ");
  if (d.dx < 0 || d.dy < 0) throw std::invalid_argument("crossband_comat: negative displacement");
  if (d.dx >= a.width || d.dy >= a.height)
    throw std::invalid_argument("crossband_comat: displacement exceeds plane dimensions");
  CoMatPlane out(256, CoMatKind::crossband, d);
  const int w = a.width;
  for (int y = 0; y + d.dy < a.height; ++y) {
    const std::uint8_t* ra = a.samples.data() + static_cast<std::size_t>(y) * w;
    const std::uint8_t* rb = b.samples.data() + static_cast<std::size_t>(y + d.dy) * w + d.dx;
    for (int x = 0; x + d.dx < w; ++x) out.counts[static_cast<std::size_t>(ra[x]) * 256 + rb[x]] += 1.0;
  }
  return out;
}

inline void normalize_plane(CoMatPlane& p) {
  const double t = p.total();
  if (t <= 0.0) return;
  for (auto& v : p.counts) v /= t;
}

inline CoMatTensor build_tensor(const Frame& frame, bool normalize = true) {
  const auto ch = split_channels(frame);
  CoMatTensor t;
  t.bins = 256;
  t.source_width = frame.width;
  t.source_height = frame.height;
  t.planes[0] = spatial_comat(ch[0], CoMatTensor::kSpatialOffset);
  t.planes[1] = spatial_comat(ch[1], CoMatTensor::kSpatialOffset);
  t.planes[2] = spatial_comat(ch[2], CoMatTensor::kSpatialOffset);
  t.planes[3] = crossband_comat(ch[0], ch[1], CoMatTensor::kCrossOffset);
  t.planes[4] = crossband_comat(ch[0], ch[2], CoMatTensor::kCrossOffset);
  t.planes[5] = crossband_comat(ch[1], ch[2], CoMatTensor::kCrossOffset);
  if (normalize) {
    for (auto& p : t.planes) normalize_plane(p);
    t.normalized = true;
  }
  return t;
}

/// Sums counts over contiguous (bins/new_bins)-wide intensity blocks.
inline CoMatTensor rebin_tensor(const CoMatTensor& t, int new_bins) {
  if (new_bins <= 0 || t.bins % new_bins != 0)
    throw std::invalid_argument("rebin_tensor: " + std::to_string(new_bins) + " does not divide " +
                                std::to_string(t.bins));
  if (new_bins == t.bins) return t;
  const int block = t.bins / new_bins;
  CoMatTensor out = t;
  out.bins = new_bins;
  for (int p = 0; p < CoMatTensor::kPlanes; ++p) {
    const auto& src = t.planes[p];
    CoMatPlane dst(new_bins, src.kind, src.displacement);
    for (int i = 0; i < t.bins; ++i)
      for (int j = 0; j < t.bins; ++j) dst.at(i / block, j / block) += src.at(i, j);
    out.planes[p] = std::move(dst);
  }
  return out;
}

// -- serialization ----------------------------------------------------------
//
// 16-byte header: magic "CMT6", then little-endian u32 bin_count, width, height.
// Body: bins*bins*6 little-endian float32, plane-major then row-major.

inline void write_tensor(const CoMatTensor& t, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  binio::write_magic(out, "CMT6");
  binio::write_u32(out, static_cast<std::uint32_t>(t.bins));
  binio::write_u32(out, static_cast<std::uint32_t>(t.source_width));
  binio::write_u32(out, static_cast<std::uint32_t>(t.source_height));
  for (float v : t.flatten()) binio::write_f32(out, v);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline void write_tensor_sidecar(const CoMatTensor& t, const std::filesystem::path& path,
                                 const std::string& source) {
  nlohmann::ordered_json j;
  j["format"] = "CMT6";
  j["source"] = source;
  j["normalize"] = t.normalized;
  j["bin_count"] = t.bins;
  j["width"] = t.source_width;
  j["height"] = t.source_height;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

/// Reads a CMT6 file. Values are float32 on disk; `normalized` is taken from the caller.
inline CoMatTensor read_tensor(const std::filesystem::path& path, bool normalized = true) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  binio::expect_magic(in, "CMT6");
  CoMatTensor t;
  t.bins = static_cast<int>(binio::read_u32(in));
  t.source_width = static_cast<int>(binio::read_u32(in));
  t.source_height = static_cast<int>(binio::read_u32(in));
  t.normalized = normalized;
  if (t.bins <= 0 || t.bins > 256) throw std::runtime_error("CMT6: bad bin count");
  for (int p = 0; p < CoMatTensor::kPlanes; ++p) {
    CoMatPlane plane(t.bins, p < 3 ? CoMatKind::spatial : CoMatKind::crossband,
                     p < 3 ? CoMatTensor::kSpatialOffset : CoMatTensor::kCrossOffset);
    for (auto& v : plane.counts) v = binio::read_f32(in);
    t.planes[p] = std::move(plane);
  }
  return t;
}

}  // namespace vbd
