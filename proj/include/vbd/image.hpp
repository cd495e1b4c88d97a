#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace vbd {

/// Clamp-and-round a floating point intensity back to 8 bits.
/// std::round rounds half away from zero.
inline std::uint8_t quantize(double v) {
  const double r = std::round(v);
  if (r <= 0.0) return 0;
  if (r >= 255.0) return 255;
  return static_cast<std::uint8_t>(r);
}

/// Single-channel 8-bit raster, row-major.
struct ChannelPlane {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> samples;

  ChannelPlane() = default;
  ChannelPlane(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), samples(static_cast<std::size_t>(w) * h, fill) {
    if (w <= 0 || h <= 0) throw std::invalid_argument("ChannelPlane: non-positive dimensions");
  }

  std::uint8_t at(int x, int y) const { return samples[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return samples[static_cast<std::size_t>(y) * width + x]; }

  bool operator==(const ChannelPlane&) const = default;
};

/// 8-bit RGB raster with interleaved (R,G,B) triples, row-major.
struct Frame {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> samples;

  Frame() = default;
  Frame(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), samples(static_cast<std::size_t>(w) * h * 3, fill) {
    if (w <= 0 || h <= 0) throw std::invalid_argument("Frame: non-positive dimensions");
  }
  Frame(int w, int h, std::vector<std::uint8_t> data) : width(w), height(h), samples(std::move(data)) {
    if (w <= 0 || h <= 0) throw std::invalid_argument("Frame: non-positive dimensions");
    if (samples.size() != static_cast<std::size_t>(w) * h * 3)
      throw std::invalid_argument("Frame: sample count does not match width*height*3");
  }

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  std::uint8_t at(int x, int y, int c) const {
    return samples[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t& at(int x, int y, int c) { return samples[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
    samples[i] = r;
    samples[i + 1] = g;
    samples[i + 2] = b;
  }

  bool operator==(const Frame&) const = default;
};

inline std::array<ChannelPlane, 3> split_channels(const Frame& f) {
  std::array<ChannelPlane, 3> out{ChannelPlane(f.width, f.height), ChannelPlane(f.width, f.height),
                                  ChannelPlane(f.width, f.height)};
  const std::size_t n = f.pixel_count();
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) out[c].samples[i] = f.samples[i * 3 + c];
  return out;
}

inline Frame recompose(const ChannelPlane& r, const ChannelPlane& g, const ChannelPlane& b) {
  if (r.width != g.width || r.width != b.width || r.height != g.height || r.height != b.height)
    throw std::invalid_argument("recompose: plane dimensions differ");
  Frame f(r.width, r.height);
  const std::size_t n = f.pixel_count();
  for (std::size_t i = 0; i < n; ++i) {
    f.samples[i * 3] = r.samples[i];
    f.samples[i * 3 + 1] = g.samples[i];
    f.samples[i * 3 + 2] = b.samples[i];
  }
  return f;
}

inline Frame recompose(const std::array<ChannelPlane, 3>& planes) {
  return recompose(planes[0], planes[1], planes[2]);
}

/// BT.601 luma, rounded and clamped.
inline double luma_of(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

inline ChannelPlane to_luma(const Frame& f) {
  ChannelPlane y(f.width, f.height);
  const std::size_t n = f.pixel_count();
  for (std::size_t i = 0; i < n; ++i)
    y.samples[i] = quantize(luma_of(f.samples[i * 3], f.samples[i * 3 + 1], f.samples[i * 3 + 2]));
  return y;
}

/// 64-bit FNV-1a over dimensions and samples; used as the content hash in manifests.
inline std::uint64_t content_hash(const Frame& f) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint8_t byte) {
    h ^= byte;
    h *= 0x100000001b3ULL;
  };
  for (int shift = 0; shift < 32; shift += 8) mix(static_cast<std::uint8_t>(f.width >> shift));
  for (int shift = 0; shift < 32; shift += 8) mix(static_cast<std::uint8_t>(f.height >> shift));
  for (auto s : f.samples) mix(s);
  return h;
}

}  // namespace vbd
