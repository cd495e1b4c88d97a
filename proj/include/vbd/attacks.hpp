#pragma once

// Post-processing / laundering operations used to stress the detectors.
// All operations are pure functions of (frame, parameters, seed).

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "vbd/image.hpp"
#include "vbd/image_io.hpp"

namespace vbd {

namespace detail {

inline int clamp_index(int v, int n) { return v < 0 ? 0 : (v >= n ? n - 1 : v); }

inline void require_odd_kernel(int k, const Frame& f, const char* op) {
  if (k < 1 || k % 2 == 0) throw std::invalid_argument(std::string(op) + ": kernel size must be odd and positive");
  if (k > std::min(f.width, f.height)) throw std::invalid_argument(std::string(op) + ": kernel larger than frame");
}

/// Catmull-Rom cubic convolution kernel (a = -0.5).
inline double cubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

struct CubicTaps {
  std::array<int, 4> index;
  std::array<double, 4> weight;
};

inline CubicTaps cubic_taps(double pos, int n) {
  const double fl = std::floor(pos);
  const double frac = pos - fl;
  const int base = static_cast<int>(fl);
  CubicTaps t{};
  for (int k = 0; k < 4; ++k) {
    t.index[k] = clamp_index(base - 1 + k, n);
    t.weight[k] = cubic_weight(frac - static_cast<double>(k - 1));
  }
  return t;
}

/// Bicubic sample of all three channels at a real-valued source position, edge-replicated.
inline std::array<double, 3> sample_bicubic(const Frame& f, double sx, double sy) {
  const auto tx = cubic_taps(sx, f.width);
  const auto ty = cubic_taps(sy, f.height);
  std::array<double, 3> acc{0.0, 0.0, 0.0};
  for (int j = 0; j < 4; ++j) {
    if (ty.weight[j] == 0.0) continue;
    std::array<double, 3> row{0.0, 0.0, 0.0};
    for (int i = 0; i < 4; ++i) {
      if (tx.weight[i] == 0.0) continue;
      for (int c = 0; c < 3; ++c) row[c] += tx.weight[i] * f.at(tx.index[i], ty.index[j], c);
    }
    for (int c = 0; c < 3; ++c) acc[c] += ty.weight[j] * row[c];
  }
  return acc;
}

/// Bicubic resampling to an explicit size; pixel-center aligned.
inline Frame resample_bicubic(const Frame& f, int out_w, int out_h) {
  if (out_w == f.width && out_h == f.height) return f;
  Frame out(out_w, out_h);
  const double rx = static_cast<double>(f.width) / out_w;
  const double ry = static_cast<double>(f.height) / out_h;
  std::vector<CubicTaps> cols(out_w);
  for (int x = 0; x < out_w; ++x) cols[x] = cubic_taps((x + 0.5) * rx - 0.5, f.width);
  for (int y = 0; y < out_h; ++y) {
    const auto ty = cubic_taps((y + 0.5) * ry - 0.5, f.height);
    for (int x = 0; x < out_w; ++x) {
      const auto& tx = cols[x];
      std::array<double, 3> acc{0.0, 0.0, 0.0};
      for (int j = 0; j < 4; ++j) {
        std::array<double, 3> row{0.0, 0.0, 0.0};
        for (int i = 0; i < 4; ++i)
          for (int c = 0; c < 3; ++c) row[c] += tx.weight[i] * f.at(tx.index[i], ty.index[j], c);
        for (int c = 0; c < 3; ++c) acc[c] += ty.weight[j] * row[c];
      }
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = quantize(acc[c]);
    }
  }
  return out;
}

/// Separable 3-tap Gaussian (sigma = 1) with edge replication, kept in floating point.
inline std::vector<double> gaussian3x3(const Frame& f) {
  const double e = std::exp(-0.5);
  const double norm = 1.0 + 2.0 * e;
  const double k[3] = {e / norm, 1.0 / norm, e / norm};
  const int w = f.width, h = f.height;
  std::vector<double> tmp(f.samples.size()), out(f.samples.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int d = -1; d <= 1; ++d) s += k[d + 1] * f.at(clamp_index(x + d, w), y, c);
        tmp[(static_cast<std::size_t>(y) * w + x) * 3 + c] = s;
      }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int d = -1; d <= 1; ++d)
          s += k[d + 1] * tmp[(static_cast<std::size_t>(clamp_index(y + d, h)) * w + x) * 3 + c];
        out[(static_cast<std::size_t>(y) * w + x) * 3 + c] = s;
      }
  return out;
}

}  // namespace detail

// -- filters ------------------------------------------------------------------

/// Per-channel k x k median with edge replication.
inline Frame median_filter(const Frame& f, int k) {
  detail::require_odd_kernel(k, f, "median_filter");
  const int r = k / 2;
  Frame out(f.width, f.height);
  std::vector<std::uint8_t> window(static_cast<std::size_t>(k) * k);
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x)
      for (int c = 0; c < 3; ++c) {
        std::size_t n = 0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx)
            window[n++] = f.at(detail::clamp_index(x + dx, f.width), detail::clamp_index(y + dy, f.height), c);
        auto mid = window.begin() + static_cast<std::ptrdiff_t>(window.size() / 2);
        std::nth_element(window.begin(), mid, window.end());
        out.at(x, y, c) = *mid;
      }
  return out;
}

/// k x k box mean with edge replication.
inline Frame average_blur(const Frame& f, int k) {
  detail::require_odd_kernel(k, f, "average_blur");
  const int r = k / 2;
  const double area = static_cast<double>(k) * k;
  Frame out(f.width, f.height);
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x)
      for (int c = 0; c < 3; ++c) {
        int sum = 0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx)
            sum += f.at(detail::clamp_index(x + dx, f.width), detail::clamp_index(y + dy, f.height), c);
        out.at(x, y, c) = quantize(sum / area);
      }
  return out;
}

inline Frame gamma_correct(const Frame& f, double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("gamma_correct: gamma must be > 0");
  std::array<std::uint8_t, 256> lut{};
  for (int v = 0; v < 256; ++v) lut[v] = quantize(255.0 * std::pow(v / 255.0, gamma));
  Frame out = f;
  for (auto& s : out.samples) s = lut[s];
  return out;
}

/// Contrast-limited adaptive histogram equalization on BT.601 luma over an
/// 8 x 8 tile grid; the per-pixel offset of each channel from luma is kept.
/// A tile whose luma occupies a single histogram bin maps through the identity.
inline Frame clahe(const Frame& f, double clip_limit, int grid = 8) {
  if (!(clip_limit > 0.0)) throw std::invalid_argument("clahe: clip_limit must be > 0");
  const int gx = std::min(grid, f.width), gy = std::min(grid, f.height);
  const ChannelPlane luma = to_luma(f);
  const double tw = static_cast<double>(f.width) / gx;
  const double th = static_cast<double>(f.height) / gy;

  std::vector<std::array<double, 256>> luts(static_cast<std::size_t>(gx) * gy);
  for (int ty = 0; ty < gy; ++ty)
    for (int tx = 0; tx < gx; ++tx) {
      const int x0 = tx * f.width / gx, x1 = (tx + 1) * f.width / gx;
      const int y0 = ty * f.height / gy, y1 = (ty + 1) * f.height / gy;
      std::array<int, 256> hist{};
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) ++hist[luma.at(x, y)];
      const int area = (x1 - x0) * (y1 - y0);
      auto& lut = luts[static_cast<std::size_t>(ty) * gx + tx];
      const auto occupied = std::count_if(hist.begin(), hist.end(), [](int h) { return h > 0; });
      if (occupied <= 1) {
        for (int i = 0; i < 256; ++i) lut[i] = i;
        continue;
      }
      const int clip = std::max(1, static_cast<int>(clip_limit * area / 256.0));
      int excess = 0;
      for (auto& h : hist)
        if (h > clip) {
          excess += h - clip;
          h = clip;
        }
      const int batch = excess / 256;
      int residual = excess - batch * 256;
      for (auto& h : hist) h += batch;
      if (residual > 0) {
        const int step = std::max(256 / residual, 1);
        for (int i = 0; i < 256 && residual > 0; i += step, --residual) ++hist[i];
      }
      const double scale = 255.0 / area;
      int cdf = 0;
      for (int i = 0; i < 256; ++i) {
        cdf += hist[i];
        lut[i] = quantize(cdf * scale);
      }
    }

  Frame out(f.width, f.height);
  for (int y = 0; y < f.height; ++y) {
    const double fy = (y + 0.5) / th - 0.5;
    const int ty0 = static_cast<int>(std::floor(fy));
    const double wy = fy - ty0;
    const int ya = detail::clamp_index(ty0, gy), yb = detail::clamp_index(ty0 + 1, gy);
    for (int x = 0; x < f.width; ++x) {
      const double fx = (x + 0.5) / tw - 0.5;
      const int tx0 = static_cast<int>(std::floor(fx));
      const double wx = fx - tx0;
      const int xa = detail::clamp_index(tx0, gx), xb = detail::clamp_index(tx0 + 1, gx);
      const int v = luma.at(x, y);
      auto lut_at = [&](int tx, int ty) { return luts[static_cast<std::size_t>(ty) * gx + tx][v]; };
      const double mapped = (1.0 - wy) * ((1.0 - wx) * lut_at(xa, ya) + wx * lut_at(xb, ya)) +
                            wy * ((1.0 - wx) * lut_at(xa, yb) + wx * lut_at(xb, yb));
      const double shift = mapped - v;
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = quantize(f.at(x, y, c) + shift);
    }
  }
  return out;
}

inline Frame gaussian_noise(const Frame& f, double sigma, std::uint64_t seed) {
  if (sigma < 0.0) throw std::invalid_argument("gaussian_noise: sigma must be >= 0");
  if (sigma == 0.0) return f;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  Frame out = f;
  for (auto& s : out.samples) s = quantize(s + noise(rng));
  return out;
}

inline constexpr int kMinFrameSide = 16;

/// Bicubic resize; output dims are round(scale * dims) and must stay >= 16.
inline Frame resize(const Frame& f, double scale) {
  if (!(scale > 0.0)) throw std::invalid_argument("resize: scale must be > 0");
  const int w = static_cast<int>(std::lround(scale * f.width));
  const int h = static_cast<int>(std::lround(scale * f.height));
  if (w < kMinFrameSide || h < kMinFrameSide) throw std::invalid_argument("resize: output smaller than 16 pixels");
  return detail::resample_bicubic(f, w, h);
}

/// Bicubic upscale by `factor`, then center crop back to the input size.
inline Frame zoom(const Frame& f, double factor) {
  if (!(factor > 1.0)) throw std::invalid_argument("zoom: factor must be > 1");
  const int w = static_cast<int>(std::lround(factor * f.width));
  const int h = static_cast<int>(std::lround(factor * f.height));
  const Frame big = detail::resample_bicubic(f, w, h);
  const int ox = (w - f.width) / 2, oy = (h - f.height) / 2;
  Frame out(f.width, f.height);
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = big.at(x + ox, y + oy, c);
  return out;
}

/// Rotation about the image center, bicubic, edge-replicated borders, same size.
inline Frame rotate(const Frame& f, double degrees) {
  if (!(std::abs(degrees) < 45.0)) throw std::invalid_argument("rotate: |degrees| must be < 45");
  if (degrees == 0.0) return f;
  const double th = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(th), sn = std::sin(th);
  const double cx = (f.width - 1) / 2.0, cy = (f.height - 1) / 2.0;
  Frame out(f.width, f.height);
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double sx = cx + cs * dx + sn * dy;
      const double sy = cy - sn * dx + cs * dy;
      const auto v = detail::sample_bicubic(f, sx, sy);
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = quantize(v[c]);
    }
  return out;
}

/// Unsharp mask: in + 1.0 * (in - gaussian3x3(in)).
inline Frame sharpen(const Frame& f) {
  const auto blurred = detail::gaussian3x3(f);
  Frame out(f.width, f.height);
  for (std::size_t i = 0; i < f.samples.size(); ++i)
    out.samples[i] = quantize(2.0 * f.samples[i] - blurred[i]);
  return out;
}

// -- declarative specs ----------------------------------------------------------

namespace attack {
struct Median { int k = 3; };
struct AvgBlur { int k = 3; };
struct Gamma { double gamma = 1.0; };
struct Clahe { double clip_limit = 2.0; };
struct GaussNoise { double sigma = 0.0; std::uint64_t seed = 0; };
struct Resize { double scale = 1.0; };
struct Zoom { double factor = 1.4; };
struct Rotate { double degrees = 0.0; };
struct Sharpen {};
struct Jpeg { int quality = 100; };
}  // namespace attack

using AttackSpec = std::variant<attack::Median, attack::AvgBlur, attack::Gamma, attack::Clahe, attack::GaussNoise,
                                attack::Resize, attack::Zoom, attack::Rotate, attack::Sharpen, attack::Jpeg>;
using AttackChain = std::vector<AttackSpec>;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

inline std::string attack_name(const AttackSpec& s) {
  return std::visit(overloaded{[](const attack::Median&) { return "median"; },
                               [](const attack::AvgBlur&) { return "avg_blur"; },
                               [](const attack::Gamma&) { return "gamma"; },
                               [](const attack::Clahe&) { return "clahe"; },
                               [](const attack::GaussNoise&) { return "gauss_noise"; },
                               [](const attack::Resize&) { return "resize"; },
                               [](const attack::Zoom&) { return "zoom"; },
                               [](const attack::Rotate&) { return "rotate"; },
                               [](const attack::Sharpen&) { return "sharpen"; },
                               [](const attack::Jpeg&) { return "jpeg"; }},
                    s);
}

namespace detail {
/// Shortest representation that round-trips.
inline std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}
}  // namespace detail

/// Parameter as printed in the compact form and in report rows; empty for sharpen.
inline std::string attack_parameter(const AttackSpec& s) {
  using detail::format_number;
  return std::visit(overloaded{[](const attack::Median& a) { return std::to_string(a.k); },
                               [](const attack::AvgBlur& a) { return std::to_string(a.k); },
                               [](const attack::Gamma& a) { return format_number(a.gamma); },
                               [](const attack::Clahe& a) { return format_number(a.clip_limit); },
                               [](const attack::GaussNoise& a) { return format_number(a.sigma); },
                               [](const attack::Resize& a) { return format_number(a.scale); },
                               [](const attack::Zoom& a) { return format_number(a.factor); },
                               [](const attack::Rotate& a) { return format_number(a.degrees); },
                               [](const attack::Sharpen&) { return std::string(); },
                               [](const attack::Jpeg& a) { return std::to_string(a.quality); }},
                    s);
}

inline void validate(const AttackSpec& s) {
  std::visit(overloaded{[](const attack::Median& a) {
                          if (a.k < 1 || a.k % 2 == 0) throw std::invalid_argument("median: kernel must be odd");
                        },
                        [](const attack::AvgBlur& a) {
                          if (a.k < 1 || a.k % 2 == 0) throw std::invalid_argument("avg_blur: kernel must be odd");
                        },
                        [](const attack::Gamma& a) {
                          if (!(a.gamma > 0)) throw std::invalid_argument("gamma: must be > 0");
                        },
                        [](const attack::Clahe& a) {
                          if (!(a.clip_limit > 0)) throw std::invalid_argument("clahe: clip limit must be > 0");
                        },
                        [](const attack::GaussNoise& a) {
                          if (!(a.sigma >= 0)) throw std::invalid_argument("gauss_noise: sigma must be >= 0");
                        },
                        [](const attack::Resize& a) {
                          if (!(a.scale > 0)) throw std::invalid_argument("resize: scale must be > 0");
                        },
                        [](const attack::Zoom& a) {
                          if (!(a.factor > 1)) throw std::invalid_argument("zoom: factor must be > 1");
                        },
                        [](const attack::Rotate& a) {
                          if (!(std::abs(a.degrees) < 45)) throw std::invalid_argument("rotate: |degrees| must be < 45");
                        },
                        [](const attack::Sharpen&) {},
                        [](const attack::Jpeg& a) {
                          if (a.quality < 1 || a.quality > 100) throw std::invalid_argument("jpeg: QF must be in [1,100]");
                        }},
             s);
}

inline Frame apply_attack(const Frame& f, const AttackSpec& s) {
  validate(s);
  return std::visit(overloaded{[&](const attack::Median& a) { return median_filter(f, a.k); },
                               [&](const attack::AvgBlur& a) { return average_blur(f, a.k); },
                               [&](const attack::Gamma& a) { return gamma_correct(f, a.gamma); },
                               [&](const attack::Clahe& a) { return clahe(f, a.clip_limit); },
                               [&](const attack::GaussNoise& a) { return gaussian_noise(f, a.sigma, a.seed); },
                               [&](const attack::Resize& a) { return resize(f, a.scale); },
                               [&](const attack::Zoom& a) { return zoom(f, a.factor); },
                               [&](const attack::Rotate& a) { return rotate(f, a.degrees); },
                               [&](const attack::Sharpen&) { return sharpen(f); },
                               [&](const attack::Jpeg& a) { return jpeg_roundtrip(f, a.quality); }},
                    s);
}

/// Left-to-right composition. An empty chain is the identity.
inline Frame apply_chain(const Frame& f, const AttackChain& chain) {
  Frame cur = f;
  for (const auto& s : chain) cur = apply_attack(cur, s);
  return cur;
}

/// Same chain with every noise seed replaced by `seed` mixed with the per-frame index,
/// so noise differs across frames but stays reproducible.
inline AttackChain reseed_chain(AttackChain chain, std::uint64_t frame_seed) {
  for (auto& s : chain)
    if (auto* n = std::get_if<attack::GaussNoise>(&s)) {
      std::uint64_t z = n->seed + 0x9e3779b97f4a7c15ULL * (frame_seed + 1);
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      n->seed = z ^ (z >> 31);
    }
  return chain;
}

// -- text and JSON forms --------------------------------------------------------
//
// Compact: `op[:param][@seed]` joined by '+', e.g. `median:3+jpeg:80`, `gauss_noise:2@7`.

namespace detail {
inline double parse_number(const std::string& text, const std::string& op) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument(op + ": bad parameter '" + text + "'");
  }
  if (used != text.size()) throw std::invalid_argument(op + ": bad parameter '" + text + "'");
  return v;
}

inline int parse_int(const std::string& text, const std::string& op) {
  const double v = parse_number(text, op);
  if (v != std::floor(v)) throw std::invalid_argument(op + ": parameter must be an integer");
  return static_cast<int>(v);
}

inline AttackSpec make_attack(const std::string& op, const std::string& param, std::uint64_t seed) {
  auto need = [&]() -> const std::string& {
    if (param.empty()) throw std::invalid_argument(op + ": missing parameter");
    return param;
  };
  AttackSpec s;
  if (op == "median") s = attack::Median{parse_int(need(), op)};
  else if (op == "avg_blur" || op == "blur") s = attack::AvgBlur{parse_int(need(), op)};
  else if (op == "gamma") s = attack::Gamma{parse_number(need(), op)};
  else if (op == "clahe") s = attack::Clahe{parse_number(need(), op)};
  else if (op == "gauss_noise" || op == "noise") s = attack::GaussNoise{parse_number(need(), op), seed};
  else if (op == "resize") s = attack::Resize{parse_number(need(), op)};
  else if (op == "zoom") s = attack::Zoom{parse_number(need(), op)};
  else if (op == "rotate") s = attack::Rotate{parse_number(need(), op)};
  else if (op == "sharpen") s = attack::Sharpen{};
  else if (op == "jpeg") s = attack::Jpeg{parse_int(need(), op)};
  else throw std::invalid_argument("unknown attack '" + op + "'");
  validate(s);
  return s;
}
}  // namespace detail

inline AttackChain parse_chain(const std::string& text) {
  AttackChain chain;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find('+', start), text.size());
    std::string item = text.substr(start, end - start);
    if (item.empty()) throw std::invalid_argument("empty attack in chain '" + text + "'");
    std::uint64_t seed = 0;
    if (const auto at = item.find('@'); at != std::string::npos) {
      try {
        seed = std::stoull(item.substr(at + 1));
      } catch (const std::exception&) {
        throw std::invalid_argument("bad seed in '" + item + "'");
      }
      item.resize(at);
    }
    std::string op = item, param;
    if (const auto colon = item.find(':'); colon != std::string::npos) {
      op = item.substr(0, colon);
      param = item.substr(colon + 1);
    }
    chain.push_back(detail::make_attack(op, param, seed));
    start = end + 1;
  }
  return chain;
}

inline std::string format_attack(const AttackSpec& s) {
  std::string out = attack_name(s);
  const auto p = attack_parameter(s);
  if (!p.empty()) out += ":" + p;
  if (const auto* n = std::get_if<attack::GaussNoise>(&s); n && n->seed != 0) out += "@" + std::to_string(n->seed);
  return out;
}

inline std::string format_chain(const AttackChain& chain) {
  std::string out;
  for (const auto& s : chain) {
    if (!out.empty()) out += "+";
    out += format_attack(s);
  }
  return out;
}

inline nlohmann::ordered_json chain_to_json(const AttackChain& chain) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& s : chain) {
    nlohmann::ordered_json j;
    j["op"] = attack_name(s);
    nlohmann::ordered_json params = nlohmann::ordered_json::object();
    std::uint64_t seed = 0;
    std::visit(overloaded{[&](const attack::Median& a) { params["k"] = a.k; },
                          [&](const attack::AvgBlur& a) { params["k"] = a.k; },
                          [&](const attack::Gamma& a) { params["gamma"] = a.gamma; },
                          [&](const attack::Clahe& a) { params["clip_limit"] = a.clip_limit; },
                          [&](const attack::GaussNoise& a) {
                            params["sigma"] = a.sigma;
                            seed = a.seed;
                          },
                          [&](const attack::Resize& a) { params["scale"] = a.scale; },
                          [&](const attack::Zoom& a) { params["factor"] = a.factor; },
                          [&](const attack::Rotate& a) { params["degrees"] = a.degrees; },
                          [&](const attack::Sharpen&) {},
                          [&](const attack::Jpeg& a) { params["qf"] = a.quality; }},
               s);
    j["params"] = params;
    j["seed"] = seed;
    arr.push_back(j);
  }
  return arr;
}

inline AttackChain chain_from_json(const nlohmann::json& arr) {
  if (!arr.is_array()) throw std::invalid_argument("attack chain JSON must be an array");
  AttackChain chain;
  for (const auto& j : arr) {
    const std::string op = j.at("op").get<std::string>();
    const auto params = j.value("params", nlohmann::json::object());
    const std::uint64_t seed = j.value("seed", std::uint64_t{0});
    std::string param;
    for (const char* key : {"k", "gamma", "clip_limit", "sigma", "scale", "factor", "degrees", "qf"})
      if (params.contains(key)) param = detail::format_number(params.at(key).get<double>());
    chain.push_back(detail::make_attack(op, param, seed));
  }
  return chain;
}

}  // namespace vbd
