#pragma once

// Synthetic stand-in for recorded conference frames, plus manifest handling.
//
// Real frames: a procedural scene with per-sample sensor noise over the whole
// frame. Virtual frames: a camera foreground matted over a background that was
// rendered at lower resolution, bilinearly resampled and Gaussian blurred, and
// carries no sensor noise. Attack frames: the same compositing, but the
// background is a captured real frame re-inserted as the virtual background.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vbd/image.hpp"
#include "vbd/image_io.hpp"

namespace vbd::corpus {

enum class Label { real, virtual_bg, attack_virtual };

inline std::string to_string(Label l) {
  switch (l) {
    case Label::real: return "real";
    case Label::virtual_bg: return "virtual";
    case Label::attack_virtual: return "attack_virtual";
  }
  return "real";
}

inline Label parse_label(const std::string& s) {
  if (s == "real") return Label::real;
  if (s == "virtual") return Label::virtual_bg;
  if (s == "attack_virtual") return Label::attack_virtual;
  throw std::invalid_argument("unknown label '" + s + "'");
}

/// H1 (virtual background, including re-inserted real backgrounds).
inline bool is_positive(Label l) { return l != Label::real; }

enum class Split { train, val, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + s + "'");
}

struct SplitCounts {
  int train = 0;
  int val = 0;
  int test = 0;
  int total() const { return train + val + test; }
};

struct CorpusConfig {
  int width = 640;
  int height = 360;
  SplitCounts real{300, 50, 30};
  SplitCounts virtual_bg{300, 50, 30};
  SplitCounts attack{0, 0, 0};
  std::uint64_t seed = 1;
  double feather_px = 2.0;
  double bg_blur_sigma = 0.8;
  double bg_resample_scale = 0.75;  // virtual backgrounds are rendered at this scale then upsampled
  double sensor_noise_sigma = 1.5;
  // Sensor noise of the attacker's capture of the empty room (dim light, high gain).
  double attack_capture_noise_sigma = 14.0;
  double brightness = 1.0;  // lighting proxy applied to every generated frame
  std::string source_tag = "synthetic_zoomlike";
  std::vector<std::string> scenario_tags;

  void validate() const {
    if (width < 16 || height < 16) throw std::invalid_argument("corpus: frames must be at least 16x16");
    for (const auto* c : {&real, &virtual_bg, &attack})
      if (c->train < 0 || c->val < 0 || c->test < 0) throw std::invalid_argument("corpus: negative count");
    if (real.total() < 1 || virtual_bg.total() < 1) throw std::invalid_argument("corpus: counts must be >= 1");
    if (feather_px < 0 || bg_blur_sigma < 0 || sensor_noise_sigma < 0 || attack_capture_noise_sigma < 0)
      throw std::invalid_argument("corpus: negative compositing parameter");
    if (!(bg_resample_scale > 0 && bg_resample_scale <= 1)) throw std::invalid_argument("corpus: bad resample scale");
    if (!(brightness > 0 && brightness <= 1)) throw std::invalid_argument("corpus: brightness must be in (0,1]");
  }

  /// Same proportions as the default, scaled (1.0 = 300/50/30 per class).
  static CorpusConfig scaled(double fraction) {
    CorpusConfig c;
    auto s = [&](int n) { return std::max(1, static_cast<int>(std::lround(n * fraction))); };
    c.real = c.virtual_bg = {s(300), s(50), s(30)};
    return c;
  }
};

inline nlohmann::ordered_json to_json(const SplitCounts& c) {
  return {{"train", c.train}, {"val", c.val}, {"test", c.test}};
}

inline SplitCounts counts_from_json(const nlohmann::json& j) {
  return {j.value("train", 0), j.value("val", 0), j.value("test", 0)};
}

inline nlohmann::ordered_json to_json(const CorpusConfig& c) {
  nlohmann::ordered_json j;
  j["width"] = c.width;
  j["height"] = c.height;
  j["counts"] = {{"real", to_json(c.real)}, {"virtual", to_json(c.virtual_bg)}, {"attack_virtual", to_json(c.attack)}};
  j["seed"] = c.seed;
  j["feather_px"] = c.feather_px;
  j["bg_blur_sigma"] = c.bg_blur_sigma;
  j["bg_resample_scale"] = c.bg_resample_scale;
  j["sensor_noise_sigma"] = c.sensor_noise_sigma;
  j["attack_capture_noise_sigma"] = c.attack_capture_noise_sigma;
  j["brightness"] = c.brightness;
  j["source_tag"] = c.source_tag;
  j["scenario_tags"] = c.scenario_tags;
  return j;
}

inline CorpusConfig corpus_config_from_json(const nlohmann::json& j) {
  CorpusConfig c;
  c.width = j.value("width", c.width);
  c.height = j.value("height", c.height);
  if (j.contains("counts")) {
    const auto& k = j.at("counts");
    if (k.contains("real")) c.real = counts_from_json(k.at("real"));
    if (k.contains("virtual")) c.virtual_bg = counts_from_json(k.at("virtual"));
    if (k.contains("attack_virtual")) c.attack = counts_from_json(k.at("attack_virtual"));
  }
  c.seed = j.value("seed", c.seed);
  c.feather_px = j.value("feather_px", c.feather_px);
  c.bg_blur_sigma = j.value("bg_blur_sigma", c.bg_blur_sigma);
  c.bg_resample_scale = j.value("bg_resample_scale", c.bg_resample_scale);
  c.sensor_noise_sigma = j.value("sensor_noise_sigma", c.sensor_noise_sigma);
  c.attack_capture_noise_sigma = j.value("attack_capture_noise_sigma", c.attack_capture_noise_sigma);
  c.brightness = j.value("brightness", c.brightness);
  c.source_tag = j.value("source_tag", c.source_tag);
  c.scenario_tags = j.value("scenario_tags", c.scenario_tags);
  c.validate();
  return c;
}

// -- procedural rendering -------------------------------------------------------

/// Float RGB raster used while compositing; quantized only at the end.
struct FloatImage {
  int width = 0;
  int height = 0;
  std::vector<double> v;  // interleaved RGB

  FloatImage(int w, int h) : width(w), height(h), v(static_cast<std::size_t>(w) * h * 3, 0.0) {}
  double& at(int x, int y, int c) { return v[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int x, int y, int c) const { return v[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  Frame quantized() const {
    Frame f(width, height);
    for (std::size_t i = 0; i < v.size(); ++i) f.samples[i] = quantize(v[i]);
    return f;
  }
  static FloatImage from(const Frame& f) {
    FloatImage img(f.width, f.height);
    for (std::size_t i = 0; i < f.samples.size(); ++i) img.v[i] = f.samples[i];
    return img;
  }
};

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = seed ^ (0x9e3779b97f4a7c15ULL * (a + 1)) ^ (0xc2b2ae3d27d4eb4fULL * (b + 1));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace detail {

/// Smoothly interpolated lattice noise in [-1, 1].
class ValueNoise {
 public:
  ValueNoise(int w, int h, int cell, std::mt19937_64& rng) : cell_(cell), gw_(w / cell + 3), gh_(h / cell + 3) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    lattice_.resize(static_cast<std::size_t>(gw_) * gh_);
    for (auto& x : lattice_) x = u(rng);
  }
  double operator()(double x, double y) const {
    const double fx = x / cell_, fy = y / cell_;
    const int ix = static_cast<int>(fx), iy = static_cast<int>(fy);
    const double tx = smooth(fx - ix), ty = smooth(fy - iy);
    auto L = [&](int a, int b) { return lattice_[static_cast<std::size_t>(b) * gw_ + a]; };
    const double top = L(ix, iy) + tx * (L(ix + 1, iy) - L(ix, iy));
    const double bot = L(ix, iy + 1) + tx * (L(ix + 1, iy + 1) - L(ix, iy + 1));
    return top + ty * (bot - top);
  }

 private:
  static double smooth(double t) { return t * t * (3.0 - 2.0 * t); }
  int cell_, gw_, gh_;
  std::vector<double> lattice_;
};

inline FloatImage bilinear_resize(const FloatImage& src, int w, int h) {
  FloatImage out(w, h);
  const double rx = static_cast<double>(src.width) / w, ry = static_cast<double>(src.height) / h;
  for (int y = 0; y < h; ++y) {
    const double sy = std::clamp((y + 0.5) * ry - 0.5, 0.0, static_cast<double>(src.height - 1));
    const int y0 = static_cast<int>(sy), y1 = std::min(y0 + 1, src.height - 1);
    const double wy = sy - y0;
    for (int x = 0; x < w; ++x) {
      const double sx = std::clamp((x + 0.5) * rx - 0.5, 0.0, static_cast<double>(src.width - 1));
      const int x0 = static_cast<int>(sx), x1 = std::min(x0 + 1, src.width - 1);
      const double wx = sx - x0;
      for (int c = 0; c < 3; ++c)
        out.at(x, y, c) = (1 - wy) * ((1 - wx) * src.at(x0, y0, c) + wx * src.at(x1, y0, c)) +
                          wy * ((1 - wx) * src.at(x0, y1, c) + wx * src.at(x1, y1, c));
    }
  }
  return out;
}

inline FloatImage gaussian_blur(const FloatImage& src, double sigma) {
  if (sigma <= 0) return src;
  const int r = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> k(2 * r + 1);
  double sum = 0;
  for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& x : k) x /= sum;
  auto clampi = [](int v, int n) { return v < 0 ? 0 : (v >= n ? n - 1 : v); };
  FloatImage tmp(src.width, src.height), out(src.width, src.height);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double s = 0;
        for (int i = -r; i <= r; ++i) s += k[i + r] * src.at(clampi(x + i, src.width), y, c);
        tmp.at(x, y, c) = s;
      }
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double s = 0;
        for (int i = -r; i <= r; ++i) s += k[i + r] * tmp.at(x, clampi(y + i, src.height), c);
        out.at(x, y, c) = s;
      }
  return out;
}

}  // namespace detail

/// Noise-free procedural scene: multi-octave value noise, a global gradient and a
/// few flat-colored rectangles (furniture, frames) with hard edges.
inline FloatImage render_scene(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, 100));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double base[3];
  for (auto& b : base) b = 60 + 130 * u(rng);
  const double amp = 25 + 35 * u(rng);
  const double gx = (u(rng) - 0.5) * 60, gy = (u(rng) - 0.5) * 60;
  const double scale = std::max(w, h) / 640.0;

  std::vector<detail::ValueNoise> lum, chroma;
  for (int cell : {96, 48, 24, 12, 6}) lum.emplace_back(w, h, std::max(2, static_cast<int>(cell * scale)), rng);
  for (int c = 0; c < 3; ++c) chroma.emplace_back(w, h, std::max(2, static_cast<int>(64 * scale)), rng);

  struct Rect {
    int x0, y0, x1, y1;
    double d[3];
  };
  std::vector<Rect> rects(2 + rng() % 4);
  for (auto& r : rects) {
    r.x0 = static_cast<int>(u(rng) * w);
    r.y0 = static_cast<int>(u(rng) * h);
    r.x1 = std::min(w, r.x0 + static_cast<int>((0.1 + 0.3 * u(rng)) * w));
    r.y1 = std::min(h, r.y0 + static_cast<int>((0.1 + 0.3 * u(rng)) * h));
    const double shade = (u(rng) - 0.5) * 80;
    for (auto& d : r.d) d = shade + (u(rng) - 0.5) * 30;
  }

  FloatImage img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double l = 0, a = 1;
      for (const auto& n : lum) {
        l += a * n(x, y);
        a *= 0.5;
      }
      const double g = gx * x / w + gy * y / h;
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = base[c] + amp * l + 0.3 * amp * chroma[c](x, y) + g;
      for (const auto& r : rects)
        if (x >= r.x0 && x < r.x1 && y >= r.y0 && y < r.y1)
          for (int c = 0; c < 3; ++c) img.at(x, y, c) += r.d[c];
    }
  return img;
}

inline void add_sensor_noise(FloatImage& img, double sigma, std::uint64_t seed) {
  if (sigma <= 0) return;
  std::mt19937_64 rng(derive_seed(seed, 200));
  std::normal_distribution<double> n(0.0, sigma);
  for (auto& v : img.v) v += n(rng);
}

/// v' = clamp(round(factor * v)); global illumination scaling.
inline Frame lighting_proxy(const Frame& f, double factor) {
  if (!(factor > 0 && factor <= 1)) throw std::invalid_argument("lighting_proxy: factor must be in (0,1]");
  if (factor == 1.0) return f;
  Frame out = f;
  for (auto& s : out.samples) s = quantize(factor * s);
  return out;
}

/// Elliptical person-like matte with linear feathering of `feather` pixels (0 = hard edge).
inline std::vector<double> ellipse_matte(int w, int h, std::uint64_t seed, double feather) {
  std::mt19937_64 rng(derive_seed(seed, 300));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double cx = w * (0.5 + 0.08 * u(rng)), cy = h * (0.62 + 0.05 * u(rng));
  const double rx = w * (0.2 + 0.04 * u(rng)), ry = h * (0.42 + 0.05 * u(rng));
  std::vector<double> alpha(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double dx = (x - cx) / rx, dy = (y - cy) / ry;
      const double rho = std::sqrt(dx * dx + dy * dy);
      double a;
      if (feather <= 0) {
        a = rho <= 1.0 ? 1.0 : 0.0;
      } else {
        const double dist = (rho - 1.0) * std::min(rx, ry);  // approx. signed distance in px
        a = std::clamp(0.5 - dist / feather, 0.0, 1.0);
      }
      alpha[static_cast<std::size_t>(y) * w + x] = a;
    }
  return alpha;
}

/// alpha * fg + (1 - alpha) * bg.
inline FloatImage blend(const FloatImage& fg, const FloatImage& bg, const std::vector<double>& alpha) {
  if (fg.width != bg.width || fg.height != bg.height || alpha.size() != static_cast<std::size_t>(fg.width) * fg.height)
    throw std::invalid_argument("composite: geometry mismatch");
  FloatImage out(fg.width, fg.height);
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    const double a = alpha[i];
    for (int c = 0; c < 3; ++c) {
      const std::size_t k = i * 3 + c;
      out.v[k] = a == 1.0 ? fg.v[k] : (a == 0.0 ? bg.v[k] : a * fg.v[k] + (1 - a) * bg.v[k]);
    }
  }
  return out;
}

inline Frame composite(const FloatImage& fg, const FloatImage& bg, const std::vector<double>& alpha) {
  return blend(fg, bg, alpha).quantized();
}

/// Background re-insertion: resample at `scale`, upsample back, blur.
inline FloatImage reinsert_background(const FloatImage& img, double scale, double blur_sigma) {
  FloatImage out = img;
  if (scale != 1.0) {
    const int sw = std::max(2, static_cast<int>(std::lround(img.width * scale)));
    const int sh = std::max(2, static_cast<int>(std::lround(img.height * scale)));
    out = detail::bilinear_resize(detail::bilinear_resize(img, sw, sh), img.width, img.height);
  }
  return detail::gaussian_blur(out, blur_sigma);
}

inline std::uint64_t background_seed(std::uint64_t seed) { return derive_seed(seed, 410); }
inline std::uint64_t person_seed(std::uint64_t seed) { return derive_seed(seed, 420); }

/// Noise-free room: background scene with a person-like foreground scene in front of it.
inline FloatImage room_scene(const CorpusConfig& cfg, std::uint64_t seed) {
  return blend(render_scene(cfg.width, cfg.height, person_seed(seed)),
               render_scene(cfg.width, cfg.height, background_seed(seed)),
               ellipse_matte(cfg.width, cfg.height, seed, cfg.feather_px));
}

/// The room as the camera sees it: sensor noise over the whole frame.
inline FloatImage camera_capture(const CorpusConfig& cfg, std::uint64_t seed, std::uint64_t noise_seed) {
  FloatImage img = room_scene(cfg, seed);
  add_sensor_noise(img, cfg.sensor_noise_sigma, noise_seed);
  return img;
}

inline Frame gen_real_frame(const CorpusConfig& cfg, std::uint64_t seed) {
  return lighting_proxy(camera_capture(cfg, seed, seed).quantized(), cfg.brightness);
}

/// Foreground of a real capture over a distinct, noise-free background that was
/// rendered at reduced resolution, bilinearly upsampled and blurred.
inline Frame gen_virtual_frame(const CorpusConfig& cfg, std::uint64_t seed) {
  const FloatImage fg = camera_capture(cfg, seed, seed);
  const int sw = std::max(2, static_cast<int>(std::lround(cfg.width * cfg.bg_resample_scale)));
  const int sh = std::max(2, static_cast<int>(std::lround(cfg.height * cfg.bg_resample_scale)));
  const FloatImage small = render_scene(sw, sh, derive_seed(seed, 430));
  const FloatImage bg = detail::gaussian_blur(detail::bilinear_resize(small, cfg.width, cfg.height), cfg.bg_blur_sigma);
  return lighting_proxy(composite(fg, bg, ellipse_matte(cfg.width, cfg.height, seed, cfg.feather_px)), cfg.brightness);
}

/// The real frame whose background an attack frame with the same seed re-inserts.
inline Frame paired_real_frame(const CorpusConfig& cfg, std::uint64_t seed) { return gen_real_frame(cfg, seed); }

/// Live foreground over a capture of the empty room, re-inserted as the virtual background.
inline Frame gen_attack_frame(const CorpusConfig& cfg, std::uint64_t seed) {
  FloatImage empty_room = render_scene(cfg.width, cfg.height, background_seed(seed));
  add_sensor_noise(empty_room, cfg.attack_capture_noise_sigma, derive_seed(seed, 440));
  const FloatImage bg =
      reinsert_background(FloatImage::from(empty_room.quantized()), cfg.bg_resample_scale, cfg.bg_blur_sigma);
  const FloatImage fg = camera_capture(cfg, seed, derive_seed(seed, 450));
  return lighting_proxy(composite(fg, bg, ellipse_matte(cfg.width, cfg.height, seed, cfg.feather_px)), cfg.brightness);
}

inline Frame generate(Label l, const CorpusConfig& cfg, std::uint64_t seed) {
  switch (l) {
    case Label::real: return gen_real_frame(cfg, seed);
    case Label::virtual_bg: return gen_virtual_frame(cfg, seed);
    case Label::attack_virtual: return gen_attack_frame(cfg, seed);
  }
  return gen_real_frame(cfg, seed);
}

// -- manifests ------------------------------------------------------------------

struct ManifestEntry {
  std::filesystem::path path;  // absolute once loaded
  Label label = Label::real;
  std::string source_tag;
  std::vector<std::string> tags;
  Split split = Split::train;
  std::uint64_t hash = 0;

  bool operator==(const ManifestEntry&) const = default;
};

using Manifest = std::vector<ManifestEntry>;

inline std::string hash_hex(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

/// JSON-lines; paths are written relative to the manifest's directory when possible.
inline void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  const auto base = std::filesystem::absolute(path).parent_path();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& e : m) {
    nlohmann::ordered_json j;
    auto rel = std::filesystem::absolute(e.path).lexically_relative(base);
    j["path"] = (rel.empty() ? e.path : rel).generic_string();
    j["label"] = to_string(e.label);
    j["source_tag"] = e.source_tag;
    j["tags"] = e.tags;
    j["split"] = to_string(e.split);
    j["hash"] = hash_hex(e.hash);
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  const auto base = std::filesystem::absolute(path).parent_path();
  Manifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestEntry e;
      std::filesystem::path p = j.at("path").get<std::string>();
      e.path = p.is_absolute() ? p : (base / p).lexically_normal();
      e.label = parse_label(j.at("label").get<std::string>());
      e.source_tag = j.value("source_tag", "");
      e.tags = j.value("tags", std::vector<std::string>{});
      e.split = parse_split(j.at("split").get<std::string>());
      e.hash = std::stoull(j.at("hash").get<std::string>(), nullptr, 16);
      m.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return m;
}

inline Manifest select(const Manifest& m, Split s) {
  Manifest out;
  std::copy_if(m.begin(), m.end(), std::back_inserter(out), [s](const auto& e) { return e.split == s; });
  return out;
}

/// Generates every frame of the configured corpus under `out_dir/frames`, assigns
/// stratified splits from a seeded shuffle, and writes `out_dir/manifest.jsonl`.
inline Manifest build_manifest(const CorpusConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir / "frames");
  Manifest m;
  const std::pair<Label, SplitCounts> classes[] = {
      {Label::real, cfg.real}, {Label::virtual_bg, cfg.virtual_bg}, {Label::attack_virtual, cfg.attack}};
  for (const auto& [label, counts] : classes) {
    const int n = counts.total();
    if (n == 0) continue;
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::mt19937_64 rng(derive_seed(cfg.seed, 600, static_cast<std::uint64_t>(label)));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Split> split_of(n);
    for (int r = 0; r < n; ++r)
      split_of[order[r]] = r < counts.train ? Split::train : (r < counts.train + counts.val ? Split::val : Split::test);
    for (int i = 0; i < n; ++i) {
      const std::uint64_t seed = derive_seed(cfg.seed, 700 + static_cast<std::uint64_t>(label), i);
      const Frame f = generate(label, cfg, seed);
      std::ostringstream name;
      name << to_string(label) << '_' << std::setw(5) << std::setfill('0') << i << ".png";
      const auto path = out_dir / "frames" / name.str();
      save_frame(f, path);
      m.push_back({std::filesystem::absolute(path), label, cfg.source_tag, cfg.scenario_tags, split_of[i],
                   content_hash(f)});
    }
  }
  write_manifest(m, out_dir / "manifest.jsonl");
  return m;
}

struct IngestResult {
  Manifest entries;
  std::vector<std::string> warnings;
};

/// Adds every PNG/JPEG under `dir` (sorted by name). Frames whose content hash
/// is already known (from `existing` or earlier in this directory) produce a warning.
inline IngestResult ingest(const std::filesystem::path& dir, Label label, const std::string& source_tag,
                           const Manifest& existing = {}, Split split = Split::test,
                           const std::vector<std::string>& tags = {}) {
  if (!std::filesystem::is_directory(dir)) throw std::invalid_argument("ingest: not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(e.path());
  }
  if (files.empty()) throw std::invalid_argument("ingest: no PNG/JPEG frames in " + dir.string());
  std::sort(files.begin(), files.end());

  std::set<std::uint64_t> seen;
  for (const auto& e : existing) seen.insert(e.hash);
  IngestResult res;
  for (const auto& p : files) {
    const Frame f = load_frame(p);  // throws on undecodable input
    const auto h = content_hash(f);
    if (!seen.insert(h).second) res.warnings.push_back("duplicate content " + hash_hex(h) + ": " + p.string());
    res.entries.push_back({std::filesystem::absolute(p), label, source_tag, tags, split, h});
  }
  return res;
}

}  // namespace vbd::corpus
