#pragma once

// Color-rich SPAM features (1372-D): per-channel second-order SPAM Markov
// features averaged across channels (686), plus joint co-occurrences of
// co-located residuals across the three channels (686).

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vbd/binio.hpp"
#include "vbd/image.hpp"

namespace vbd {

inline constexpr int kTruncation = 3;
inline constexpr int kResidualLevels = 2 * kTruncation + 1;  // 7
inline constexpr int kSpamCells = kResidualLevels * kResidualLevels * kResidualLevels;  // 343
inline constexpr int kSpamDim = 2 * kSpamCells;  // 686
inline constexpr int kCrspamDim = 2 * kSpamDim;  // 1372

using SpamBlock = std::array<double, kSpamCells>;
using Spam686 = std::array<double, kSpamDim>;
using FeatureVector1372 = std::array<double, kCrspamDim>;

enum class Direction : std::uint8_t { right, left, down, up, down_right, up_left, down_left, up_right };

inline constexpr std::array<Direction, 4> kAxisDirections{Direction::right, Direction::left, Direction::down,
                                                          Direction::up};
inline constexpr std::array<Direction, 4> kDiagonalDirections{Direction::down_right, Direction::up_left,
                                                              Direction::down_left, Direction::up_right};

struct Step {
  int sx;
  int sy;
};

constexpr Step step_of(Direction d) {
  switch (d) {
    case Direction::right: return {1, 0};
    case Direction::left: return {-1, 0};
    case Direction::down: return {0, 1};
    case Direction::up: return {0, -1};
    case Direction::down_right: return {1, 1};
    case Direction::up_left: return {-1, -1};
    case Direction::down_left: return {-1, 1};
    case Direction::up_right: return {1, -1};
  }
  return {0, 0};
}

/// Index of (u,v,w) in {-T..T}^3, lexicographic with u most significant.
constexpr int cell_index(int u, int v, int w) {
  return ((u + kTruncation) * kResidualLevels + (v + kTruncation)) * kResidualLevels + (w + kTruncation);
}

constexpr int truncate_residual(int v) { return v < -kTruncation ? -kTruncation : (v > kTruncation ? kTruncation : v); }

/// Truncated first-order residual D(p) = I(p) - I(p + step), stored on the
/// source grid. Positions whose neighbor falls outside the image are invalid.
struct ResidualMap {
  int width = 0;
  int height = 0;
  Direction direction = Direction::right;
  std::vector<std::int8_t> values;

  bool valid(int x, int y) const {
    const auto s = step_of(direction);
    return x >= 0 && y >= 0 && x < width && y < height && x + s.sx >= 0 && x + s.sx < width && y + s.sy >= 0 &&
           y + s.sy < height;
  }
  int at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

inline ResidualMap residual(const ChannelPlane& plane, Direction dir) {
  const auto s = step_of(dir);
  if ((s.sx != 0 && plane.width < 3) || (s.sy != 0 && plane.height < 3))
    throw std::invalid_argument("residual: plane too small along direction");
  ResidualMap r{plane.width, plane.height, dir, std::vector<std::int8_t>(plane.samples.size(), 0)};
  for (int y = 0; y < plane.height; ++y) {
    const int ny = y + s.sy;
    if (ny < 0 || ny >= plane.height) continue;
    for (int x = 0; x < plane.width; ++x) {
      const int nx = x + s.sx;
      if (nx < 0 || nx >= plane.width) continue;
      const int d = static_cast<int>(plane.at(x, y)) - static_cast<int>(plane.at(nx, ny));
      r.values[static_cast<std::size_t>(y) * plane.width + x] = static_cast<std::int8_t>(truncate_residual(d));
    }
  }
  return r;
}

/// Second-order Markov transition probabilities
/// M(u,v,w) = P(D[k+2]=u | D[k+1]=v, D[k]=w) along `dir`; zero where (v,w) never occurs.
inline SpamBlock spam_markov(const ResidualMap& res, Direction dir) {
  if (res.direction != dir) throw std::invalid_argument("spam_markov: residual direction mismatch");
  const auto s = step_of(dir);
  std::array<std::uint64_t, kSpamCells> triples{};
  std::uint64_t total = 0;
  for (int y = 0; y < res.height; ++y) {
    for (int x = 0; x < res.width; ++x) {
      const int x2 = x + 2 * s.sx, y2 = y + 2 * s.sy;
      if (!res.valid(x, y) || !res.valid(x2, y2)) continue;  // collinear: middle is valid too
      const int w = res.at(x, y);
      const int v = res.at(x + s.sx, y + s.sy);
      const int u = res.at(x2, y2);
      ++triples[cell_index(u, v, w)];
      ++total;
    }
  }
  if (total == 0) throw std::invalid_argument("spam_markov: no collinear residual triples");
  SpamBlock m{};
  for (int v = -kTruncation; v <= kTruncation; ++v) {
    for (int w = -kTruncation; w <= kTruncation; ++w) {
      std::uint64_t pair = 0;
      for (int u = -kTruncation; u <= kTruncation; ++u) pair += triples[cell_index(u, v, w)];
      if (pair == 0) continue;
      for (int u = -kTruncation; u <= kTruncation; ++u)
        m[cell_index(u, v, w)] = static_cast<double>(triples[cell_index(u, v, w)]) / static_cast<double>(pair);
    }
  }
  return m;
}

/// [mean of the 4 axis-direction Markov blocks, mean of the 4 diagonal blocks].
inline Spam686 spam686(const ChannelPlane& plane) {
  Spam686 out{};
  auto accumulate = [&](const auto& dirs, int offset) {
    int n = 0;
    for (Direction d : dirs) {
      const auto m = spam_markov(residual(plane, d), d);
      ++n;
      for (int i = 0; i < kSpamCells; ++i) out[offset + i] += (m[i] - out[offset + i]) / n;
    }
  };
  accumulate(kAxisDirections, 0);
  accumulate(kDiagonalDirections, kSpamCells);
  return out;
}

/// Joint relative frequency of co-located (D_R, D_G, D_B) residual triples.
inline SpamBlock cross_cooc(const ResidualMap& r, const ResidualMap& g, const ResidualMap& b) {
  if (r.direction != g.direction || r.direction != b.direction)
    throw std::invalid_argument("cross_cooc: residual directions differ");
  if (r.width != g.width || r.width != b.width || r.height != g.height || r.height != b.height)
    throw std::invalid_argument("cross_cooc: residual geometry differs");
  std::array<std::uint64_t, kSpamCells> counts{};
  std::uint64_t total = 0;
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x) {
      if (!r.valid(x, y)) continue;
      ++counts[cell_index(r.at(x, y), g.at(x, y), b.at(x, y))];
      ++total;
    }
  if (total == 0) throw std::invalid_argument("cross_cooc: no valid residual positions");
  SpamBlock c{};
  for (int i = 0; i < kSpamCells; ++i) c[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
  return c;
}

/// Means are running means, so identical channels reproduce the single-channel block exactly.
inline FeatureVector1372 crspam1372(const Frame& frame) {
  const auto ch = split_channels(frame);
  FeatureVector1372 f{};
  int n = 0;
  for (const auto& plane : ch) {
    const auto s = spam686(plane);
    ++n;
    for (int i = 0; i < kSpamDim; ++i) f[i] += (s[i] - f[i]) / n;
  }

  auto cross = [&](const auto& dirs, int offset) {
    int k = 0;
    for (Direction d : dirs) {
      const auto c = cross_cooc(residual(ch[0], d), residual(ch[1], d), residual(ch[2], d));
      ++k;
      for (int i = 0; i < kSpamCells; ++i) f[offset + i] += (c[i] - f[offset + i]) / k;
    }
  };
  cross(kAxisDirections, kSpamDim);
  cross(kDiagonalDirections, kSpamDim + kSpamCells);
  return f;
}

// -- feature files ----------------------------------------------------------

struct FeatureRow {
  std::string path;
  std::string label;
  std::vector<double> values;
};

inline std::string feature_csv_header(std::size_t dim) {
  std::ostringstream os;
  os << "path,label";
  for (std::size_t i = 0; i < dim; ++i) os << ",f" << std::setw(4) << std::setfill('0') << i;
  return os.str();
}

/// CSV with header `path,label,f0000..`; values printed with round-trip precision.
inline void write_feature_csv(const std::vector<FeatureRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const std::size_t dim = rows.empty() ? kCrspamDim : rows.front().values.size();
  out << feature_csv_header(dim) << '\n';
  out << std::setprecision(17);
  for (const auto& r : rows) {
    if (r.values.size() != dim) throw std::invalid_argument("write_feature_csv: ragged feature rows");
    out << r.path << ',' << r.label;
    for (double v : r.values) out << ',' << v;
    out << '\n';
  }
}

inline std::vector<FeatureRow> read_feature_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("path,label", 0) != 0)
    throw std::runtime_error("feature csv: missing header");
  std::vector<FeatureRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    FeatureRow r;
    std::getline(ls, r.path, ',');
    std::getline(ls, r.label, ',');
    std::string cell;
    while (std::getline(ls, cell, ',')) r.values.push_back(std::stod(cell));
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Binary container: magic "CRSP", u32 dim, u32 width, u32 height, dim float32 values.
inline void write_feature_binary(const FeatureVector1372& f, int width, int height,
                                 const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  binio::write_magic(out, "CRSP");
  binio::write_u32(out, kCrspamDim);
  binio::write_u32(out, static_cast<std::uint32_t>(width));
  binio::write_u32(out, static_cast<std::uint32_t>(height));
  for (double v : f) binio::write_f32(out, static_cast<float>(v));
}

inline std::vector<double> read_feature_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  binio::expect_magic(in, "CRSP");
  const auto dim = binio::read_u32(in);
  binio::read_u32(in);
  binio::read_u32(in);
  std::vector<double> v(dim);
  for (auto& x : v) x = binio::read_f32(in);
  return v;
}

}  // namespace vbd
