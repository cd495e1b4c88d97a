#pragma once

// Soft-margin SVM with a Gaussian kernel, trained by SMO with second-order
// working-set selection, plus stratified k-fold grid search over (C, gamma).
// Labels are +1 (virtual background) and -1 (real background).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vbd/binio.hpp"

namespace vbd::svm {

using Row = std::vector<double>;
using Matrix = std::vector<Row>;

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

/// K(a,b) = exp(-gamma * |a-b|^2); symmetric by construction, K(a,a) = 1.
inline double rbf_kernel(std::span<const double> a, std::span<const double> b, double gamma) {
  return std::exp(-gamma * squared_distance(a, b));
}

/// Per-dimension standardization fitted on a training split. Constant
/// dimensions keep scale 1 so they map to 0.
struct Scaler {
  Row mean;
  Row scale;  // multiplier, 1 / std

  static Scaler fit(const Matrix& x) {
    if (x.empty()) throw std::invalid_argument("Scaler: no rows");
    const std::size_t d = x.front().size();
    Scaler s{Row(d, 0.0), Row(d, 1.0)};
    for (const auto& r : x)
      for (std::size_t j = 0; j < d; ++j) s.mean[j] += r[j];
    for (auto& m : s.mean) m /= static_cast<double>(x.size());
    Row var(d, 0.0);
    for (const auto& r : x)
      for (std::size_t j = 0; j < d; ++j) var[j] += (r[j] - s.mean[j]) * (r[j] - s.mean[j]);
    for (std::size_t j = 0; j < d; ++j) {
      const double sd = std::sqrt(var[j] / static_cast<double>(x.size()));
      s.scale[j] = sd > 0 ? 1.0 / sd : 1.0;
    }
    return s;
  }

  static Scaler identity(std::size_t d) { return {Row(d, 0.0), Row(d, 1.0)}; }

  Row apply(std::span<const double> x) const {
    if (x.size() != mean.size()) throw std::invalid_argument("Scaler: dimension mismatch");
    Row out(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - mean[j]) * scale[j];
    return out;
  }
};

struct SvmModel {
  std::size_t dim = 0;
  double C = 1;
  double gamma = 1;
  double bias = 0;
  Matrix support;       // standardized support vectors
  std::vector<double> alpha;
  std::vector<int> label;  // +1 / -1
  Scaler scaler;
  std::size_t iterations = 0;
  bool converged = true;

  /// f(x) = sum_i alpha_i y_i K(x_i, x) + b, with x in standardized space.
  double decision_scaled(std::span<const double> z) const {
    double f = bias;
    for (std::size_t i = 0; i < support.size(); ++i) f += alpha[i] * label[i] * rbf_kernel(support[i], z, gamma);
    return f;
  }
};

struct Prediction {
  bool virtual_bg = false;  // margin >= 0
  double margin = 0;
};

inline Prediction svm_predict(const SvmModel& m, std::span<const double> feature) {
  if (feature.size() != m.dim)
    throw std::invalid_argument("svm_predict: feature has " + std::to_string(feature.size()) + " dims, model " +
                                std::to_string(m.dim));
  const double f = m.decision_scaled(m.scaler.apply(feature));
  return {f >= 0, f};
}

struct TrainOptions {
  double tol = 1e-3;
  std::size_t max_iterations = 100000;
  bool standardize = true;
};

namespace detail {

inline void check_problem(const Matrix& x, const std::vector<int>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("svm: feature/label count mismatch");
  if (x.size() < 2) throw std::invalid_argument("svm: need at least 2 samples");
  const std::size_t d = x.front().size();
  if (d == 0) throw std::invalid_argument("svm: empty feature vectors");
  bool pos = false, neg = false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i].size() != d) throw std::invalid_argument("svm: ragged feature matrix");
    if (y[i] == 1)
      pos = true;
    else if (y[i] == -1)
      neg = true;
    else
      throw std::invalid_argument("svm: labels must be +1 or -1");
  }
  if (!pos || !neg) throw std::invalid_argument("svm: both classes must be present");
}

/// Pairwise squared distances (full symmetric matrix, row-major).
inline std::vector<double> distance_matrix(const Matrix& z) {
  const std::size_t n = z.size();
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) d[i * n + j] = d[j * n + i] = squared_distance(z[i], z[j]);
  return d;
}

struct SmoResult {
  std::vector<double> alpha;
  double bias = 0;
  std::size_t iterations = 0;
  bool converged = true;
};

/// Dual: min 1/2 a'Qa - e'a, 0 <= a_i <= C, y'a = 0, with Q_ij = y_i y_j K_ij.
/// Stops when the maximal KKT gap m(a) - M(a) drops to `tol`.
inline SmoResult smo(const std::vector<double>& K, const std::vector<int>& y, double C, double tol,
                     std::size_t max_iter) {
  const std::size_t n = y.size();
  constexpr double tau = 1e-12;
  SmoResult r;
  r.alpha.assign(n, 0.0);
  auto& a = r.alpha;
  std::vector<double> G(n, -1.0);
  auto Q = [&](std::size_t i, std::size_t j) { return y[i] * y[j] * K[i * n + j]; };
  auto up = [&](std::size_t t) { return (y[t] == 1 && a[t] < C) || (y[t] == -1 && a[t] > 0); };
  auto low = [&](std::size_t t) { return (y[t] == 1 && a[t] > 0) || (y[t] == -1 && a[t] < C); };

  while (true) {
    double gmax = -std::numeric_limits<double>::infinity(), gmin = std::numeric_limits<double>::infinity();
    std::size_t i = n;
    for (std::size_t t = 0; t < n; ++t)
      if (up(t) && -y[t] * G[t] >= gmax) {
        gmax = -y[t] * G[t];
        i = t;
      }
    std::size_t j = n;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < n; ++t) {
      if (!low(t)) continue;
      const double v = -y[t] * G[t];
      gmin = std::min(gmin, v);
      if (i == n) continue;
      const double b = gmax - v;
      if (b > 0) {
        double quad = K[i * n + i] + K[t * n + t] - 2.0 * K[i * n + t];
        if (quad <= 0) quad = tau;
        if (-(b * b) / quad <= best) {
          best = -(b * b) / quad;
          j = t;
        }
      }
    }
    if (i == n || j == n || gmax - gmin <= tol) break;
    if (r.iterations >= max_iter) {
      r.converged = false;
      break;
    }
    ++r.iterations;

    const double old_ai = a[i], old_aj = a[j];
    if (y[i] != y[j]) {
      double quad = Q(i, i) + Q(j, j) + 2 * Q(i, j);
      if (quad <= 0) quad = tau;
      const double delta = (-G[i] - G[j]) / quad;
      const double diff = a[i] - a[j];
      a[i] += delta;
      a[j] += delta;
      if (diff > 0) {
        if (a[j] < 0) {
          a[j] = 0;
          a[i] = diff;
        }
      } else if (a[i] < 0) {
        a[i] = 0;
        a[j] = -diff;
      }
      if (diff > 0) {
        if (a[i] > C) {
          a[i] = C;
          a[j] = C - diff;
        }
      } else if (a[j] > C) {
        a[j] = C;
        a[i] = C + diff;
      }
    } else {
      double quad = Q(i, i) + Q(j, j) - 2 * Q(i, j);
      if (quad <= 0) quad = tau;
      const double delta = (G[i] - G[j]) / quad;
      const double sum = a[i] + a[j];
      a[i] -= delta;
      a[j] += delta;
      if (sum > C) {
        if (a[i] > C) {
          a[i] = C;
          a[j] = sum - C;
        }
      } else if (a[j] < 0) {
        a[j] = 0;
        a[i] = sum;
      }
      if (sum > C) {
        if (a[j] > C) {
          a[j] = C;
          a[i] = sum - C;
        }
      } else if (a[i] < 0) {
        a[i] = 0;
        a[j] = sum;
      }
    }
    const double di = a[i] - old_ai, dj = a[j] - old_aj;
    for (std::size_t t = 0; t < n; ++t) G[t] += Q(t, i) * di + Q(t, j) * dj;
  }

  // Bias: average over free vectors, else midpoint of the feasible interval.
  double ub = std::numeric_limits<double>::infinity(), lb = -std::numeric_limits<double>::infinity(), sum = 0;
  std::size_t free = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double yg = y[t] * G[t];
    if (a[t] >= C) {
      if (y[t] == -1)
        ub = std::min(ub, yg);
      else
        lb = std::max(lb, yg);
    } else if (a[t] <= 0) {
      if (y[t] == 1)
        ub = std::min(ub, yg);
      else
        lb = std::max(lb, yg);
    } else {
      ++free;
      sum += yg;
    }
  }
  const double rho = free > 0 ? sum / static_cast<double>(free) : (ub + lb) / 2;
  r.bias = -rho;
  return r;
}

inline SvmModel assemble(const Matrix& z, const std::vector<int>& y, const SmoResult& r, double C, double gamma,
                         Scaler scaler) {
  SvmModel m;
  m.dim = z.front().size();
  m.C = C;
  m.gamma = gamma;
  m.bias = r.bias;
  m.scaler = std::move(scaler);
  m.iterations = r.iterations;
  m.converged = r.converged;
  for (std::size_t i = 0; i < z.size(); ++i)
    if (r.alpha[i] > 0) {
      m.support.push_back(z[i]);
      m.alpha.push_back(r.alpha[i]);
      m.label.push_back(y[i]);
    }
  return m;
}

inline std::vector<double> kernel_from_distances(const std::vector<double>& d, double gamma) {
  std::vector<double> k(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) k[i] = std::exp(-gamma * d[i]);
  return k;
}

}  // namespace detail

struct TrainResult {
  SvmModel model;
  std::vector<double> alpha;  // one per training sample, in input order
};

/// Trains on raw features; standardization (if enabled) is fitted here and stored in the model.
/// Hitting the iteration cap returns the current solution with `converged = false`.
inline TrainResult svm_train_full(const Matrix& x, const std::vector<int>& y, double C, double gamma,
                                  const TrainOptions& opt = {}) {
  detail::check_problem(x, y);
  if (!(C > 0) || !(gamma > 0)) throw std::invalid_argument("svm_train: C and gamma must be > 0");
  Scaler scaler = opt.standardize ? Scaler::fit(x) : Scaler::identity(x.front().size());
  Matrix z;
  z.reserve(x.size());
  for (const auto& r : x) z.push_back(scaler.apply(r));
  const auto K = detail::kernel_from_distances(detail::distance_matrix(z), gamma);
  auto r = detail::smo(K, y, C, opt.tol, opt.max_iterations);
  TrainResult out{detail::assemble(z, y, r, C, gamma, std::move(scaler)), std::move(r.alpha)};
  return out;
}

inline SvmModel svm_train(const Matrix& x, const std::vector<int>& y, double C, double gamma,
                          const TrainOptions& opt = {}) {
  return svm_train_full(x, y, C, gamma, opt).model;
}

/// Largest KKT violation over the training set given every sample's multiplier:
/// alpha=0 needs y f >= 1, alpha=C needs y f <= 1, free needs y f = 1.
inline double max_kkt_violation(const SvmModel& m, const Matrix& x, const std::vector<int>& y,
                                const std::vector<double>& alpha) {
  double worst = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double yf = y[i] * m.decision_scaled(m.scaler.apply(x[i]));
    double v;
    if (alpha[i] <= 0)
      v = std::max(0.0, 1.0 - yf);
    else if (alpha[i] >= m.C)
      v = std::max(0.0, yf - 1.0);
    else
      v = std::abs(yf - 1.0);
    worst = std::max(worst, v);
  }
  return worst;
}

inline double dual_residual(const SvmModel& m) {
  double s = 0;
  for (std::size_t i = 0; i < m.alpha.size(); ++i) s += m.alpha[i] * m.label[i];
  return s;
}

inline double accuracy(const SvmModel& m, const Matrix& x, const std::vector<int>& y) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < x.size(); ++i) ok += (svm_predict(m, x[i]).virtual_bg ? 1 : -1) == y[i];
  return x.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(x.size());
}

// -- grid search ----------------------------------------------------------------

inline std::vector<double> power_grid(int lo, int hi) {
  std::vector<double> g;
  for (int e = lo; e <= hi; ++e) g.push_back(std::ldexp(1.0, e));
  return g;
}

inline std::vector<double> default_c_grid() { return power_grid(-3, 7); }
inline std::vector<double> default_gamma_grid() { return power_grid(-9, 1); }

/// Fold index per sample: each class is shuffled with the seeded generator and
/// dealt round-robin, so every fold gets floor or ceil of its class share.
inline std::vector<int> stratified_folds(const std::vector<int>& y, int folds, std::uint64_t seed) {
  std::vector<int> fold(y.size(), 0);
  std::mt19937_64 rng(seed);
  for (int cls : {-1, 1}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (y[i] == cls) idx.push_back(i);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t r = 0; r < idx.size(); ++r) fold[idx[r]] = static_cast<int>(r % static_cast<std::size_t>(folds));
  }
  return fold;
}

struct GridResult {
  double C = 0;
  double gamma = 0;
  double cv_accuracy = 0;
  std::vector<std::vector<double>> table;  // [c][gamma] mean validation accuracy, grids sorted ascending
  std::vector<double> c_grid, gamma_grid;
};

/// k-fold cross-validated choice of (C, gamma). Ties go to the smaller C, then the smaller gamma.
inline GridResult grid_search_cv(const Matrix& x, const std::vector<int>& y, std::vector<double> c_grid,
                                 std::vector<double> gamma_grid, int folds = 5, std::uint64_t seed = 1,
                                 const TrainOptions& opt = {}) {
  detail::check_problem(x, y);
  if (folds < 2) throw std::invalid_argument("grid_search_cv: folds must be >= 2");
  if (c_grid.empty() || gamma_grid.empty()) throw std::invalid_argument("grid_search_cv: empty grid");
  for (int cls : {-1, 1})
    if (std::count(y.begin(), y.end(), cls) < folds)
      throw std::invalid_argument("grid_search_cv: fewer samples than folds in a class");
  std::sort(c_grid.begin(), c_grid.end());
  std::sort(gamma_grid.begin(), gamma_grid.end());
  c_grid.erase(std::unique(c_grid.begin(), c_grid.end()), c_grid.end());
  gamma_grid.erase(std::unique(gamma_grid.begin(), gamma_grid.end()), gamma_grid.end());

  const auto fold = stratified_folds(y, folds, seed);
  GridResult res;
  res.c_grid = c_grid;
  res.gamma_grid = gamma_grid;
  res.table.assign(c_grid.size(), std::vector<double>(gamma_grid.size(), 0.0));

  for (int f = 0; f < folds; ++f) {
    Matrix tr, va;
    std::vector<int> ytr, yva;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (fold[i] == f) {
        va.push_back(x[i]);
        yva.push_back(y[i]);
      } else {
        tr.push_back(x[i]);
        ytr.push_back(y[i]);
      }
    }
    const Scaler scaler = opt.standardize ? Scaler::fit(tr) : Scaler::identity(x.front().size());
    Matrix ztr, zva;
    for (const auto& r : tr) ztr.push_back(scaler.apply(r));
    for (const auto& r : va) zva.push_back(scaler.apply(r));
    const auto dist = detail::distance_matrix(ztr);
    // Cross distances validation x train, reused for every gamma.
    std::vector<double> cross(zva.size() * ztr.size());
    for (std::size_t v = 0; v < zva.size(); ++v)
      for (std::size_t t = 0; t < ztr.size(); ++t) cross[v * ztr.size() + t] = squared_distance(zva[v], ztr[t]);

    for (std::size_t gi = 0; gi < gamma_grid.size(); ++gi) {
      const double g = gamma_grid[gi];
      const auto K = detail::kernel_from_distances(dist, g);
      const auto Kx = detail::kernel_from_distances(cross, g);
      for (std::size_t ci = 0; ci < c_grid.size(); ++ci) {
        const auto r = detail::smo(K, ytr, c_grid[ci], opt.tol, opt.max_iterations);
        std::size_t ok = 0;
        for (std::size_t v = 0; v < zva.size(); ++v) {
          double s = r.bias;
          for (std::size_t t = 0; t < ztr.size(); ++t)
            if (r.alpha[t] > 0) s += r.alpha[t] * ytr[t] * Kx[v * ztr.size() + t];
          ok += ((s >= 0) ? 1 : -1) == yva[v];
        }
        res.table[ci][gi] += static_cast<double>(ok) / static_cast<double>(zva.size()) / folds;
      }
    }
  }

  res.cv_accuracy = -1;
  for (std::size_t ci = 0; ci < c_grid.size(); ++ci)
    for (std::size_t gi = 0; gi < gamma_grid.size(); ++gi)
      if (res.table[ci][gi] > res.cv_accuracy) {
        res.cv_accuracy = res.table[ci][gi];
        res.C = c_grid[ci];
        res.gamma = gamma_grid[gi];
      }
  return res;
}

// -- model file -----------------------------------------------------------------
//
// <name>.json: metadata and scaler. <name>.svb: "VBSV", u64 count, u64 dim, then per
// support vector: f64 alpha, i32-as-u32 label, dim x f64 values.

inline std::filesystem::path support_block_path(const std::filesystem::path& json_path) {
  auto p = json_path;
  p.replace_extension(".svb");
  return p;
}

inline void save_svm(const SvmModel& m, const std::filesystem::path& json_path) {
  const auto block = support_block_path(json_path);
  nlohmann::ordered_json j;
  j["format"] = "vbd-svm";
  j["version"] = 1;
  j["kernel"] = "rbf";
  j["dim"] = m.dim;
  j["C"] = m.C;
  j["gamma"] = m.gamma;
  j["bias"] = m.bias;
  j["support_vectors"] = m.support.size();
  j["iterations"] = m.iterations;
  j["converged"] = m.converged;
  j["scaler"] = {{"mean", m.scaler.mean}, {"scale", m.scaler.scale}};
  j["support_block"] = block.filename().string();
  std::ofstream js(json_path, std::ios::trunc);
  if (!js) throw std::runtime_error("cannot write " + json_path.string());
  js << j.dump(1) << '\n';

  std::ofstream out(block, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + block.string());
  binio::write_magic(out, "VBSV");
  binio::write_u64(out, m.support.size());
  binio::write_u64(out, m.dim);
  for (std::size_t i = 0; i < m.support.size(); ++i) {
    binio::write_f64(out, m.alpha[i]);
    binio::write_u32(out, static_cast<std::uint32_t>(m.label[i]));
    for (double v : m.support[i]) binio::write_f64(out, v);
  }
  if (!out) throw std::runtime_error("write failed: " + block.string());
}

inline SvmModel load_svm(const std::filesystem::path& json_path) {
  std::ifstream js(json_path);
  if (!js) throw std::runtime_error("cannot open " + json_path.string());
  const auto j = nlohmann::json::parse(js);
  if (j.value("format", "") != "vbd-svm") throw std::runtime_error("not an svm model: " + json_path.string());
  SvmModel m;
  m.dim = j.at("dim").get<std::size_t>();
  m.C = j.at("C").get<double>();
  m.gamma = j.at("gamma").get<double>();
  m.bias = j.at("bias").get<double>();
  m.iterations = j.value("iterations", std::size_t{0});
  m.converged = j.value("converged", true);
  m.scaler.mean = j.at("scaler").at("mean").get<Row>();
  m.scaler.scale = j.at("scaler").at("scale").get<Row>();

  const auto block = json_path.parent_path() / j.at("support_block").get<std::string>();
  std::ifstream in(block, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + block.string());
  binio::expect_magic(in, "VBSV");
  const auto n = binio::read_u64(in);
  if (binio::read_u64(in) != m.dim) throw std::runtime_error("svm: support block dimension mismatch");
  for (std::uint64_t i = 0; i < n; ++i) {
    m.alpha.push_back(binio::read_f64(in));
    m.label.push_back(static_cast<std::int32_t>(binio::read_u32(in)));
    Row r(m.dim);
    for (auto& v : r) v = binio::read_f64(in);
    m.support.push_back(std::move(r));
  }
  return m;
}

}  // namespace vbd::svm
