#pragma once

// Small co-occurrence CNN: conv/ReLU/max-pool/dropout blocks, dense layers and a
// sigmoid head, with explicit backprop, SGD with momentum, and a
// finite-difference gradient check. Templated on the scalar type so the
// gradient check runs in double while training runs in float.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "vbd/binio.hpp"
#include "vbd/comat.hpp"

namespace vbd::nn {

struct ConvBlock {
  int filters = 32;
  int kernel = 3;
  bool relu = true;
  int pool = 1;  // non-overlapping max-pool window (1 = none)
  double dropout = 0.0;
  bool operator==(const ConvBlock&) const = default;
};

struct DenseBlock {
  int units = 256;
  bool relu = true;
  double dropout = 0.0;
  bool operator==(const DenseBlock&) const = default;
};

/// How normalized co-occurrence frequencies are mapped to network inputs.
/// `log1p` feeds input_scale * log(1 + n p) with n = bins^2, so empty cells map to 0
/// and a uniform plane to input_scale * log 2 per cell.
enum class InputTransform : std::uint32_t { identity = 0, log1p = 1 };

struct Architecture {
  int input_bins = 64;
  int input_channels = CoMatTensor::kPlanes;
  InputTransform transform = InputTransform::log1p;
  double input_scale = 0.5;
  std::vector<ConvBlock> convs;
  std::vector<DenseBlock> dense;  // the 1-unit sigmoid head is implicit

  bool operator==(const Architecture&) const = default;

  /// 32x3x3 + ReLU; 32x5x5 + pool3 + drop .25; 64x3x3 + ReLU; 64x5x5 + pool3 + drop .25;
  /// dense 256 + ReLU; dense 256 + ReLU + drop .5; sigmoid head.
  /// `two_dense = false` reads the dense stage as a single 256-unit layer.
  static Architecture detector(int bins, bool two_dense = true) {
    Architecture a;
    a.input_bins = bins;
    a.convs = {{32, 3, true, 1, 0.0}, {32, 5, true, 3, 0.25}, {64, 3, true, 1, 0.0}, {64, 5, true, 3, 0.25}};
    if (two_dense)
      a.dense = {{256, true, 0.0}, {256, true, 0.5}};
    else
      a.dense = {{256, true, 0.5}};
    return a;
  }

  /// Two conv layers on an 8x8x6 input; used by the gradient check.
  static Architecture reduced(bool with_dropout = false) {
    Architecture a;
    a.input_bins = 8;
    a.transform = InputTransform::identity;
    a.convs = {{4, 3, true, 1, 0.0}, {4, 3, true, 3, with_dropout ? 0.25 : 0.0}};
    a.dense = {{8, true, with_dropout ? 0.5 : 0.0}};
    return a;
  }
};

enum class Mode { train, eval };

/// Activations are channels x pixels, row-major: each channel plane is contiguous,
/// pixel index = row * side + col. Flattening for the dense stage is channel-major.
template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
using Input = Matrix<T>;

template <typename T>
Eigen::Map<Vector<T>> flat(Matrix<T>& m) {
  return Eigen::Map<Vector<T>>(m.data(), m.size());
}
template <typename T>
Eigen::Map<const Vector<T>> flat(const Matrix<T>& m) {
  return Eigen::Map<const Vector<T>>(m.data(), m.size());
}

template <typename T>
Input<T> to_input(const CoMatTensor& t, InputTransform transform, double input_scale = 0.5) {
  const int n = t.bins * t.bins;
  Input<T> x(CoMatTensor::kPlanes, n);
  for (int p = 0; p < CoMatTensor::kPlanes; ++p)
    for (int i = 0; i < n; ++i) {
      const double v = t.planes[p].counts[i];
      x(p, i) = static_cast<T>(transform == InputTransform::log1p ? input_scale * std::log1p(n * v) : v);
    }
  return x;
}

/// Dropout masks for one forward pass; one vector per dropout site (empty when p = 0).
template <typename T>
struct DropoutMasks {
  std::vector<Vector<T>> conv;
  std::vector<Vector<T>> dense;
};

/// Activations recorded by a forward pass. Reusing one cache across samples of
/// the same architecture avoids reallocating the large conv buffers.
template <typename T>
struct ForwardCache {
  std::uint64_t generation = 0;
  std::vector<Matrix<T>> conv_in;         // [b] = input of conv block b (channels x pixels); back() feeds the dense stage
  std::vector<Matrix<T>> conv_act;        // post-activation, pre-pool
  std::vector<std::vector<int>> pool_arg; // per pooled element: flat index into conv_act
  std::vector<Vector<T>> dense_in;
  std::vector<Vector<T>> dense_act;       // post-activation, pre-dropout
  DropoutMasks<T> masks;
  Vector<T> head_in;
  T logit = 0;
  T probability = 0;
};

namespace detail {

struct Slot {
  std::size_t weight = 0;  // offset of the row-major weight block
  std::size_t bias = 0;
  int rows = 0;
  int cols = 0;
};

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Zero-padded 'same' im2col: rows (c, ky, kx), columns = output pixels.
template <typename T>
void im2col(const Matrix<T>& x, int side, int k, Matrix<T>& cols) {
  const int channels = static_cast<int>(x.rows());
  const int pad = k / 2;
  const Eigen::Index pixels = static_cast<Eigen::Index>(side) * side;
  cols.setZero(static_cast<Eigen::Index>(channels) * k * k, pixels);
  for (int c = 0; c < channels; ++c) {
    const T* src = x.row(c).data();
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* dst = cols.row((static_cast<Eigen::Index>(c) * k + ky) * k + kx).data();
        const int shift = kx - pad;
        const int x0 = std::max(0, -shift), x1 = std::min(side, side - shift);
        for (int oy = 0; oy < side; ++oy) {
          const int iy = oy + ky - pad;
          if (iy < 0 || iy >= side || x1 <= x0) continue;
          std::copy_n(src + iy * side + x0 + shift, x1 - x0, dst + oy * side + x0);
        }
      }
  }
}

template <typename T>
void col2im(const Matrix<T>& cols, int channels, int side, int k, Matrix<T>& dx) {
  const int pad = k / 2;
  dx.setZero(channels, static_cast<Eigen::Index>(side) * side);
  for (int c = 0; c < channels; ++c) {
    T* dst = dx.row(c).data();
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* src = cols.row((static_cast<Eigen::Index>(c) * k + ky) * k + kx).data();
        const int shift = kx - pad;
        const int x0 = std::max(0, -shift), x1 = std::min(side, side - shift);
        for (int oy = 0; oy < side; ++oy) {
          const int iy = oy + ky - pad;
          if (iy < 0 || iy >= side) continue;
          const int base = iy * side + shift;
          const T* sr = src + oy * side;
          for (int ox = x0; ox < x1; ++ox) dst[base + ox] += sr[ox];
        }
      }
  }
}

template <typename T>
T sigmoid(T z) {
  return z >= 0 ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
}

}  // namespace detail

inline constexpr double kProbabilityClamp = 1e-7;

/// Binary cross-entropy from the logit, capped at -log(1e-7) (prediction clamped to [1e-7, 1-1e-7]).
template <typename T>
double bce_loss(T logit, T label) {
  const double z = static_cast<double>(logit), y = static_cast<double>(label);
  const double loss = std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  return std::min(loss, -std::log(kProbabilityClamp));
}

template <typename T>
class CnnModel {
 public:
  using Scalar = T;

  explicit CnnModel(Architecture arch, std::uint64_t seed = 1) : arch_(std::move(arch)) {
    layout();
    init(seed);
  }

  const Architecture& architecture() const { return arch_; }
  std::size_t parameter_count() const { return params_.size(); }
  std::span<T> parameters() {
    ++generation_;
    return params_;
  }
  std::span<const T> parameters() const { return params_; }
  std::uint64_t generation() const { return generation_; }

  /// Side length of the feature map entering each conv block (plus one past the last).
  std::vector<int> conv_sides() const {
    std::vector<int> s{arch_.input_bins};
    for (const auto& c : arch_.convs) s.push_back(s.back() / c.pool);
    return s;
  }

  std::size_t flat_features() const {
    const int side = conv_sides().back();
    const int ch = arch_.convs.empty() ? arch_.input_channels : arch_.convs.back().filters;
    return static_cast<std::size_t>(side) * side * ch;
  }

  void check_input(const Input<T>& x) const {
    if (x.rows() != arch_.input_channels ||
        x.cols() != static_cast<Eigen::Index>(arch_.input_bins) * arch_.input_bins)
      throw std::invalid_argument("CnnModel: input shape does not match architecture (" +
                                  std::to_string(arch_.input_bins) + " bins)");
  }

  /// Full forward pass recording everything backward() needs. In train mode,
  /// dropout masks are drawn from `rng` unless `frozen` supplies them.
  void forward_into(ForwardCache<T>& c, const Input<T>& x, Mode mode, std::mt19937_64* rng = nullptr,
                    const DropoutMasks<T>* frozen = nullptr) const {
    check_input(x);
    if (mode == Mode::train && rng == nullptr && frozen == nullptr)
      throw std::invalid_argument("forward: train mode needs an rng or frozen masks");
    const std::size_t nc = arch_.convs.size(), nd = arch_.dense.size();
    c.generation = generation_;
    c.conv_in.resize(nc + 1);
    c.conv_act.resize(nc);
    c.pool_arg.resize(nc);
    c.dense_in.resize(nd);
    c.dense_act.resize(nd);
    c.masks.conv.resize(nc);
    c.masks.dense.resize(nd);

    auto fill_mask = [&](double p, Eigen::Index n, const Vector<T>* given, Vector<T>& m) {
      if (mode == Mode::eval || p <= 0.0) {
        m.resize(0);
        return;
      }
      if (given != nullptr && given->size() == n) {
        m = *given;
        return;
      }
      if (rng == nullptr) throw std::invalid_argument("forward: frozen masks do not match architecture");
      std::bernoulli_distribution keep(1.0 - p);
      const T scale = static_cast<T>(1.0 / (1.0 - p));
      m.resize(n);
      for (Eigen::Index i = 0; i < n; ++i) m[i] = keep(*rng) ? scale : T(0);
    };

    auto& cols = workspace().cols;
    c.conv_in[0] = x;
    int side = arch_.input_bins;
    for (std::size_t b = 0; b < nc; ++b) {
      const auto& blk = arch_.convs[b];
      const auto& s = slots_[b];
      detail::im2col<T>(c.conv_in[b], side, blk.kernel, cols);
      Matrix<T>& z = c.conv_act[b];
      z.noalias() = weights(s) * cols;
      z.colwise() += bias(s);
      if (blk.relu) z = z.cwiseMax(T(0));

      Matrix<T>& out = c.conv_in[b + 1];
      auto& arg = c.pool_arg[b];
      if (blk.pool > 1) {
        const int ps = side / blk.pool;
        out.resize(blk.filters, static_cast<Eigen::Index>(ps) * ps);
        arg.resize(static_cast<std::size_t>(blk.filters) * ps * ps);
        for (int f = 0; f < blk.filters; ++f)
          for (int py = 0; py < ps; ++py)
            for (int px = 0; px < ps; ++px) {
              int best = -1;
              T best_v = -std::numeric_limits<T>::infinity();
              for (int dy = 0; dy < blk.pool; ++dy)
                for (int dx = 0; dx < blk.pool; ++dx) {
                  const int idx = (py * blk.pool + dy) * side + (px * blk.pool + dx);
                  if (z(f, idx) > best_v) {
                    best_v = z(f, idx);
                    best = idx;
                  }
                }
              const Eigen::Index o = static_cast<Eigen::Index>(py) * ps + px;
              out(f, o) = best_v;
              arg[static_cast<std::size_t>(o) * blk.filters + f] = best;
            }
        side = ps;
      } else {
        out = z;
        arg.clear();
      }

      const Vector<T>* given = frozen && b < frozen->conv.size() ? &frozen->conv[b] : nullptr;
      fill_mask(blk.dropout, out.size(), given, c.masks.conv[b]);
      if (c.masks.conv[b].size() > 0) flat(out).array() *= c.masks.conv[b].array();
    }

    const auto& last = c.conv_in[nc];
    Eigen::Map<const Vector<T>> v0(last.data(), last.size());
    // Dense input d is the (masked) output of layer d-1.
    auto masked_output = [&](std::size_t d, Vector<T>& dst) {
      dst = c.dense_act[d];
      if (c.masks.dense[d].size() > 0) dst.array() *= c.masks.dense[d].array();
    };
    for (std::size_t d = 0; d < nd; ++d) {
      const auto& blk = arch_.dense[d];
      const auto& s = slots_[nc + d];
      if (d == 0)
        c.dense_in[d] = v0;
      else
        masked_output(d - 1, c.dense_in[d]);
      Vector<T>& z = c.dense_act[d];
      z.noalias() = weights(s) * c.dense_in[d];
      z += bias(s);
      if (blk.relu) z = z.cwiseMax(T(0));
      const Vector<T>* given = frozen && d < frozen->dense.size() ? &frozen->dense[d] : nullptr;
      fill_mask(blk.dropout, z.size(), given, c.masks.dense[d]);
    }
    if (nd == 0)
      c.head_in = v0;
    else
      masked_output(nd - 1, c.head_in);
    const auto& hs = slots_.back();
    c.logit = weights(hs).row(0).dot(c.head_in) + bias(hs)(0);
    c.probability = detail::sigmoid(c.logit);
  }

  ForwardCache<T> forward_record(const Input<T>& x, Mode mode, std::mt19937_64* rng = nullptr,
                                 const DropoutMasks<T>* frozen = nullptr) const {
    ForwardCache<T> c;
    forward_into(c, x, mode, rng, frozen);
    return c;
  }

  /// Probability of the virtual-background class.
  T forward(const Input<T>& x, Mode mode = Mode::eval, std::mt19937_64* rng = nullptr) const {
    auto& c = workspace().cache;
    forward_into(c, x, mode, rng);
    return c.probability;
  }

  Input<T> prepare(const CoMatTensor& t) const { return to_input<T>(t, arch_.transform, arch_.input_scale); }
  T predict(const CoMatTensor& t) const { return forward(prepare(t)); }

  /// Accumulates d(BCE)/d(params) for one sample into `grad` (scaled by `weight`).
  void backward(const ForwardCache<T>& c, T label, std::span<T> grad, T weight = T(1)) const {
    if (c.generation != generation_) throw std::logic_error("backward: activation cache is stale");
    if (grad.size() != params_.size()) throw std::invalid_argument("backward: gradient buffer size mismatch");
    const T dlogit = weight * (c.probability - label);
    const std::size_t nc = arch_.convs.size();

    const auto& hs = slots_.back();
    gradient_weights(hs, grad) += dlogit * c.head_in.transpose();
    gradient_bias(hs, grad)(0) += dlogit;
    Vector<T> dv = weights(hs).transpose() * dlogit;

    for (std::size_t d = arch_.dense.size(); d-- > 0;) {
      const auto& blk = arch_.dense[d];
      const auto& s = slots_[nc + d];
      if (c.masks.dense[d].size() > 0) dv = dv.cwiseProduct(c.masks.dense[d]);
      if (blk.relu) dv = (c.dense_act[d].array() > T(0)).select(dv, T(0));
      gradient_weights(s, grad).noalias() += dv * c.dense_in[d].transpose();
      gradient_bias(s, grad) += dv;
      dv = weights(s).transpose() * dv;
    }
    if (nc == 0) return;

    auto& ws = workspace();
    ws.dout.resize(nc + 1);
    ws.dz.resize(nc);
    Matrix<T>& top = ws.dout[nc];
    top.resize(c.conv_in[nc].rows(), c.conv_in[nc].cols());
    flat(top) = dv;
    const auto sides = conv_sides();
    for (std::size_t b = nc; b-- > 0;) {
      const auto& blk = arch_.convs[b];
      const auto& s = slots_[b];
      const int side = sides[b];
      Matrix<T>& dout = ws.dout[b + 1];
      if (c.masks.conv[b].size() > 0) flat(dout).array() *= c.masks.conv[b].array();
      Matrix<T>& dz = ws.dz[b];
      if (blk.pool > 1) {
        dz.setZero(blk.filters, static_cast<Eigen::Index>(side) * side);
        const auto& arg = c.pool_arg[b];
        for (Eigen::Index o = 0; o < dout.cols(); ++o)
          for (int f = 0; f < blk.filters; ++f) dz(f, arg[static_cast<std::size_t>(o) * blk.filters + f]) += dout(f, o);
      } else {
        dz = dout;
      }
      if (blk.relu) dz = (c.conv_act[b].array() > T(0)).select(dz, T(0));
      detail::im2col<T>(c.conv_in[b], side, blk.kernel, ws.cols);
      gradient_weights(s, grad).noalias() += dz * ws.cols.transpose();
      gradient_bias(s, grad) += dz.rowwise().sum();
      if (b == 0) break;
      ws.dcols.noalias() = weights(s).transpose() * dz;
      detail::col2im<T>(ws.dcols, static_cast<int>(c.conv_in[b].rows()), side, blk.kernel, ws.dout[b]);
    }
  }

  /// SGD with momentum: v <- momentum * v - lr * g; w <- w + v.
  void sgd_step(std::span<const T> grad, std::span<T> velocity, T lr, T momentum) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      velocity[i] = momentum * velocity[i] - lr * grad[i];
      params_[i] += velocity[i];
    }
    ++generation_;
  }

  void save(const std::filesystem::path& path) const;
  static CnnModel load(const std::filesystem::path& path);

 private:
  /// Per-thread scratch buffers, keyed by nothing: sizes follow the last architecture used.
  struct Workspace {
    Matrix<T> cols, dcols;
    std::vector<Matrix<T>> dout, dz;
    ForwardCache<T> cache;
  };
  static Workspace& workspace() {
    thread_local Workspace ws;
    return ws;
  }

  using RowMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstRowMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  ConstRowMap weights(const detail::Slot& s) const { return ConstRowMap(params_.data() + s.weight, s.rows, s.cols); }
  Eigen::Map<const Vector<T>> bias(const detail::Slot& s) const {
    return Eigen::Map<const Vector<T>>(params_.data() + s.bias, s.rows);
  }
  static RowMap gradient_weights(const detail::Slot& s, std::span<T> g) { return RowMap(g.data() + s.weight, s.rows, s.cols); }
  static Eigen::Map<Vector<T>> gradient_bias(const detail::Slot& s, std::span<T> g) {
    return Eigen::Map<Vector<T>>(g.data() + s.bias, s.rows);
  }

  void layout() {
    if (arch_.input_bins <= 0 || arch_.input_channels <= 0) throw std::invalid_argument("Architecture: bad input shape");
    std::size_t offset = 0;
    auto add = [&](int rows, int cols) {
      detail::Slot s;
      s.rows = rows;
      s.cols = cols;
      s.weight = offset;
      offset += static_cast<std::size_t>(rows) * cols;
      s.bias = offset;
      offset += static_cast<std::size_t>(rows);
      slots_.push_back(s);
    };
    int channels = arch_.input_channels;
    int side = arch_.input_bins;
    for (const auto& c : arch_.convs) {
      if (c.kernel < 1 || c.kernel % 2 == 0 || c.filters < 1 || c.pool < 1)
        throw std::invalid_argument("Architecture: bad conv block");
      add(c.filters, channels * c.kernel * c.kernel);
      channels = c.filters;
      side /= c.pool;
      if (side < 1) throw std::invalid_argument("Architecture: feature map pooled away");
    }
    int in = channels * side * side;
    for (const auto& d : arch_.dense) {
      if (d.units < 1) throw std::invalid_argument("Architecture: bad dense block");
      add(d.units, in);
      in = d.units;
    }
    add(1, in);
    params_.assign(offset, T(0));
  }

  /// He-uniform weights, zero biases.
  void init(std::uint64_t seed) {
    std::mt19937_64 rng(detail::mix_seed(seed, 0));
    for (const auto& s : slots_) {
      const double limit = std::sqrt(6.0 / s.cols);
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (std::size_t i = 0; i < static_cast<std::size_t>(s.rows) * s.cols; ++i)
        params_[s.weight + i] = static_cast<T>(dist(rng));
    }
  }

  Architecture arch_;
  std::vector<detail::Slot> slots_;
  std::vector<T> params_;
  std::uint64_t generation_ = 0;
};

// -- training -----------------------------------------------------------------

template <typename T>
struct Sample {
  Input<T> input;
  T label = 0;  // 1 = virtual background
};

template <typename T>
using Dataset = std::vector<Sample<T>>;

struct TrainConfig {
  double learning_rate = 0.001;
  double momentum = 0.9;
  int batch_size = 20;
  int epochs = 50;
  std::uint64_t seed = 1;
  /// Stop once validation accuracy reaches this value (0 disables early stopping).
  double stop_at_val_accuracy = 0.0;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0, train_acc = 0, val_loss = 0, val_acc = 0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
};

struct EvalStats {
  double loss = 0;
  double accuracy = 0;
};

template <typename T>
EvalStats evaluate(const CnnModel<T>& model, const Dataset<T>& data) {
  EvalStats s;
  if (data.empty()) return s;
  std::size_t correct = 0;
  ForwardCache<T> c;
  for (const auto& smp : data) {
    model.forward_into(c, smp.input, Mode::eval);
    s.loss += bce_loss(c.logit, smp.label);
    correct += ((c.probability >= T(0.5)) == (smp.label >= T(0.5)));
  }
  s.loss /= static_cast<double>(data.size());
  s.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return s;
}

/// Mean-loss gradient over a batch. Train mode draws dropout masks from `rng`.
template <typename T>
std::vector<T> batch_gradient(const CnnModel<T>& model, std::span<const Sample<T>* const> batch, Mode mode,
                              std::mt19937_64* rng, double* loss_sum = nullptr, std::size_t* correct = nullptr) {
  std::vector<T> grad(model.parameter_count(), T(0));
  const T w = T(1) / static_cast<T>(batch.size());
  ForwardCache<T> c;
  for (const auto* smp : batch) {
    model.forward_into(c, smp->input, mode, rng);
    if (loss_sum) *loss_sum += bce_loss(c.logit, smp->label);
    if (correct) *correct += ((c.probability >= T(0.5)) == (smp->label >= T(0.5)));
    model.backward(c, smp->label, grad, w);
  }
  return grad;
}

/// Called after every epoch; returning false stops training.
using EpochCallback = std::function<bool(const EpochStats&)>;

template <typename T>
TrainHistory train(CnnModel<T>& model, const Dataset<T>& data, const std::type_identity_t<Dataset<T>>* validation,
                   const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  if (!(cfg.learning_rate >= 0.0)) throw std::invalid_argument("train: learning rate must be >= 0");
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
  if (cfg.epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  const bool has_pos = std::any_of(data.begin(), data.end(), [](const auto& s) { return s.label >= T(0.5); });
  const bool has_neg = std::any_of(data.begin(), data.end(), [](const auto& s) { return s.label < T(0.5); });
  if (!has_pos || !has_neg) throw std::invalid_argument("train: dataset must contain both labels");

  std::mt19937_64 order_rng(detail::mix_seed(cfg.seed, 1));
  std::mt19937_64 dropout_rng(detail::mix_seed(cfg.seed, 2));
  std::vector<T> velocity(model.parameter_count(), T(0));
  std::vector<const Sample<T>*> order(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) order[i] = &data[i];

  TrainHistory hist;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), order.size() - start);
      std::span<const Sample<T>* const> batch(order.data() + start, n);
      const auto grad = batch_gradient(model, batch, Mode::train, &dropout_rng, &loss_sum, &correct);
      model.sgd_step(grad, velocity, static_cast<T>(cfg.learning_rate), static_cast<T>(cfg.momentum));
    }
    EpochStats st;
    st.epoch = epoch;
    st.train_loss = loss_sum / static_cast<double>(data.size());
    st.train_acc = static_cast<double>(correct) / static_cast<double>(data.size());
    if (validation && !validation->empty()) {
      const auto v = evaluate(model, *validation);
      st.val_loss = v.loss;
      st.val_acc = v.accuracy;
    }
    hist.epochs.push_back(st);
    if (on_epoch && !on_epoch(st)) break;
    if (cfg.stop_at_val_accuracy > 0.0 && validation && !validation->empty() &&
        st.val_acc >= cfg.stop_at_val_accuracy)
      break;
  }
  return hist;
}

inline void write_history_csv(const TrainHistory& h, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,train_loss,train_acc,val_loss,val_acc\n";
  out.precision(9);
  for (const auto& e : h.epochs)
    out << e.epoch << ',' << e.train_loss << ',' << e.train_acc << ',' << e.val_loss << ',' << e.val_acc << '\n';
}

// -- gradient check -------------------------------------------------------------

struct GradCheckReport {
  double max_relative_error = 0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::size_t kinks_skipped = 0;  // perturbation crossed a ReLU or max-pool switch
  bool passed = false;
};

/// Relative error with a 1e-8 floor on the magnitude, so exactly-zero gradients compare absolutely.
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

namespace detail {

/// True when both passes took the same branch at every ReLU and max-pool.
template <typename T>
bool same_activation_pattern(const ForwardCache<T>& a, const ForwardCache<T>& b) {
  for (std::size_t i = 0; i < a.conv_act.size(); ++i) {
    if (((a.conv_act[i].array() > T(0)) != (b.conv_act[i].array() > T(0))).any()) return false;
    if (a.pool_arg[i] != b.pool_arg[i]) return false;
  }
  for (std::size_t i = 0; i < a.dense_act.size(); ++i)
    if (((a.dense_act[i].array() > T(0)) != (b.dense_act[i].array() > T(0))).any()) return false;
  return true;
}

}  // namespace detail

/// Compares backward() against central differences (step `epsilon`) on every
/// parameter. Dropout masks are sampled once and frozen across perturbations.
/// A parameter that misses the tolerance while its perturbation flips a ReLU or
/// pooling decision is skipped and counted: the loss has a kink inside the step.
inline GradCheckReport grad_check(const Architecture& arch, double tolerance, std::uint64_t seed = 7,
                                  double epsilon = 1e-3) {
  CnnModel<double> model(arch, seed);
  std::mt19937_64 rng(detail::mix_seed(seed, 3));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  // Non-zero biases so ReLU kinks are not all at zero pre-activation.
  {
    auto p = model.parameters();
    for (auto& v : p)
      if (v == 0.0) v = 0.1 * (u(rng) - 0.5);
  }
  Input<double> x(arch.input_channels, static_cast<Eigen::Index>(arch.input_bins) * arch.input_bins);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
  const double label = 1.0;

  const auto cache = model.forward_record(x, Mode::train, &rng);
  const DropoutMasks<double> masks = cache.masks;
  std::vector<double> grad(model.parameter_count(), 0.0);
  model.backward(cache, label, grad);

  // Raw (unclamped) loss from the logit so the derivative matches sigma(z) - y.
  auto raw_loss = [&](double z) { return std::max(z, 0.0) - z * label + std::log1p(std::exp(-std::abs(z))); };

  GradCheckReport rep;
  auto params = model.parameters();
  ForwardCache<double> plus, minus;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double orig = params[i];
    params[i] = orig + epsilon;
    model.forward_into(plus, x, Mode::train, nullptr, &masks);
    params[i] = orig - epsilon;
    model.forward_into(minus, x, Mode::train, nullptr, &masks);
    params[i] = orig;
    const double numeric = (raw_loss(plus.logit) - raw_loss(minus.logit)) / (2.0 * epsilon);
    const double err = relative_error(grad[i], numeric);
    if (err >= tolerance &&
        (!detail::same_activation_pattern(cache, plus) || !detail::same_activation_pattern(cache, minus))) {
      ++rep.kinks_skipped;
      continue;
    }
    if (err > rep.max_relative_error) {
      rep.max_relative_error = err;
      rep.worst_index = i;
    }
    ++rep.checked;
  }
  rep.passed = rep.checked > 0 && rep.max_relative_error < tolerance;
  return rep;
}

// -- model file -----------------------------------------------------------------
//
// "VBGM", u32 version, architecture descriptor, u64 parameter count, float32 parameters.

inline constexpr std::uint32_t kModelVersion = 1;

inline void write_architecture(std::ostream& out, const Architecture& a) {
  binio::write_u32(out, static_cast<std::uint32_t>(a.input_bins));
  binio::write_u32(out, static_cast<std::uint32_t>(a.input_channels));
  binio::write_u32(out, static_cast<std::uint32_t>(a.transform));
  binio::write_f64(out, a.input_scale);
  binio::write_u32(out, static_cast<std::uint32_t>(a.convs.size()));
  for (const auto& c : a.convs) {
    binio::write_u32(out, static_cast<std::uint32_t>(c.filters));
    binio::write_u32(out, static_cast<std::uint32_t>(c.kernel));
    binio::write_u32(out, c.relu ? 1u : 0u);
    binio::write_u32(out, static_cast<std::uint32_t>(c.pool));
    binio::write_f64(out, c.dropout);
  }
  binio::write_u32(out, static_cast<std::uint32_t>(a.dense.size()));
  for (const auto& d : a.dense) {
    binio::write_u32(out, static_cast<std::uint32_t>(d.units));
    binio::write_u32(out, d.relu ? 1u : 0u);
    binio::write_f64(out, d.dropout);
  }
}

inline Architecture read_architecture(std::istream& in) {
  Architecture a;
  a.input_bins = static_cast<int>(binio::read_u32(in));
  a.input_channels = static_cast<int>(binio::read_u32(in));
  a.transform = static_cast<InputTransform>(binio::read_u32(in));
  a.input_scale = binio::read_f64(in);
  const auto nc = binio::read_u32(in);
  if (nc > 64) throw std::runtime_error("VBGM: implausible conv count");
  for (std::uint32_t i = 0; i < nc; ++i) {
    ConvBlock c;
    c.filters = static_cast<int>(binio::read_u32(in));
    c.kernel = static_cast<int>(binio::read_u32(in));
    c.relu = binio::read_u32(in) != 0;
    c.pool = static_cast<int>(binio::read_u32(in));
    c.dropout = binio::read_f64(in);
    a.convs.push_back(c);
  }
  const auto nd = binio::read_u32(in);
  if (nd > 64) throw std::runtime_error("VBGM: implausible dense count");
  for (std::uint32_t i = 0; i < nd; ++i) {
    DenseBlock d;
    d.units = static_cast<int>(binio::read_u32(in));
    d.relu = binio::read_u32(in) != 0;
    d.dropout = binio::read_f64(in);
    a.dense.push_back(d);
  }
  return a;
}

template <typename T>
void CnnModel<T>::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  binio::write_magic(out, "VBGM");
  binio::write_u32(out, kModelVersion);
  write_architecture(out, arch_);
  binio::write_u64(out, params_.size());
  for (T v : params_) binio::write_f32(out, static_cast<float>(v));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

template <typename T>
CnnModel<T> CnnModel<T>::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  binio::expect_magic(in, "VBGM");
  if (binio::read_u32(in) != kModelVersion) throw std::runtime_error("VBGM: unsupported version");
  CnnModel<T> m(read_architecture(in), 0);
  if (binio::read_u64(in) != m.params_.size()) throw std::runtime_error("VBGM: parameter count mismatch");
  for (auto& v : m.params_) v = static_cast<T>(binio::read_f32(in));
  return m;
}

}  // namespace vbd::nn
