#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "test_util.hpp"
#include "vbd/nn.hpp"

namespace vbd::nn {
namespace {

Input<double> random_input(const Architecture& a, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Input<double> x(a.input_channels, a.input_bins * a.input_bins);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
  return x;
}

void jitter_parameters(CnnModel<double>& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (auto& v : m.parameters()) v += u(rng);
}

// Eval-mode logit by nested loops over the flat parameter layout:
// per layer, weights (rows x cols, row-major; conv cols ordered c, ky, kx), then biases.
double oracle_logit(const Architecture& a, std::span<const double> p, const Input<double>& x) {
  std::size_t off = 0;
  int side = a.input_bins, ch = a.input_channels;
  std::vector<double> act(x.data(), x.data() + x.size());  // [c][y][x]
  for (const auto& blk : a.convs) {
    const int k = blk.kernel, pad = k / 2;
    const std::size_t w0 = off, b0 = off + static_cast<std::size_t>(blk.filters) * ch * k * k;
    off = b0 + blk.filters;
    std::vector<double> z(static_cast<std::size_t>(blk.filters) * side * side);
    for (int f = 0; f < blk.filters; ++f)
      for (int oy = 0; oy < side; ++oy)
        for (int ox = 0; ox < side; ++ox) {
          double s = p[b0 + f];
          for (int c = 0; c < ch; ++c)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy + ky - pad, ix = ox + kx - pad;
                if (iy < 0 || ix < 0 || iy >= side || ix >= side) continue;
                s += p[w0 + ((static_cast<std::size_t>(f) * ch + c) * k + ky) * k + kx] *
                     act[(static_cast<std::size_t>(c) * side + iy) * side + ix];
              }
          z[(static_cast<std::size_t>(f) * side + oy) * side + ox] = blk.relu ? std::max(s, 0.0) : s;
        }
    if (blk.pool > 1) {
      const int ps = side / blk.pool;
      std::vector<double> pooled(static_cast<std::size_t>(blk.filters) * ps * ps, -1e300);
      for (int f = 0; f < blk.filters; ++f)
        for (int y = 0; y < ps * blk.pool; ++y)
          for (int xx = 0; xx < ps * blk.pool; ++xx) {
            auto& dst = pooled[(static_cast<std::size_t>(f) * ps + y / blk.pool) * ps + xx / blk.pool];
            dst = std::max(dst, z[(static_cast<std::size_t>(f) * side + y) * side + xx]);
          }
      z = std::move(pooled);
      side = ps;
    }
    act = std::move(z);
    ch = blk.filters;
  }
  auto dense = [&](int units, bool relu) {
    const std::size_t in = act.size(), w0 = off, b0 = off + units * in;
    off = b0 + units;
    std::vector<double> out(units);
    for (int u = 0; u < units; ++u) {
      double s = p[b0 + u];
      for (std::size_t i = 0; i < in; ++i) s += p[w0 + u * in + i] * act[i];
      out[u] = relu ? std::max(s, 0.0) : s;
    }
    act = std::move(out);
  };
  for (const auto& d : a.dense) dense(d.units, d.relu);
  dense(1, false);
  EXPECT_EQ(off, p.size());
  return act[0];
}

CoMatTensor band_tensor(int bins, double width, std::mt19937_64& rng) {
  // Mass along a randomly shifted diagonal band; `width` controls the off-diagonal spread.
  CoMatTensor t;
  t.bins = bins;
  t.normalized = true;
  std::uniform_int_distribution<int> shift(-4, 4);
  std::normal_distribution<double> jitter(0.0, 1.0);
  for (int p = 0; p < CoMatTensor::kPlanes; ++p) {
    auto& pl = t.planes[p];
    pl.bins = bins;
    pl.counts.assign(static_cast<std::size_t>(bins) * bins, 0.0);
    const int s = shift(rng);
    for (int n = 0; n < 4000; ++n) {
      const int i = std::uniform_int_distribution<int>(0, bins - 1)(rng);
      const int j = std::clamp(static_cast<int>(std::lround(i + s + width * jitter(rng))), 0, bins - 1);
      pl.counts[static_cast<std::size_t>(i) * bins + j] += 1.0;
    }
    normalize_plane(pl);
  }
  return t;
}

Dataset<float> separable_corpus(int per_class, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Dataset<float> d;
  for (int i = 0; i < per_class; ++i) {
    d.push_back({to_input<float>(band_tensor(64, 0.0, rng), InputTransform::log1p, 0.5), 0.f});
    d.push_back({to_input<float>(band_tensor(64, 3.0, rng), InputTransform::log1p, 0.5), 1.f});
  }
  return d;
}

TEST(Nn, ZeroInputWithZeroBiasGivesHalf) {
  CnnModel<double> m(Architecture::reduced(), 3);
  Input<double> x = Input<double>::Zero(6, 64);
  // Biases are zero-initialized and the input is zero, so every pre-activation is zero.
  EXPECT_DOUBLE_EQ(m.forward(x), 0.5);
}

TEST(Nn, EvalIsDeterministic) {
  CnnModel<float> m(Architecture::detector(32), 5);
  Input<float> x = random_input(m.architecture(), 1).cast<float>();
  const float a = m.forward(x), b = m.forward(x);
  EXPECT_EQ(a, b);
  EXPECT_GT(a, 0.f);
  EXPECT_LT(a, 1.f);
}

TEST(Nn, ShapeMismatchThrows) {
  CnnModel<float> m(Architecture::detector(32), 5);
  EXPECT_THROW(m.forward(Input<float>::Zero(6, 64 * 64)), std::invalid_argument);
  EXPECT_THROW(m.forward(Input<float>::Zero(5, 32 * 32)), std::invalid_argument);
}

TEST(Nn, AcceptsAllBinCounts) {
  for (int bins : {32, 64}) {
    CnnModel<float> m(Architecture::detector(bins), 1);
    EXPECT_EQ(m.conv_sides().back(), bins / 9);
  }
  EXPECT_EQ(CnnModel<float>(Architecture::detector(256), 1).conv_sides(), (std::vector<int>{256, 256, 85, 85, 28}));
}

TEST(Nn, MatchesDirectConvolutionOracle) {
  for (bool two_dense : {true, false}) {
    Architecture a = Architecture::reduced();
    if (two_dense) a.dense.push_back({5, false, 0.0});
    CnnModel<double> m(a, 11);
    jitter_parameters(m, 12);
    for (std::uint64_t s = 0; s < 5; ++s) {
      const auto x = random_input(a, 100 + s);
      const double got = m.forward_record(x, Mode::eval).logit;
      EXPECT_NEAR(got, oracle_logit(a, std::as_const(m).parameters(), x), 1e-12);
    }
  }
}

TEST(Nn, DetectorMatchesOracleAtSmallSize) {
  Architecture a = Architecture::detector(27);
  a.dense = {{7, true, 0.5}, {6, true, 0.5}};
  CnnModel<double> m(a, 4);
  jitter_parameters(m, 5);
  const auto x = random_input(a, 6);
  EXPECT_NEAR(m.forward_record(x, Mode::eval).logit, oracle_logit(a, std::as_const(m).parameters(), x), 1e-10);
}

TEST(Nn, GradCheckPassesAtTolerance) {
  const auto rep = grad_check(Architecture::reduced(), 1e-4);
  EXPECT_TRUE(rep.passed) << "max rel err " << rep.max_relative_error << " at " << rep.worst_index;
  EXPECT_EQ(rep.checked + rep.kinks_skipped, CnnModel<double>(Architecture::reduced()).parameter_count());
  EXPECT_EQ(rep.kinks_skipped, 0u);
}

TEST(Nn, GradCheckFailsAtUnreachablePrecision) { EXPECT_FALSE(grad_check(Architecture::reduced(), 1e-12).passed); }

TEST(Nn, GradCheckWithFrozenDropoutMasks) {
  const auto rep = grad_check(Architecture::reduced(true), 1e-4);
  EXPECT_TRUE(rep.passed) << "max rel err " << rep.max_relative_error;
}

TEST(Nn, GradCheckOtherSeeds) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto rep = grad_check(Architecture::reduced(true), 1e-4, seed);
    EXPECT_TRUE(rep.passed) << "seed " << seed << " max rel err " << rep.max_relative_error << " at " << rep.worst_index;
    EXPECT_LT(rep.kinks_skipped, rep.checked / 4);
  }
}

TEST(Nn, StaleCacheIsRejected) {
  CnnModel<double> m(Architecture::reduced(), 1);
  const auto c = m.forward_record(random_input(m.architecture(), 2), Mode::eval);
  std::vector<double> g(m.parameter_count());
  EXPECT_NO_THROW(m.backward(c, 1.0, g));
  std::vector<double> v(m.parameter_count(), 0.0);
  m.sgd_step(g, v, 0.01, 0.9);
  EXPECT_THROW(m.backward(c, 1.0, g), std::logic_error);
}

TEST(Nn, SaturatedCorrectPredictionHasNearZeroGradient) {
  CnnModel<double> m(Architecture::reduced(), 1);
  {
    auto p = m.parameters();
    p.back() = 40.0;  // head bias
  }
  const auto c = m.forward_record(random_input(m.architecture(), 2), Mode::eval);
  std::vector<double> g(m.parameter_count());
  m.backward(c, 1.0, g);
  for (double v : g) EXPECT_LT(std::abs(v), 1e-12);
  EXPECT_NEAR(bce_loss(c.logit, 1.0), 0.0, 1e-12);
}

TEST(Nn, LossIsCapped) {
  EXPECT_NEAR(bce_loss(-100.0, 1.0), -std::log(1e-7), 1e-12);
  EXPECT_NEAR(bce_loss(0.0, 1.0), std::log(2.0), 1e-15);
}

TEST(Nn, DuplicateSampleGivesSameGradient) {
  CnnModel<double> m(Architecture::reduced(), 1);
  jitter_parameters(m, 3);
  Sample<double> s{random_input(m.architecture(), 4), 1.0};
  const Sample<double>* one[] = {&s};
  const Sample<double>* two[] = {&s, &s};
  const auto g1 = batch_gradient<double>(m, one, Mode::eval, nullptr);
  const auto g2 = batch_gradient<double>(m, two, Mode::eval, nullptr);
  EXPECT_EQ(g1, g2);
}

TEST(Nn, InvertedDropoutPreservesExpectation) {
  // Dense-site and conv-site dropout, each feeding the linear head directly.
  Architecture dense_site;
  dense_site.input_bins = 8;
  dense_site.transform = InputTransform::identity;
  dense_site.convs = {{4, 3, true, 1, 0.0}};
  dense_site.dense = {{256, true, 0.5}};
  Architecture conv_site = dense_site;
  conv_site.convs = {{8, 3, true, 1, 0.25}};
  conv_site.dense.clear();

  for (const auto& a : {dense_site, conv_site}) {
    CnnModel<double> m(a, 9);
    const auto x = random_input(a, 10);
    const auto eval = m.forward_record(x, Mode::eval);
    const auto params = std::as_const(m).parameters();
    const double head_bias = params.back();
    const std::size_t n = static_cast<std::size_t>(eval.head_in.size());
    double scale = 0;
    for (std::size_t i = 0; i < n; ++i) scale += std::abs(params[params.size() - 1 - n + i] * eval.head_in[i]);
    std::mt19937_64 rng(11);
    double mean = 0;
    const int draws = 1000;
    for (int k = 0; k < draws; ++k) mean += m.forward_record(x, Mode::train, &rng).logit - head_bias;
    mean /= draws;
    EXPECT_NEAR(mean, eval.logit - head_bias, 0.02 * scale);
  }
}

TEST(Nn, ZeroLearningRateLeavesWeightsUnchanged) {
  auto data = separable_corpus(4, 1);
  CnnModel<float> m(Architecture::detector(64), 2);
  const std::vector<float> before(m.parameters().begin(), m.parameters().end());
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 2;
  train(m, data, nullptr, cfg);
  const auto after = std::as_const(m).parameters();
  EXPECT_TRUE(std::equal(before.begin(), before.end(), after.begin(), after.end()));
}

TEST(Nn, TrainingIsBitDeterministic) {
  auto data = separable_corpus(5, 1);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  CnnModel<float> a(Architecture::detector(64), 2), b(Architecture::detector(64), 2);
  const auto ha = train(a, data, &data, cfg);
  const auto hb = train(b, data, &data, cfg);
  const auto pa = std::as_const(a).parameters(), pb = std::as_const(b).parameters();
  EXPECT_TRUE(std::equal(pa.begin(), pa.end(), pb.begin(), pb.end()));
  ASSERT_EQ(ha.epochs.size(), hb.epochs.size());
  EXPECT_EQ(ha.epochs.back().train_loss, hb.epochs.back().train_loss);
}

TEST(Nn, TrainRejectsBadInput) {
  CnnModel<float> m(Architecture::detector(64), 2);
  auto data = separable_corpus(2, 1);
  Dataset<float> one_class;
  for (const auto& s : data)
    if (s.label == 0.f) one_class.push_back(s);
  EXPECT_THROW(train(m, one_class, nullptr, TrainConfig{}), std::invalid_argument);
  EXPECT_THROW(train(m, Dataset<float>{}, nullptr, TrainConfig{}), std::invalid_argument);
  TrainConfig bad;
  bad.batch_size = 0;
  EXPECT_THROW(train(m, data, nullptr, bad), std::invalid_argument);
  bad = TrainConfig{};
  bad.learning_rate = -1;
  EXPECT_THROW(train(m, data, nullptr, bad), std::invalid_argument);
}

TEST(Nn, SeparableCorpusReachesHighTrainAccuracy) {
  const auto data = separable_corpus(40, 21);
  CnnModel<float> m(Architecture::detector(64), 1);
  TrainConfig cfg;
  cfg.epochs = 50;
  const auto hist = train(m, data, nullptr, cfg, [&](const EpochStats&) { return evaluate(m, data).accuracy < 1.0; });
  const double acc = evaluate(m, data).accuracy;
  EXPECT_GE(acc, 0.99) << "after " << hist.epochs.size() << " epochs";
}

TEST(Nn, SmallLearningRateLossIsMonotone) {
  const auto data = separable_corpus(40, 21);
  CnnModel<float> m(Architecture::detector(64), 1);
  TrainConfig cfg;
  cfg.learning_rate = 1e-4;
  cfg.epochs = 30;
  std::vector<double> loss{evaluate(m, data).loss};
  train(m, data, nullptr, cfg, [&](const EpochStats&) {
    loss.push_back(evaluate(m, data).loss);
    return true;
  });
  int increases = 0;
  for (std::size_t i = 1; i < loss.size(); ++i) increases += loss[i] > loss[i - 1];
  std::ostringstream trace;
  for (double l : loss) trace << l << " ";
  EXPECT_LE(increases, static_cast<int>(0.05 * (loss.size() - 1))) << trace.str();
  EXPECT_LT(loss.back(), loss.front());
}

TEST(Nn, SaveLoadRoundTrip) {
  const auto dir = test::scratch_dir("nn_io");
  Architecture a = Architecture::detector(32, false);
  CnnModel<float> m(a, 8);
  m.save(dir / "m.vbgm");
  const auto back = CnnModel<float>::load(dir / "m.vbgm");
  EXPECT_EQ(back.architecture(), a);
  const auto pa = std::as_const(m).parameters(), pb = back.parameters();
  EXPECT_TRUE(std::equal(pa.begin(), pa.end(), pb.begin(), pb.end()));
  const Input<float> x = random_input(a, 1).cast<float>();
  EXPECT_EQ(m.forward(Input<float>(x)), back.forward(Input<float>(x)));
}

TEST(Nn, LoadRejectsGarbage) {
  const auto dir = test::scratch_dir("nn_bad");
  std::ofstream(dir / "bad.vbgm") << "not a model";
  EXPECT_THROW(CnnModel<float>::load(dir / "bad.vbgm"), std::runtime_error);
  EXPECT_THROW(CnnModel<float>::load(dir / "missing.vbgm"), std::runtime_error);
}

TEST(Nn, HistoryCsv) {
  const auto dir = test::scratch_dir("nn_hist");
  TrainHistory h;
  h.epochs.push_back({1, 0.5, 0.75, 0.6, 0.7});
  write_history_csv(h, dir / "h.csv");
  std::ifstream in(dir / "h.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "epoch,train_loss,train_acc,val_loss,val_acc");
  EXPECT_EQ(row, "1,0.5,0.75,0.6,0.7");
}

}  // namespace
}  // namespace vbd::nn
