#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "test_util.hpp"
#include "vbd/attacks.hpp"

namespace vbd {
namespace {

int clampi(int v, int n) { return std::max(0, std::min(n - 1, v)); }

Frame sort_median_oracle(const Frame& f, int k) {
  Frame out(f.width, f.height);
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x)
      for (int c = 0; c < 3; ++c) {
        std::vector<int> w;
        for (int dy = -k / 2; dy <= k / 2; ++dy)
          for (int dx = -k / 2; dx <= k / 2; ++dx) w.push_back(f.at(clampi(x + dx, f.width), clampi(y + dy, f.height), c));
        std::sort(w.begin(), w.end());
        out.at(x, y, c) = static_cast<std::uint8_t>(w[w.size() / 2]);
      }
  return out;
}

// Box mean through a summed-area table over the edge-padded frame.
Frame sliding_sum_oracle(const Frame& f, int k) {
  const int r = k / 2, W = f.width + 2 * r, H = f.height + 2 * r;
  Frame out(f.width, f.height);
  for (int c = 0; c < 3; ++c) {
    std::vector<long> sat(static_cast<std::size_t>(W + 1) * (H + 1), 0);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        sat[(y + 1) * (W + 1) + x + 1] = f.at(clampi(x - r, f.width), clampi(y - r, f.height), c) +
                                         sat[y * (W + 1) + x + 1] + sat[(y + 1) * (W + 1) + x] - sat[y * (W + 1) + x];
    for (int y = 0; y < f.height; ++y)
      for (int x = 0; x < f.width; ++x) {
        const long s = sat[(y + k) * (W + 1) + x + k] - sat[y * (W + 1) + x + k] - sat[(y + k) * (W + 1) + x] +
                       sat[y * (W + 1) + x];
        out.at(x, y, c) = static_cast<std::uint8_t>(std::floor(static_cast<double>(s) / (k * k) + 0.5));
      }
  }
  return out;
}

double luma_std(const Frame& f) {
  const auto y = to_luma(f);
  double m = 0, v = 0;
  for (auto s : y.samples) m += s;
  m /= y.samples.size();
  for (auto s : y.samples) v += (s - m) * (s - m);
  return std::sqrt(v / y.samples.size());
}

int count_bright(const Frame& f) {
  int n = 0;
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x) n += f.at(x, y, 0) > 127;
  return n;
}

TEST(Attacks, Median) {
  const Frame flat = test::constant_frame(12, 12, 40, 50, 60);
  EXPECT_EQ(median_filter(flat, 3), flat);

  Frame impulse = test::constant_frame(9, 9, 10, 10, 10);
  impulse.set(4, 4, 250, 250, 250);
  EXPECT_EQ(median_filter(impulse, 3), test::constant_frame(9, 9, 10, 10, 10));

  const Frame r = test::random_frame(8, 8, 3);
  EXPECT_EQ(median_filter(r, 3), sort_median_oracle(r, 3));
  EXPECT_EQ(median_filter(r, 5), sort_median_oracle(r, 5));
  EXPECT_THROW(median_filter(r, 4), std::invalid_argument);
  EXPECT_THROW(median_filter(r, 9), std::invalid_argument);
}

TEST(Attacks, AverageBlur) {
  const Frame flat = test::constant_frame(10, 10, 1, 2, 3);
  EXPECT_EQ(average_blur(flat, 5), flat);

  Frame checker(8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      const std::uint8_t v = (x + y) % 2 ? 255 : 0;
      checker.set(x, y, v, v, v);
    }
  const Frame b = average_blur(checker, 3);
  for (int y = 1; y < 7; ++y)
    for (int x = 1; x < 7; ++x) EXPECT_EQ(b.at(x, y, 0), (x + y) % 2 ? 142 : 113);

  const Frame r = test::random_frame(15, 11, 8);
  EXPECT_EQ(average_blur(r, 3), sliding_sum_oracle(r, 3));
  EXPECT_EQ(average_blur(r, 7), sliding_sum_oracle(r, 7));
}

TEST(Attacks, Gamma) {
  const Frame r = test::random_frame(10, 10, 1);
  EXPECT_EQ(gamma_correct(r, 1.0), r);
  for (double g : {0.6, 0.9, 1.3}) {
    const Frame ends = test::constant_frame(2, 2, 0, 255, 128);
    const Frame out = gamma_correct(ends, g);
    EXPECT_EQ(out.at(0, 0, 0), 0);
    EXPECT_EQ(out.at(0, 0, 1), 255);
  }
  // round(255 * (128/255)^0.9) = round(137.133...) = 137
  EXPECT_EQ(gamma_correct(test::constant_frame(2, 2, 128, 128, 128), 0.9).at(0, 0, 0), 137);
  EXPECT_THROW(gamma_correct(r, 0.0), std::invalid_argument);
}

TEST(Attacks, Clahe) {
  const Frame flat = test::constant_frame(64, 48, 90, 120, 30);
  EXPECT_EQ(clahe(flat, 2.0), flat);

  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Frame out = clahe(test::random_frame(40, 40, seed), 4.0);
    EXPECT_EQ(out.width, 40);
  }

  // Low-contrast ramp with mild noise (seed 7).
  Frame ramp(128, 96);
  std::mt19937_64 rng(7);
  for (int y = 0; y < 96; ++y)
    for (int x = 0; x < 128; ++x) {
      const auto v = static_cast<std::uint8_t>(100 + x / 8 + rng() % 3);
      ramp.set(x, y, v, v, v);
    }
  EXPECT_GT(luma_std(clahe(ramp, 2.0)), luma_std(ramp));
  EXPECT_GT(luma_std(clahe(ramp, 4.0)), luma_std(ramp));
  EXPECT_THROW(clahe(ramp, 0.0), std::invalid_argument);
}

TEST(Attacks, GaussianNoise) {
  const Frame r = test::random_frame(16, 16, 2);
  EXPECT_EQ(gaussian_noise(r, 0.0, 5), r);
  EXPECT_EQ(gaussian_noise(r, 2.0, 5), gaussian_noise(r, 2.0, 5));
  EXPECT_NE(gaussian_noise(r, 2.0, 5), gaussian_noise(r, 2.0, 6));

  const Frame mid = test::constant_frame(256, 256, 128, 128, 128);
  const Frame n = gaussian_noise(mid, 2.0, 12345);
  double m = 0, v = 0;
  for (auto s : n.samples) m += s - 128.0;
  m /= n.samples.size();
  for (auto s : n.samples) v += (s - 128.0 - m) * (s - 128.0 - m);
  const double sd = std::sqrt(v / (n.samples.size() - 1));
  EXPECT_GE(sd, 1.9);
  EXPECT_LE(sd, 2.1);
}

TEST(Attacks, Resize) {
  const Frame r = test::random_frame(40, 30, 3);
  EXPECT_EQ(resize(r, 1.0), r);
  const Frame hd = test::constant_frame(1280, 720, 5, 6, 7);
  const Frame half = resize(hd, 0.5);
  EXPECT_EQ(half.width, 640);
  EXPECT_EQ(half.height, 360);
  EXPECT_EQ(half, test::constant_frame(640, 360, 5, 6, 7));
  EXPECT_EQ(resize(test::constant_frame(40, 40, 9, 9, 9), 0.8), test::constant_frame(32, 32, 9, 9, 9));
  EXPECT_THROW(resize(r, 0.3), std::invalid_argument);
  EXPECT_THROW(resize(r, 0.0), std::invalid_argument);
}

TEST(Attacks, Zoom) {
  const Frame flat = test::constant_frame(30, 20, 70, 80, 90);
  EXPECT_EQ(zoom(flat, 1.9), flat);
  const Frame r = test::random_frame(33, 21, 3);
  const Frame z = zoom(r, 1.4);
  EXPECT_EQ(z.width, 33);
  EXPECT_EQ(z.height, 21);

  Frame sq(100, 100);
  for (int y = 35; y < 65; ++y)
    for (int x = 35; x < 65; ++x) sq.set(x, y, 255, 255, 255);
  const double ratio = static_cast<double>(count_bright(zoom(sq, 1.4))) / count_bright(sq);
  EXPECT_NEAR(ratio, 1.96, 0.05 * 1.96);
  EXPECT_THROW(zoom(r, 1.0), std::invalid_argument);
}

TEST(Attacks, Rotate) {
  const Frame r = test::random_frame(20, 20, 4);
  EXPECT_EQ(rotate(r, 0.0), r);
  const Frame flat = test::constant_frame(20, 16, 1, 100, 200);
  EXPECT_EQ(rotate(flat, 10.0), flat);

  const Frame s = test::smooth_frame(80, 60);
  const Frame back = rotate(rotate(s, 5.0), -5.0);
  double err = 0;
  int n = 0;
  for (int y = 6; y < 54; ++y)
    for (int x = 8; x < 72; ++x)
      for (int c = 0; c < 3; ++c) {
        err += std::abs(int(back.at(x, y, c)) - int(s.at(x, y, c)));
        ++n;
      }
  EXPECT_LT(err / n, 3.0);
  EXPECT_THROW(rotate(r, 45.0), std::invalid_argument);
}

TEST(Attacks, Sharpen) {
  const Frame flat = test::constant_frame(10, 10, 33, 66, 99);
  EXPECT_EQ(sharpen(flat), flat);
  Frame step(20, 10);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 20; ++x) {
      const std::uint8_t v = x < 10 ? 60 : 180;
      step.set(x, y, v, v, v);
    }
  const Frame out = sharpen(step);
  EXPECT_GT(out.at(10, 5, 0), 180);
  EXPECT_LT(out.at(9, 5, 0), 60);
}

TEST(Attacks, ChainsAndIdentities) {
  const Frame r = test::random_frame(32, 24, 6);
  EXPECT_EQ(apply_chain(r, parse_chain("gamma:1.0")), r);
  const Frame flat = test::constant_frame(16, 16, 77, 77, 77);
  EXPECT_EQ(apply_chain(flat, parse_chain("avg_blur:3+sharpen")), flat);
  const auto chain = parse_chain("median:3+jpeg:80");
  EXPECT_EQ(apply_chain(r, chain), apply_chain(r, chain));
  EXPECT_EQ(apply_chain(r, {}), r);
  for (const char* id : {"gamma:1", "gauss_noise:0@3", "resize:1", "rotate:0"})
    EXPECT_EQ(apply_chain(r, parse_chain(id)), r) << id;
}

TEST(Attacks, EveryAttackPreservesRangeDimsAndIsDeterministic) {
  const Frame r = test::random_frame(48, 40, 9);
  for (const char* spec : {"median:7", "avg_blur:5", "gamma:0.6", "clahe:4", "gauss_noise:2@1", "zoom:1.9",
                           "rotate:10", "sharpen", "jpeg:80", "resize:0.5"}) {
    const auto chain = parse_chain(spec);
    const Frame a = apply_chain(r, chain);
    EXPECT_EQ(a, apply_chain(r, chain)) << spec;
    if (std::string(spec).rfind("resize", 0) != 0) {
      EXPECT_EQ(a.width, r.width) << spec;
      EXPECT_EQ(a.height, r.height) << spec;
    }
  }
}

TEST(Attacks, ParsingAndJson) {
  const auto chain = parse_chain("median:3+gauss_noise:0.8@42+jpeg:80+sharpen");
  ASSERT_EQ(chain.size(), 4u);
  EXPECT_EQ(std::get<attack::GaussNoise>(chain[1]).seed, 42u);
  EXPECT_EQ(format_chain(chain), "median:3+gauss_noise:0.8@42+jpeg:80+sharpen");
  const auto j = chain_to_json(chain);
  EXPECT_EQ(j[0]["op"], "median");
  EXPECT_EQ(j[0]["params"]["k"], 3);
  EXPECT_EQ(j[1]["seed"], 42u);
  EXPECT_EQ(format_chain(chain_from_json(nlohmann::json::parse(j.dump()))), format_chain(chain));

  EXPECT_THROW(parse_chain("median:4"), std::invalid_argument);
  EXPECT_THROW(parse_chain("jpeg:0"), std::invalid_argument);
  EXPECT_THROW(parse_chain("blur"), std::invalid_argument);
  EXPECT_THROW(parse_chain("warp:2"), std::invalid_argument);
  EXPECT_THROW(parse_chain("median:3+"), std::invalid_argument);
  EXPECT_THROW(parse_chain("zoom:0.5"), std::invalid_argument);
}

}  // namespace
}  // namespace vbd
