#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "test_util.hpp"
#include "vbd/comat.hpp"

namespace vbd {
namespace {

// Independent oracle: enumerate every ordered pixel pair and test the displacement.
std::vector<double> brute_force(const ChannelPlane& a, const ChannelPlane& b, int dx, int dy) {
  std::vector<double> bins(256 * 256, 0.0);
  for (int y1 = 0; y1 < a.height; ++y1)
    for (int x1 = 0; x1 < a.width; ++x1)
      for (int y2 = 0; y2 < b.height; ++y2)
        for (int x2 = 0; x2 < b.width; ++x2)
          if (x2 - x1 == dx && y2 - y1 == dy) bins[a.at(x1, y1) * 256 + b.at(x2, y2)] += 1;
  return bins;
}

ChannelPlane plane_from(int w, int h, std::initializer_list<int> v) {
  ChannelPlane p(w, h);
  std::size_t i = 0;
  for (int x : v) p.samples[i++] = static_cast<std::uint8_t>(x);
  return p;
}

TEST(Comat, ConstantPlaneSpatial) {
  ChannelPlane p(4, 4, 77);
  const auto m = spatial_comat(p, {1, 1});
  EXPECT_EQ(m.at(77, 77), 9);
  EXPECT_EQ(m.total(), 9);
}

TEST(Comat, SinglePairSpatial) {
  const auto m = spatial_comat(plane_from(2, 2, {0, 1, 2, 3}), {1, 1});
  EXPECT_EQ(m.at(0, 3), 1);
  EXPECT_EQ(m.total(), 1);
}

TEST(Comat, SpatialMatchesBruteForce) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto ch = split_channels(test::random_frame(8, 8, seed, 0, 15));
    EXPECT_EQ(spatial_comat(ch[0], {1, 1}).counts, brute_force(ch[0], ch[0], 1, 1));
    EXPECT_EQ(spatial_comat(ch[1], {2, 0}).counts, brute_force(ch[1], ch[1], 2, 0));
  }
}

TEST(Comat, DisplacementErrors) {
  ChannelPlane p(4, 4);
  EXPECT_THROW(spatial_comat(p, {4, 0}), std::invalid_argument);
  EXPECT_THROW(spatial_comat(p, {0, 5}), std::invalid_argument);
  EXPECT_THROW(spatial_comat(p, {-1, 0}), std::invalid_argument);
}

TEST(Comat, CrossbandConstant) {
  const auto m = crossband_comat(ChannelPlane(4, 4, 5), ChannelPlane(4, 4, 9), {0, 0});
  EXPECT_EQ(m.at(5, 9), 16);
  EXPECT_EQ(m.total(), 16);
}

TEST(Comat, CrossbandSamePlaneIsDiagonal) {
  const auto ch = split_channels(test::random_frame(10, 10, 4));
  const auto m = crossband_comat(ch[0], ch[0], {0, 0});
  for (int i = 0; i < 256; ++i)
    for (int j = 0; j < 256; ++j)
      if (i != j) EXPECT_EQ(m.at(i, j), 0);
}

TEST(Comat, CrossbandMatchesBruteForceAndChecksShape) {
  const auto ch = split_channels(test::random_frame(8, 8, 11));
  EXPECT_EQ(crossband_comat(ch[0], ch[2], {0, 0}).counts, brute_force(ch[0], ch[2], 0, 0));
  EXPECT_THROW(crossband_comat(ChannelPlane(4, 4), ChannelPlane(4, 5), {0, 0}), std::invalid_argument);
}

TEST(Comat, TensorPlaneOrderAndOracle) {
  const Frame f = test::random_frame(16, 16, 99);
  const auto t = build_tensor(f, false);
  const auto ch = split_channels(f);
  EXPECT_EQ(t.planes[0].counts, brute_force(ch[0], ch[0], 1, 1));
  EXPECT_EQ(t.planes[1].counts, brute_force(ch[1], ch[1], 1, 1));
  EXPECT_EQ(t.planes[2].counts, brute_force(ch[2], ch[2], 1, 1));
  EXPECT_EQ(t.planes[3].counts, brute_force(ch[0], ch[1], 0, 0));
  EXPECT_EQ(t.planes[4].counts, brute_force(ch[0], ch[2], 0, 0));
  EXPECT_EQ(t.planes[5].counts, brute_force(ch[1], ch[2], 0, 0));
}

TEST(Comat, GrayFrameCrossPlanesIdentical) {
  const auto t = build_tensor(test::gray_frame(20, 12, 5));
  EXPECT_EQ(t.planes[3], t.planes[4]);
  EXPECT_EQ(t.planes[4], t.planes[5]);
}

TEST(Comat, ShapeIs256x256x6) {
  const auto t = build_tensor(test::smooth_frame(1280, 720));
  ASSERT_EQ(t.planes.size(), 6u);
  for (const auto& p : t.planes) EXPECT_EQ(p.counts.size(), 256u * 256u);
  for (const auto& p : t.planes) EXPECT_NEAR(p.total(), 1.0, 1e-9);
}

TEST(Comat, RawSumsProperty) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    const int w = 2 + static_cast<int>(rng() % 30), h = 2 + static_cast<int>(rng() % 30);
    const auto t = build_tensor(test::random_frame(w, h, rng()), false);
    for (int p = 0; p < 3; ++p) EXPECT_EQ(t.planes[p].total(), double((w - 1) * (h - 1)));
    for (int p = 3; p < 6; ++p) EXPECT_EQ(t.planes[p].total(), double(w * h));
  }
}

TEST(Comat, RowPermutationKeepsCrossbandPlanes) {
  Frame f = test::random_frame(12, 9, 21);
  Frame g = f;
  for (int x = 0; x < f.width; ++x)
    for (int c = 0; c < 3; ++c) std::swap(g.at(x, 1, c), g.at(x, 6, c));
  const auto a = build_tensor(f, false), b = build_tensor(g, false);
  for (int p = 3; p < 6; ++p) EXPECT_EQ(a.planes[p], b.planes[p]);
  EXPECT_NE(a.planes[0], b.planes[0]);
}

TEST(Comat, NormalizationPreservesArgmax) {
  const Frame f = test::random_frame(30, 30, 8, 100, 110);
  const auto raw = build_tensor(f, false), norm = build_tensor(f, true);
  for (int p = 0; p < 6; ++p) {
    const auto& r = raw.planes[p].counts;
    const auto& n = norm.planes[p].counts;
    EXPECT_EQ(std::max_element(r.begin(), r.end()) - r.begin(), std::max_element(n.begin(), n.end()) - n.begin());
  }
}

TEST(Comat, Rebin) {
  const auto t = build_tensor(test::random_frame(40, 30, 3), false);
  EXPECT_EQ(rebin_tensor(t, 256), t);
  const auto one = rebin_tensor(t, 1);
  for (int p = 0; p < 6; ++p) EXPECT_EQ(one.planes[p].counts[0], t.planes[p].total());

  const auto r64 = rebin_tensor(t, 64);
  for (int p = 0; p < 6; ++p) {
    EXPECT_EQ(r64.planes[p].total(), t.planes[p].total());
    for (int i = 0; i < 64; ++i)
      for (int j = 0; j < 64; ++j) {
        double s = 0;
        for (int a = 0; a < 4; ++a)
          for (int b = 0; b < 4; ++b) s += t.planes[p].at(4 * i + a, 4 * j + b);
        EXPECT_EQ(r64.planes[p].at(i, j), s);
      }
  }
  EXPECT_THROW(rebin_tensor(t, 100), std::invalid_argument);
}

TEST(Comat, TensorFileRoundTrip) {
  const auto dir = test::scratch_dir("tensor_file");
  const auto t = rebin_tensor(build_tensor(test::random_frame(20, 18, 2)), 32);
  write_tensor(t, dir / "t.cmt6");
  write_tensor_sidecar(t, dir / "t.json", "frame.png");
  EXPECT_EQ(std::filesystem::file_size(dir / "t.cmt6"), 16u + 32u * 32u * 6u * 4u);
  const auto back = read_tensor(dir / "t.cmt6");
  EXPECT_EQ(back.bins, 32);
  EXPECT_EQ(back.source_width, 20);
  EXPECT_EQ(back.flatten(), t.flatten());
  std::ifstream in(dir / "t.cmt6", std::ios::binary);
  char magic[4];
  in.read(magic, 4);
  EXPECT_EQ(std::string(magic, 4), "CMT6");
}

}  // namespace
}  // namespace vbd
