#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_util.hpp"
#include "xfedit/errors.hpp"
#include "xfedit/metrics.hpp"

using namespace xfedit;
using namespace xfedit::testing;

namespace {

Video uniform_video(std::mt19937_64& rng, Index frames, Index c, Index h, Index w) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Video v(frames, c, h, w);
  for (Index i = 0; i < v.data().size(); ++i) v.data().data()[i] = u(rng);
  return v;
}

Video repeat(const Video& one, Index frames) {
  Video v(frames, one.channels(), one.height(), one.width());
  for (Index f = 0; f < frames; ++f) v.frame(f) = one.frame(0);
  return v;
}

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return a.dot(b) / (a.norm() * b.norm()); }

}  // namespace

TEST(FrameConsistency, IdenticalFramesScoreOne) {
  std::mt19937_64 rng(1);
  const LinearFrameEncoder enc(3, 8, 8);
  EXPECT_EQ(frame_consistency(repeat(uniform_video(rng, 1, 3, 8, 8), 5), enc), 1.0);
  EXPECT_EQ(frame_consistency(Video(3, 3, 8, 8), enc), 1.0);
}

TEST(FrameConsistency, AntipodalUnderLinearEncoder) {
  std::mt19937_64 rng(2);
  const LinearFrameEncoder enc(3, 8, 8);
  const Video a = random_video(rng, 1, 3, 8, 8);
  Video v(2, 3, 8, 8);
  v.frame(0) = a.frame(0);
  v.frame(1) = -MatrixX<float>(a.frame(0));
  EXPECT_NEAR(frame_consistency(v, enc), -1.0, 1e-12);
}

TEST(FrameConsistency, ReversalInvariant) {
  std::mt19937_64 rng(3);
  const LinearFrameEncoder enc(3, 8, 8);
  const Video v = uniform_video(rng, 6, 3, 8, 8);
  Video r(6, 3, 8, 8);
  for (Index f = 0; f < 6; ++f) r.frame(f) = v.frame(5 - f);
  EXPECT_NEAR(frame_consistency(v, enc), frame_consistency(r, enc), 1e-12);
}

TEST(FrameConsistency, MatchesDirectMean) {
  std::mt19937_64 rng(4);
  const LinearFrameEncoder enc(3, 8, 8, 16, 9);
  const Video v = random_video(rng, 4, 3, 8, 8);
  const MatrixX<double> feats = enc.encode(v);
  double expect = 0.0;
  for (Index f = 0; f < 3; ++f) expect += cosine(feats.col(f), feats.col(f + 1));
  EXPECT_NEAR(frame_consistency(v, enc), expect / 3.0, 1e-12);
}

TEST(FrameConsistency, NoiseMatchesRandomPairBaseline) {
  std::mt19937_64 rng(5);
  const LinearFrameEncoder enc(3, 8, 8);
  const int pairs = 1000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < pairs; ++i) {
    const MatrixX<double> f = enc.encode(uniform_video(rng, 2, 3, 8, 8));
    const double c = cosine(f.col(0), f.col(1));
    sum += c;
    sq += c * c;
  }
  const double mean = sum / pairs;
  const double sd = std::sqrt(sq / pairs - mean * mean);
  const Index frames = 101;
  const double score = frame_consistency(uniform_video(rng, frames, 3, 8, 8), enc);
  EXPECT_LT(std::abs(score - mean), 4.0 * sd / std::sqrt(double(frames - 1))) << score << " vs " << mean;
}

TEST(FrameConsistency, Errors) {
  const LinearFrameEncoder enc(3, 8, 8);
  EXPECT_THROW(frame_consistency(Video(1, 3, 8, 8), enc), DomainError);
  EXPECT_THROW(frame_consistency(Video(2, 3, 4, 4), enc), ShapeError);
}

TEST(FrameConsistency, UNetEncoder) {
  auto model = jittered_model(tiny_config());
  std::mt19937_64 rng(6);
  const UNetFrameEncoder enc(model, random_embedding(rng, 8, 4));
  const Video one = uniform_video(rng, 1, 3, 8, 8);
  const MatrixX<double> feats = enc.encode(uniform_video(rng, 3, 3, 8, 8));
  EXPECT_EQ(feats.cols(), 3);
  EXPECT_TRUE(feats.allFinite());
  EXPECT_NEAR(frame_consistency(repeat(one, 4), enc), 1.0, 1e-12);
}

TEST(ReconstructionMetrics, IdenticalIsInfinite) {
  std::mt19937_64 rng(7);
  const Video v = uniform_video(rng, 2, 3, 4, 4);
  const auto m = reconstruction_metrics(v, v);
  EXPECT_EQ(m.mse, 0.0);
  EXPECT_EQ(m.psnr, kInfinitePsnr);
  EXPECT_EQ(m.psnr_mean, kInfinitePsnr);
  MetricReport report;
  report.reconstruction = m;
  EXPECT_EQ(report.to_json()["reconstruction"]["psnr"], "inf");
}

TEST(ReconstructionMetrics, ConstantOffset) {
  Video a(2, 3, 4, 4);
  a.data().setConstant(0.5f);
  Video b = a;
  b.data().array() += 0.1f;
  const auto m = reconstruction_metrics(a, b);
  EXPECT_NEAR(m.mse, 0.01, 1e-8);
  EXPECT_NEAR(m.psnr, 20.0, 1e-5);
  ASSERT_EQ(m.psnr_per_frame.size(), 2u);
  EXPECT_NEAR(m.psnr_mean, 20.0, 1e-5);
}

TEST(ReconstructionMetrics, ScalarLoopCrossCheck) {
  std::mt19937_64 rng(8);
  const Video a = uniform_video(rng, 3, 3, 5, 4), b = uniform_video(rng, 3, 3, 5, 4);
  double total = 0.0;
  std::vector<double> per(3, 0.0);
  for (Index f = 0; f < 3; ++f)
    for (Index c = 0; c < 3; ++c)
      for (Index y = 0; y < 5; ++y)
        for (Index x = 0; x < 4; ++x) {
          const double d = double(a(f, c, y, x)) - double(b(f, c, y, x));
          total += d * d;
          per[static_cast<std::size_t>(f)] += d * d;
        }
  const auto m = reconstruction_metrics(a, b);
  EXPECT_NEAR(m.mse, total / 180.0, 1e-9);
  EXPECT_NEAR(m.psnr, 10.0 * std::log10(180.0 / total), 1e-9);
  for (std::size_t f = 0; f < 3; ++f)
    EXPECT_NEAR(m.psnr_per_frame[f], 10.0 * std::log10(60.0 / per[f]), 1e-9);
  EXPECT_THROW(reconstruction_metrics(a, Video(3, 3, 4, 5)), ShapeError);
}

TEST(EditSuccess, ClosedForms) {
  SceneSpec s;
  const auto red = render_scene(s);
  s.color = Color::Blue;
  const auto blue = render_scene(s);
  const auto none = edit_success(red.video, red.video, red.mask, 0, 2);
  EXPECT_EQ(none.target_gain, 0.0);
  EXPECT_EQ(none.source_drop, 0.0);
  EXPECT_EQ(none.background_mse, 0.0);
  const auto full = edit_success(red.video, blue.video, red.mask, color_channel(Color::Red),
                                 color_channel(Color::Blue));
  EXPECT_DOUBLE_EQ(full.source_drop, 1.0);
  EXPECT_DOUBLE_EQ(full.target_gain, 1.0);
  EXPECT_EQ(full.background_mse, 0.0);
  EXPECT_TRUE((EditThresholds{0.5, 0.5, 0.01}).passes(full));
  EXPECT_FALSE((EditThresholds{0.5, 0.5, 0.01}).passes(none));
}

TEST(EditSuccess, BackgroundOnly) {
  SceneSpec s;
  const auto r = render_scene(s);
  Video edited = r.video;
  for (Index f = 0; f < r.video.frames(); ++f)
    for (Index c = 0; c < 3; ++c)
      for (Index y = 0; y < 32; ++y)
        for (Index x = 0; x < 32; ++x)
          if (r.mask(f, 0, y, x) == 0.0f) edited(f, c, y, x) += 0.2f;
  const auto m = edit_success(r.video, edited, r.mask, 0, 2);
  EXPECT_EQ(m.target_gain, 0.0);
  EXPECT_NEAR(m.background_mse, 0.04, 1e-6);
}

TEST(EditSuccess, Errors) {
  SceneSpec s;
  const auto r = render_scene(s);
  EXPECT_THROW(edit_success(r.video, r.video, Video(8, 1, 32, 32), 0, 2), InputError);
  EXPECT_THROW(edit_success(r.video, r.video, r.video, 0, 2), ShapeError);
  EXPECT_THROW(color_channel(Color::Yellow), DomainError);
  EXPECT_EQ(color_channel(Color::Green), 1);
}
