#include <gtest/gtest.h>

#include <random>

#include "test_util.hpp"
#include "xfedit/denoiser.hpp"
#include "xfedit/errors.hpp"

using namespace xfedit;
using namespace xfedit::testing;

namespace {

std::vector<AttentionMode> all(AttentionMode m, int n = 5) { return std::vector<AttentionMode>(n, m); }

}  // namespace

TEST(ToyUNet, DefaultConfigSize) {
  ToyUNet model(UNetConfig{});
  EXPECT_EQ(model.parameter_count(), 498787);
  EXPECT_LT(model.parameter_count(), 5'000'000);
  EXPECT_EQ(model.self_attention_layers(), 5);
  EXPECT_EQ(model.cross_attention_layers(), 5);
}

TEST(ToyUNet, InflationAddsNoParameters) {
  auto model = std::make_shared<ToyUNet>(UNetConfig{});
  const auto before = model->parameter_count();
  const VideoUNet video = inflate(model);
  EXPECT_EQ(video.parameter_count(), before);
  EXPECT_EQ(&video.model(), model.get());
}

TEST(ToyUNet, SeededInitialisation) {
  ToyUNet a(tiny_config()), b(tiny_config());
  auto other = tiny_config();
  other.seed = 12;
  ToyUNet c(other);
  bool all_equal = true, any_diff = false;
  for (Index i = 0; i < a.parameters().size(); ++i) {
    all_equal &= a.parameters()[i] == b.parameters()[i];
    any_diff |= a.parameters()[i] != c.parameters()[i];
  }
  EXPECT_TRUE(all_equal);
  EXPECT_TRUE(any_diff);
}

TEST(ToyUNet, RejectsBadConfig) {
  auto c = tiny_config();
  c.image_size = 6;
  EXPECT_THROW(ToyUNet{c}, ConfigError);
  c = tiny_config();
  c.widths = {8};
  EXPECT_THROW(ToyUNet{c}, ConfigError);
  c = tiny_config();
  c.widths = {8, 7, 16};
  EXPECT_THROW(ToyUNet{c}, ConfigError);
}

TEST(ToyUNet, DefaultModesFollowPlacementRule) {
  ToyUNet model(UNetConfig{});
  EXPECT_EQ(model.default_modes(), default_attention_modes(2, 1, 2));
}

class VideoUNetTest : public ::testing::Test {
 protected:
  void SetUp() override {
    model_ = jittered_model(tiny_config());
    rng_.seed(21);
    cond_ = random_embedding(rng_, 8, 4);
  }
  Video video(Index frames) { return random_video(rng_, frames, 3, 8, 8); }

  std::shared_ptr<ToyUNet> model_;
  std::mt19937_64 rng_;
  TextEmbedding cond_;
};

TEST_F(VideoUNetTest, SingleFrameStEqualsSelfBitwise) {
  const VideoUNet net(model_);
  const Video x = video(1);
  AttentionContext st(all(AttentionMode::SpatialTemporal)), self(all(AttentionMode::Self));
  EXPECT_EQ(net.predict(x, 500, cond_, st).eps.data(), net.predict(x, 500, cond_, self).eps.data());
}

TEST_F(VideoUNetTest, IdenticalFramesUnderSt) {
  const VideoUNet net(model_);
  const Video one = video(1);
  Video x(4, 3, 8, 8);
  for (Index f = 0; f < 4; ++f) x.frame(f) = one.frame(0);
  AttentionContext st(all(AttentionMode::SpatialTemporal)), self(all(AttentionMode::Self));
  const Video ref = net.predict(one, 300, cond_, self).eps;
  const Video out = net.predict(x, 300, cond_, st).eps;
  for (Index f = 0; f < 4; ++f)
    EXPECT_LE((MatrixX<float>(out.frame(f)) - ref.data()).cwiseAbs().maxCoeff(), 1e-5);
}

TEST_F(VideoUNetTest, SelfModeCommutesWithFramePermutation) {
  const VideoUNet net(model_);
  const Video x = video(3);
  const std::vector<Index> perm{1, 2, 0};
  Video xp(3, 3, 8, 8);
  for (Index f = 0; f < 3; ++f) xp.frame(f) = x.frame(perm[f]);
  AttentionContext ctx(all(AttentionMode::Self));
  const Video a = net.predict(x, 100, cond_, ctx).eps;
  const Video b = net.predict(xp, 100, cond_, ctx).eps;
  for (Index f = 0; f < 3; ++f)
    EXPECT_LE((MatrixX<float>(b.frame(f)) - MatrixX<float>(a.frame(perm[f]))).cwiseAbs().maxCoeff(), 1e-5);
}

TEST_F(VideoUNetTest, SparseCausalModelIsCausal) {
  const VideoUNet net(model_);
  const Video x = video(4);
  Video xp = x;
  xp.frame(2).array() += 0.5f;
  AttentionContext ctx(all(AttentionMode::SparseCausal));
  const Video a = net.predict(x, 100, cond_, ctx).eps;
  const Video b = net.predict(xp, 100, cond_, ctx).eps;
  const Index px = 64;
  EXPECT_LE((a.data().leftCols(2 * px) - b.data().leftCols(2 * px)).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_GT((a.data().rightCols(2 * px) - b.data().rightCols(2 * px)).cwiseAbs().maxCoeff(), 1e-4);
}

TEST_F(VideoUNetTest, OutputShapeAndMaps) {
  const VideoUNet net(model_);
  const Video x = video(2);
  auto ctx = net.make_context();
  const auto p = net.predict(x, 700, cond_, ctx);
  EXPECT_TRUE(p.eps.same_shape(x));
  ASSERT_EQ(p.maps.size(), 5u);
  const Index tokens[] = {16, 4, 4, 4, 16};
  for (std::size_t l = 0; l < 5; ++l) {
    const auto& m = p.maps[l];
    EXPECT_EQ(m.frames, 2);
    EXPECT_EQ(m.heads, 2);
    EXPECT_EQ(m.tokens, tokens[l]);
    EXPECT_EQ(m.text_length, 4);
    for (const auto& b : m.blocks) {
      EXPECT_LE((b.rowwise().sum().array() - 1.0f).abs().maxCoeff(), 1e-5f);
      EXPECT_GE(b.minCoeff(), 0.0f);
    }
  }
}

TEST_F(VideoUNetTest, DoesNotMutateInputsOrWeights) {
  const VideoUNet net(model_);
  const Video x = video(2);
  const Video x_copy = x;
  const TextEmbedding c_copy = cond_;
  std::vector<MatrixX<float>> weights(model_->parameters().values().begin(),
                                      model_->parameters().values().end());
  auto ctx = net.make_context();
  net.predict(x, 700, cond_, ctx);
  EXPECT_EQ(x.data(), x_copy.data());
  EXPECT_EQ(cond_, c_copy);
  for (Index i = 0; i < model_->parameters().size(); ++i)
    EXPECT_EQ(model_->parameters()[i], weights[static_cast<std::size_t>(i)]);
}

TEST_F(VideoUNetTest, RejectsMismatchedContext) {
  const VideoUNet net(model_);
  const Video x = video(2);
  AttentionContext three(all(AttentionMode::Self, 3));
  EXPECT_THROW(net.predict(x, 10, cond_, three), ShapeError);
  auto ctx = net.make_context();
  std::mt19937_64 rng(1);
  EXPECT_THROW(net.predict(x, 10, random_embedding(rng, 6, 4), ctx), ShapeError);
}

TEST_F(VideoUNetTest, RecordingAndInjectionIdempotence) {
  const VideoUNet net(model_);
  const Video x = video(3);
  auto rec = net.make_context();
  rec.record_maps = true;
  const Video a = net.predict(x, 400, cond_, rec).eps;
  EXPECT_EQ(rec.recorded.size(), 5u);
  EXPECT_EQ(rec.maps_recorded, 5);

  auto inj = net.make_context();
  inj.injected_maps = std::make_shared<const CrossAttnMaps>(rec.recorded);
  inj.injection_active = true;
  EXPECT_EQ(net.predict(x, 400, cond_, inj).eps.data(), a.data());
  EXPECT_EQ(inj.injections_fired, 5);

  // Maps from another prompt change the output.
  std::mt19937_64 rng(3);
  const TextEmbedding other = random_embedding(rng, 8, 4);
  auto other_ctx = net.make_context();
  const Video fresh = net.predict(x, 400, other, other_ctx).eps;
  inj.injections_fired = 0;
  const Video injected = net.predict(x, 400, other, inj).eps;
  EXPECT_GT((fresh.data() - injected.data()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST_F(VideoUNetTest, ConditioningGradientMatchesFiniteDifferences) {
  const VideoUNet net(model_);
  const Video x = video(2);
  const Video target = video(2);
  auto ctx = net.make_context();
  auto upstream = [&](const Video& e) {
    return Video((2.0f * (e.data() - target.data())).eval(), e.frames(), e.height(), e.width());
  };
  auto loss = [&](const TextEmbedding& c) {
    return (net.predict(x, 300, c, ctx).eps.data().cast<double>() - target.data().cast<double>())
        .squaredNorm();
  };
  const auto g = net.predict_with_cond_gradient(x, 300, cond_, ctx, upstream);
  ASSERT_TRUE(g.has_value());
  EXPECT_EQ(g->eps.data(), net.predict(x, 300, cond_, ctx).eps.data());
  for (int trial = 0; trial < 6; ++trial) {
    const Index i = (trial * 5) % 8, j = trial % 4;
    TextEmbedding p = cond_, m = cond_;
    const float h = 1e-2f;
    p.tokens()(i, j) += h;
    m.tokens()(i, j) -= h;
    const double fd = (loss(p) - loss(m)) / (2.0 * h);
    EXPECT_NEAR(g->grad.tokens()(i, j), fd, 0.05 * std::abs(fd) + 1e-3) << i << "," << j;
  }
}
