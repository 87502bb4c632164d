#include <gtest/gtest.h>

#include <random>

#include "test_util.hpp"
#include "xfedit/errors.hpp"
#include "xfedit/pipeline.hpp"

using namespace xfedit;
using namespace xfedit::testing;

namespace {

class Counting final : public NoisePredictor {
 public:
  explicit Counting(const VideoUNet& inner) : inner_(inner) {}
  Prediction predict(const Video& x, int t, const TextEmbedding& c, AttentionContext& ctx) const override {
    ++(ctx.branch == Branch::Conditional ? conditional : unconditional);
    return inner_.predict(x, t, c, ctx);
  }
  int self_attention_layers() const override { return inner_.self_attention_layers(); }
  int cross_attention_layers() const override { return inner_.cross_attention_layers(); }
  std::vector<AttentionMode> default_modes() const override { return inner_.default_modes(); }

  mutable int conditional = 0, unconditional = 0;

 private:
  const VideoUNet& inner_;
};

class PipelineTest : public ::testing::Test {
 protected:
  PipelineTest()
      : net_(jittered_model(tiny_config(), 5, 0.05)),
        schedule_(make_schedule(100, 1e-4, 2e-2, 5)),
        rng_(41) {
    source_ = random_embedding(rng_, 8, 4);
    target_ = random_embedding(rng_, 8, 4);
    empty_ = random_embedding(rng_, 8, 4);
    video_ = random_video(rng_, 3, 3, 8, 8, 0.5);
    inv_ = invert_video(video_, "src", source_, empty_, net_, schedule_, NullTextOptions{});
    ref_ = reconstruct(inv_, net_, schedule_, 7.5);
  }

  EditConfig config(double tau_m, double tau_null) const {
    EditConfig c;
    c.num_steps = 5;
    c.tau_m = tau_m;
    c.tau_null = tau_null;
    return c;
  }

  VideoUNet net_;
  Schedule schedule_;
  std::mt19937_64 rng_;
  TextEmbedding source_, target_, empty_;
  Video video_;
  InversionRecord inv_;
  Reconstruction ref_;
};

}  // namespace

TEST(ActiveSteps, CeilOfFraction) {
  EXPECT_EQ(active_steps(0.8, 50), 40);
  EXPECT_EQ(active_steps(0.5, 50), 25);
  EXPECT_EQ(active_steps(0.0, 50), 0);
  EXPECT_EQ(active_steps(1.0, 50), 50);
  EXPECT_EQ(active_steps(0.3, 10), 3);  // 0.3 * 10 rounds above 3 in binary
  EXPECT_EQ(active_steps(0.21, 10), 3);
  EXPECT_EQ(active_steps(0.8, 5), 4);
  EXPECT_THROW(active_steps(1.5, 10), DomainError);
}

TEST(EditConfig, Validation) {
  EditConfig c;
  EXPECT_NO_THROW(c.validate());
  c.guidance_scale = 0.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.num_steps = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.tau_m = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.tau_null = 1.01;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST_F(PipelineTest, CfgUnitScaleSkipsNullBranch) {
  const Counting counted(net_);
  auto ctx = net_.make_context();
  const Video out = cfg_predict(counted, video_, 50, source_, empty_, 1.0, ctx);
  EXPECT_EQ(counted.unconditional, 0);
  EXPECT_EQ(counted.conditional, 1);
  auto plain = net_.make_context();
  EXPECT_EQ(out.data(), net_.predict(video_, 50, source_, plain).eps.data());
}

TEST_F(PipelineTest, CfgWithEqualEmbeddingsIsConditional) {
  auto ctx = net_.make_context();
  const Video out = cfg_predict(net_, video_, 50, source_, source_, 7.5, ctx);
  auto plain = net_.make_context();
  EXPECT_EQ(out.data(), net_.predict(video_, 50, source_, plain).eps.data());
}

TEST_F(PipelineTest, CfgLinearInScale) {
  auto ctx = net_.make_context();
  const Video c = net_.predict(video_, 50, source_, ctx).eps;
  const Video u = net_.predict(video_, 50, empty_, ctx).eps;
  const Video out = cfg_predict(net_, video_, 50, source_, empty_, 3.0, ctx);
  EXPECT_LE((out.data() - (u.data() + 3.0f * (c.data() - u.data()))).cwiseAbs().maxCoeff(), 1e-5);
}

TEST_F(PipelineTest, ReconstructRecordsEveryStepAndLayer) {
  EXPECT_EQ(ref_.maps.size(), 5u * 5u);
  for (int t : schedule_.inference_steps)
    for (int l = 0; l < 5; ++l) EXPECT_TRUE(ref_.maps.contains(t, l));
  EXPECT_TRUE(ref_.video.same_shape(video_));
}

TEST_F(PipelineTest, IdentityEditReproducesReconstruction) {
  const auto r = edit(inv_, ref_.maps, {source_, empty_}, config(1.0, 1.0), net_, schedule_);
  EXPECT_LE((r.edited_video.data() - ref_.video.data()).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_EQ(r.recorded_maps, ref_.maps);
}

TEST_F(PipelineTest, InjectionCounters) {
  const auto none = edit(inv_, ref_.maps, {target_, empty_}, config(0.0, 0.5), net_, schedule_);
  EXPECT_EQ(none.injections_fired, 0);
  const auto full = edit(inv_, ref_.maps, {target_, empty_}, config(1.0, 0.5), net_, schedule_);
  EXPECT_EQ(full.injections_fired, 25);
  EXPECT_EQ(full.injection_steps, std::vector<int>(5, 5));
  const auto part = edit(inv_, ref_.maps, {target_, empty_}, config(0.4, 0.5), net_, schedule_);
  EXPECT_EQ(part.injection_steps, (std::vector<int>{5, 5, 0, 0, 0}));
}

TEST_F(PipelineTest, UnconditionalInjectionDoublesCount) {
  auto c = config(0.4, 0.5);
  c.inject_unconditional = true;
  const auto r = edit(inv_, ref_.maps, {target_, empty_}, c, net_, schedule_);
  EXPECT_EQ(r.injection_steps, (std::vector<int>{10, 10, 0, 0, 0}));
}

TEST_F(PipelineTest, NullThresholdMatters) {
  const auto a = edit(inv_, ref_.maps, {target_, empty_}, config(0.8, 1.0), net_, schedule_);
  const auto b = edit(inv_, ref_.maps, {target_, empty_}, config(0.8, 0.0), net_, schedule_);
  EXPECT_GT((a.edited_video.data() - b.edited_video.data()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST_F(PipelineTest, Deterministic) {
  const auto a = edit(inv_, ref_.maps, {target_, empty_}, config(0.8, 0.5), net_, schedule_, {}, true);
  const auto b = edit(inv_, ref_.maps, {target_, empty_}, config(0.8, 0.5), net_, schedule_, {}, true);
  EXPECT_EQ(a.edited_video.data(), b.edited_video.data());
  ASSERT_EQ(a.latents.size(), 5u);
  EXPECT_EQ(a.latents.back().data(), a.edited_video.data());
  EXPECT_EQ(reconstruct(inv_, net_, schedule_, 7.5).maps, ref_.maps);
}

TEST_F(PipelineTest, MissingMapsRejected) {
  EXPECT_THROW(edit(inv_, CrossAttnMaps{}, {target_, empty_}, config(0.2, 0.5), net_, schedule_),
               InputError);
  EXPECT_NO_THROW(edit(inv_, CrossAttnMaps{}, {target_, empty_}, config(0.0, 0.5), net_, schedule_));
}

TEST_F(PipelineTest, ConfigAndShapeErrors) {
  auto c = config(0.8, 0.5);
  c.num_steps = 10;
  EXPECT_THROW(edit(inv_, ref_.maps, {target_, empty_}, c, net_, schedule_), DomainError);
  c = config(0.8, 0.5);
  c.guidance_scale = 0.0;
  EXPECT_THROW(edit(inv_, ref_.maps, {target_, empty_}, c, net_, schedule_), ConfigError);
  EXPECT_THROW(edit(inv_, ref_.maps, {random_embedding(rng_, 8, 3), empty_}, config(0.8, 0.5),
                    net_, schedule_),
               ShapeError);
}

TEST_F(PipelineTest, FullPipelineMatchesStages) {
  const auto run = run_edit_pipeline(video_, "src", source_, {target_, empty_}, config(0.8, 0.5),
                                     NullTextOptions{}, net_, schedule_);
  EXPECT_EQ(run.reconstruction.video.data(), ref_.video.data());
  EXPECT_EQ(run.edit.reconstruction.data(), ref_.video.data());
  const auto direct = edit(inv_, ref_.maps, {target_, empty_}, config(0.8, 0.5), net_, schedule_);
  EXPECT_EQ(run.edit.edited_video.data(), direct.edited_video.data());
}
