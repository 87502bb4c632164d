#include <gtest/gtest.h>

#include <numeric>
#include <set>

#include "test_util.hpp"
#include "xfedit/errors.hpp"
#include "xfedit/toyworld.hpp"

using namespace xfedit;
using namespace xfedit::testing;

namespace {

double mask_count(const Video& mask, Index f) { return MatrixX<float>(mask.frame(f)).sum(); }

}  // namespace

TEST(RenderScene, ZeroSpeedGivesIdenticalFrames) {
  SceneSpec s;
  s.speed = 0;
  const auto r = render_scene(s);
  for (Index f = 1; f < s.frames; ++f) EXPECT_EQ(MatrixX<float>(r.video.frame(f)), MatrixX<float>(r.video.frame(0)));
}

TEST(RenderScene, RigidTranslation) {
  for (auto shape : {ShapeKind::Square, ShapeKind::Circle}) {
    for (auto motion : {Motion::Left, Motion::Right, Motion::Up, Motion::Down}) {
      SceneSpec s;
      s.shape = shape;
      s.motion = motion;
      s.start_x = s.start_y = 11;
      s.speed = 1;
      const auto r = render_scene(s);
      for (Index f = 1; f < s.frames; ++f) EXPECT_EQ(mask_count(r.mask, f), mask_count(r.mask, 0));
      const auto [x1, y1] = s.position(1);
      const auto [x0, y0] = s.position(0);
      EXPECT_EQ(std::abs(x1 - x0) + std::abs(y1 - y0), 1);
    }
  }
}

TEST(RenderScene, ColoursAndRange) {
  SceneSpec s;
  s.color = Color::Blue;
  s.background = Background::White;
  const auto r = render_scene(s);
  EXPECT_GE(r.video.data().minCoeff(), 0.0f);
  EXPECT_LE(r.video.data().maxCoeff(), 1.0f);
  const auto [x, y] = s.position(0);
  EXPECT_EQ(r.video(0, 2, y + 1, x + 1), 1.0f);
  EXPECT_EQ(r.video(0, 0, y + 1, x + 1), 0.0f);
  EXPECT_EQ(r.video(0, 0, 0, 0), 1.0f);
  EXPECT_EQ(r.prompt, "a blue square moving right on white");
}

TEST(RenderScene, DeterministicWithNoise) {
  SceneSpec s;
  s.noise = 0.05f;
  EXPECT_EQ(render_scene(s, 3).video.data(), render_scene(s, 3).video.data());
  EXPECT_NE(render_scene(s, 3).video.data(), render_scene(s, 4).video.data());
}

TEST(RenderScene, RejectsShapeLeavingCanvas) {
  SceneSpec s;
  s.start_x = 20;
  s.speed = 2;
  EXPECT_THROW(render_scene(s), InputError);
  s = {};
  s.object_size = 40;
  EXPECT_THROW(render_scene(s), InputError);
}

TEST(SampleDataset, CoversEveryShapeColourPair) {
  const auto data = sample_dataset(512, 1, 8, 32);
  ASSERT_EQ(data.size(), 512u);
  std::set<std::pair<int, int>> seen;
  for (const auto& s : data) {
    EXPECT_NO_THROW(s.validate());
    seen.insert({static_cast<int>(s.shape), static_cast<int>(s.color)});
  }
  EXPECT_EQ(seen.size(), 8u);
  EXPECT_EQ(sample_dataset(16, 1, 8, 32), sample_dataset(16, 1, 8, 32));
}

TEST(Prompt, RoundTrip) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 50; ++i) {
    const SceneSpec s = sample_scene(rng, 8, 32);
    const SceneSpec back = scene_from_prompt(s.prompt(), 8, 32);
    EXPECT_EQ(back.prompt(), s.prompt());
    EXPECT_NO_THROW(back.validate());
  }
  EXPECT_THROW(scene_from_prompt("a purple square moving right on black", 8, 32), InputError);
  EXPECT_THROW(scene_from_prompt("square", 8, 32), InputError);
}

TEST(ToyTextEncoder, EmptyIsCopiesOfEmptyToken) {
  const ToyTextEncoder enc;
  const auto e = enc.empty();
  ASSERT_EQ(e.length(), enc.length());
  for (Index l = 1; l < e.length(); ++l) EXPECT_EQ(e.tokens().col(l), e.tokens().col(0));
  const auto p = enc.encode("a red square");
  EXPECT_EQ(p.tokens().col(5), e.tokens().col(0));
  EXPECT_NE(p.tokens().col(0), e.tokens().col(0));
}

TEST(ToyTextEncoder, InjectiveOnPrompts) {
  const ToyTextEncoder enc;
  std::vector<std::string> prompts;
  for (auto sh : {ShapeKind::Square, ShapeKind::Circle})
    for (auto c : {Color::Red, Color::Green, Color::Blue, Color::Yellow})
      for (auto m : {Motion::Left, Motion::Right, Motion::Up, Motion::Down})
        for (auto b : {Background::Black, Background::White}) {
          SceneSpec s;
          s.shape = sh, s.color = c, s.motion = m, s.background = b;
          prompts.push_back(s.prompt());
        }
  prompts.push_back("");
  prompts.push_back("a red square");
  prompts.push_back("square red a");
  for (std::size_t i = 0; i < prompts.size(); ++i)
    for (std::size_t j = i + 1; j < prompts.size(); ++j)
      EXPECT_NE(enc.encode(prompts[i]), enc.encode(prompts[j])) << prompts[i] << " / " << prompts[j];
  EXPECT_EQ(enc.encode(prompts[0]), enc.encode(prompts[0]));
}

TEST(ToyTextEncoder, RejectsUnknownAndLongPrompts) {
  const ToyTextEncoder enc;
  EXPECT_THROW(enc.encode("a red hexagon"), InputError);
  EXPECT_THROW(enc.encode("a a a a a a a a a"), InputError);
  EXPECT_THROW(ToyTextEncoder(0, 8), ConfigError);
}

namespace {

struct TinyTraining {
  TinyTraining() : schedule(make_schedule(1000, 1e-4, 2e-2, 50)), encoder(8, 8) {
    data = sample_dataset(64, 2, 2, 8);
    cfg.steps = 1200;
    cfg.batch = 8;
    cfg.warmup = 20;
    cfg.lr = 3e-3;
    cfg.seed = 4;
  }
  Schedule schedule;
  ToyTextEncoder encoder;
  std::vector<SceneSpec> data;
  TrainConfig cfg;
};

double window_mean(const std::vector<float>& v, std::size_t begin, std::size_t end) {
  return std::accumulate(v.begin() + static_cast<long>(begin), v.begin() + static_cast<long>(end), 0.0) /
         static_cast<double>(end - begin);
}

}  // namespace

TEST(TrainToy, DeterministicAndDescending) {
  TinyTraining tt;
  ToyUNet a(tiny_config()), b(tiny_config());
  const auto ra = train_toy(a, tt.data, tt.encoder, tt.schedule, tt.cfg);
  const auto rb = train_toy(b, tt.data, tt.encoder, tt.schedule, tt.cfg);
  EXPECT_EQ(ra.loss_curve, rb.loss_curve);
  ASSERT_EQ(ra.loss_curve.size(), 1200u);
  const double first = window_mean(ra.loss_curve, 0, 10);
  const double last = window_mean(ra.loss_curve, 1100, 1200);
  EXPECT_LT(last, 0.1 * first) << first << " -> " << last;

  // One denoise pass at alpha_bar ~ 0.99 lands closer to the clean frame than the input.
  int t = 1;
  while (tt.schedule.alpha_bar(t + 1) > 0.99) ++t;
  const double ab = tt.schedule.alpha_bar(t);
  const VideoUNet net(std::make_shared<ToyUNet>(a));
  std::mt19937_64 rng(8);
  double in_mse = 0.0, out_mse = 0.0;
  for (int i = 0; i < 8; ++i) {
    const auto scene = render_scene(tt.data[static_cast<std::size_t>(i)]);
    const Video x0((2.0f * scene.video.data().array() - 1.0f).matrix(), 2, 8, 8);
    const Video noise = random_video(rng, 2, 3, 8, 8);
    const Video xt = add_noise(x0, noise, t, tt.schedule);
    AttentionContext ctx(std::vector<AttentionMode>(5, AttentionMode::Self));
    const Video eps = net.predict(xt, t, tt.encoder.encode(scene.prompt), ctx).eps;
    const auto x0_hat = ((xt.data().array() - static_cast<float>(std::sqrt(1 - ab)) * eps.data().array()) /
                         static_cast<float>(std::sqrt(ab)))
                            .matrix();
    in_mse += (xt.data() - x0.data()).squaredNorm();
    out_mse += (x0_hat - x0.data()).squaredNorm();
  }
  EXPECT_LT(out_mse, in_mse);
}

TEST(TrainToy, Errors) {
  TinyTraining tt;
  ToyUNet m(tiny_config());
  EXPECT_THROW(train_toy(m, {}, tt.encoder, tt.schedule, tt.cfg), InputError);
  EXPECT_THROW(train_toy(m, tt.data, ToyTextEncoder(16, 8), tt.schedule, tt.cfg), ConfigError);
  auto bad = tt.cfg;
  bad.steps = 0;
  EXPECT_THROW(train_toy(m, tt.data, tt.encoder, tt.schedule, bad), ConfigError);
}
