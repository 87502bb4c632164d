#include "xfedit/toyworld.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "xfedit/layers.hpp"
#include "xfedit/optim.hpp"

namespace xfedit {

std::string to_string(ShapeKind v) { return v == ShapeKind::Square ? "square" : "circle"; }

std::string to_string(Color v) {
  switch (v) {
    case Color::Red:
      return "red";
    case Color::Green:
      return "green";
    case Color::Blue:
      return "blue";
    case Color::Yellow:
      return "yellow";
  }
  return "?";
}

std::string to_string(Motion v) {
  switch (v) {
    case Motion::Left:
      return "left";
    case Motion::Right:
      return "right";
    case Motion::Up:
      return "up";
    case Motion::Down:
      return "down";
  }
  return "?";
}

std::string to_string(Background v) { return v == Background::Black ? "black" : "white"; }

std::array<float, 3> rgb(Color c) {
  switch (c) {
    case Color::Red:
      return {1.0f, 0.0f, 0.0f};
    case Color::Green:
      return {0.0f, 1.0f, 0.0f};
    case Color::Blue:
      return {0.0f, 0.0f, 1.0f};
    case Color::Yellow:
      return {1.0f, 1.0f, 0.0f};
  }
  return {0.0f, 0.0f, 0.0f};
}

std::array<float, 3> rgb(Background b) {
  return b == Background::Black ? std::array<float, 3>{0.0f, 0.0f, 0.0f}
                                : std::array<float, 3>{1.0f, 1.0f, 1.0f};
}

namespace {

std::pair<Index, Index> direction(Motion m) {
  switch (m) {
    case Motion::Left:
      return {-1, 0};
    case Motion::Right:
      return {1, 0};
    case Motion::Up:
      return {0, -1};
    case Motion::Down:
      return {0, 1};
  }
  return {0, 0};
}

}  // namespace

std::pair<Index, Index> SceneSpec::position(Index f) const {
  const auto [dx, dy] = direction(motion);
  return {start_x + f * speed * dx, start_y + f * speed * dy};
}

void SceneSpec::validate() const {
  if (frames < 1 || image_size < 1 || object_size < 1 || object_size > image_size) {
    throw InputError("scene: bad geometry");
  }
  if (speed < 0) throw InputError("scene: negative speed");
  for (Index f : {Index{0}, frames - 1}) {
    const auto [x, y] = position(f);
    if (x < 0 || y < 0 || x + object_size > image_size || y + object_size > image_size) {
      throw InputError("scene: shape leaves the canvas at frame " + std::to_string(f));
    }
  }
}

std::string SceneSpec::prompt() const {
  return "a " + to_string(color) + " " + to_string(shape) + " moving " + to_string(motion) +
         " on " + to_string(background);
}

RenderedScene render_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  const Index s = spec.image_size;
  RenderedScene out;
  out.video = Video(spec.frames, 3, s, s);
  out.mask = Video(spec.frames, 1, s, s);
  out.prompt = spec.prompt();
  const auto fg = rgb(spec.color);
  const auto bg = rgb(spec.background);
  const float r = static_cast<float>(spec.object_size) * 0.5f;
  for (Index f = 0; f < spec.frames; ++f) {
    const auto [x0, y0] = spec.position(f);
    for (Index y = 0; y < s; ++y) {
      for (Index x = 0; x < s; ++x) {
        bool inside = x >= x0 && x < x0 + spec.object_size && y >= y0 && y < y0 + spec.object_size;
        if (inside && spec.shape == ShapeKind::Circle) {
          const float cx = static_cast<float>(x - x0) + 0.5f - r;
          const float cy = static_cast<float>(y - y0) + 0.5f - r;
          inside = cx * cx + cy * cy <= r * r;
        }
        const auto& c = inside ? fg : bg;
        for (Index ch = 0; ch < 3; ++ch) out.video(f, ch, y, x) = c[static_cast<std::size_t>(ch)];
        out.mask(f, 0, y, x) = inside ? 1.0f : 0.0f;
      }
    }
  }
  if (spec.noise > 0.0f) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> nd(0.0f, spec.noise);
    auto& d = out.video.data();
    for (Index j = 0; j < d.cols(); ++j) {
      for (Index i = 0; i < d.rows(); ++i) d(i, j) = std::clamp(d(i, j) + nd(rng), 0.0f, 1.0f);
    }
  }
  return out;
}

SceneSpec sample_scene(std::mt19937_64& rng, Index frames, Index image_size) {
  auto pick = [&](int n) { return static_cast<int>(std::uniform_int_distribution<int>(0, n - 1)(rng)); };
  SceneSpec s;
  s.shape = static_cast<ShapeKind>(pick(2));
  s.color = static_cast<Color>(pick(4));
  s.motion = static_cast<Motion>(pick(4));
  s.background = static_cast<Background>(pick(2));
  s.frames = frames;
  s.image_size = image_size;
  s.object_size = std::max<Index>(3, image_size * (8 + pick(5)) / 32);
  s.speed = std::max<Index>(0, image_size * (1 + pick(2)) / 32);
  const auto [dx, dy] = direction(s.motion);
  const Index travel = (frames - 1) * s.speed;
  // Bounds for the top-left corner so that frames 0 and F-1 both fit.
  auto range = [&](Index d) -> std::pair<Index, Index> {
    Index lo = 0, hi = image_size - s.object_size;
    if (d > 0) hi -= travel;
    if (d < 0) lo += travel;
    return {lo, hi};
  };
  auto [xl, xh] = range(dx);
  auto [yl, yh] = range(dy);
  if (xh < xl || yh < yl) {
    s.speed = 0;
    xl = yl = 0;
    xh = yh = image_size - s.object_size;
  }
  s.start_x = std::uniform_int_distribution<Index>(xl, xh)(rng);
  s.start_y = std::uniform_int_distribution<Index>(yl, yh)(rng);
  s.validate();
  return s;
}

std::vector<SceneSpec> sample_dataset(std::size_t count, std::uint64_t seed, Index frames,
                                      Index image_size) {
  std::mt19937_64 rng(seed);
  std::vector<SceneSpec> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(sample_scene(rng, frames, image_size));
  return out;
}

SceneSpec scene_from_prompt(const std::string& prompt, Index frames, Index image_size) {
  std::istringstream is(prompt);
  std::vector<std::string> w;
  for (std::string tok; is >> tok;) w.push_back(tok);
  if (w.size() != 7 || w[0] != "a" || w[3] != "moving" || w[5] != "on") {
    throw InputError("prompt must look like 'a <color> <shape> moving <dir> on <background>'");
  }
  SceneSpec s;
  auto find = [&](const std::string& word, auto first, int n, const char* what) {
    for (int i = 0; i < n; ++i) {
      auto v = static_cast<decltype(first)>(i);
      if (to_string(v) == word) return v;
    }
    throw InputError(std::string("unknown ") + what + " '" + word + "'");
  };
  s.color = find(w[1], Color::Red, 4, "color");
  s.shape = find(w[2], ShapeKind::Square, 2, "shape");
  s.motion = find(w[4], Motion::Left, 4, "motion");
  s.background = find(w[6], Background::Black, 2, "background");
  s.frames = frames;
  s.image_size = image_size;
  s.object_size = std::max<Index>(3, image_size * 10 / 32);
  s.speed = std::max<Index>(0, image_size / 16);
  const auto [dx, dy] = direction(s.motion);
  const Index travel = (frames - 1) * s.speed;
  const Index centre = (image_size - s.object_size) / 2;
  s.start_x = centre - dx * travel / 2;
  s.start_y = centre - dy * travel / 2;
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------

ToyTextEncoder::ToyTextEncoder(Index width, Index length, std::uint64_t seed)
    : vocab_{"",     "a",      "red",  "green", "blue", "yellow", "square", "circle",
             "moving", "left", "right", "up",   "down",  "on",     "black",  "white"},
      length_(length) {
  if (width < 1 || length < 1) throw ConfigError("text encoder: bad geometry");
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> nd(0.0f, 1.0f);
  table_.resize(width, static_cast<Index>(vocab_.size()));
  for (Index j = 0; j < table_.cols(); ++j) {
    for (Index i = 0; i < width; ++i) table_(i, j) = nd(rng);
  }
}

std::vector<int> ToyTextEncoder::token_ids(const std::string& prompt) const {
  std::istringstream is(prompt);
  std::vector<int> ids;
  for (std::string tok; is >> tok;) {
    auto it = std::find(vocab_.begin() + 1, vocab_.end(), tok);
    if (it == vocab_.end()) throw InputError("word '" + tok + "' is not in the vocabulary");
    ids.push_back(static_cast<int>(it - vocab_.begin()));
  }
  if (static_cast<Index>(ids.size()) > length_) {
    throw InputError("prompt longer than " + std::to_string(length_) + " tokens");
  }
  ids.resize(static_cast<std::size_t>(length_), 0);
  return ids;
}

TextEmbedding ToyTextEncoder::encode(const std::string& prompt) const {
  const auto ids = token_ids(prompt);
  MatrixX<float> tokens(table_.rows(), length_);
  for (Index l = 0; l < length_; ++l) tokens.col(l) = table_.col(ids[static_cast<std::size_t>(l)]);
  return TextEmbedding(std::move(tokens));
}

// ---------------------------------------------------------------------------

TrainResult train_toy(ToyUNet& model, const std::vector<SceneSpec>& dataset,
                      const ToyTextEncoder& encoder, const Schedule& schedule,
                      const TrainConfig& config, const TrainProgress& progress) {
  if (dataset.empty()) throw InputError("train_toy: empty dataset");
  if (config.steps < 1 || config.batch < 1) throw ConfigError("train_toy: steps/batch must be positive");
  const auto& mc = model.config();
  if (encoder.width() != mc.context_width) throw ConfigError("train_toy: encoder width != model context width");

  std::vector<Video> clips;
  std::vector<TextEmbedding> prompts;
  clips.reserve(dataset.size());
  for (const auto& spec : dataset) {
    if (spec.image_size != mc.image_size) throw ConfigError("train_toy: scene size != model size");
    auto r = render_scene(spec);
    clips.push_back(to_model_range(r.video));
    prompts.push_back(encoder.encode(r.prompt));
  }
  const TextEmbedding empty = encoder.empty();

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_clip(0, clips.size() - 1);
  std::uniform_int_distribution<int> pick_t(1, schedule.num_train_steps);

  auto& params = model.mutable_parameters();
  std::vector<nn::Tensor> weights(params.values().begin(), params.values().end());
  Adam adam(weights);
  TrainResult result;
  const Index side = mc.image_size;

  for (int step = 0; step < config.steps; ++step) {
    Video x0(config.batch, mc.image_channels, side, side);
    Video noise(config.batch, mc.image_channels, side, side);
    ToyUNet::Inputs in;
    for (int b = 0; b < config.batch; ++b) {
      const std::size_t c = pick_clip(rng);
      const Index f = std::uniform_int_distribution<Index>(0, clips[c].frames() - 1)(rng);
      x0.frame(b) = clips[c].frame(f);
      in.timesteps.push_back(pick_t(rng));
      in.contexts.push_back(unit(rng) < config.cfg_dropout ? &empty.tokens() : &prompts[c].tokens());
    }
    for (Index j = 0; j < noise.data().cols(); ++j) {
      for (Index i = 0; i < noise.data().rows(); ++i) noise.data()(i, j) = normal(rng);
    }
    Video xt(config.batch, mc.image_channels, side, side);
    for (int b = 0; b < config.batch; ++b) {
      const double ab = schedule.alpha_bar(in.timesteps[static_cast<std::size_t>(b)]);
      xt.frame(b) = static_cast<float>(std::sqrt(ab)) * x0.frame(b) +
                    static_cast<float>(std::sqrt(1.0 - ab)) * noise.frame(b);
    }
    in.x = &xt;

    ToyUNet::Trace trace;
    const Video eps = model.forward(in, nullptr, &trace);
    const nn::Tensor diff = eps.data() - noise.data();
    const float n = static_cast<float>(diff.size());
    const float loss = diff.squaredNorm() / n;
    if (!std::isfinite(loss)) {
      throw NumericalError("train_toy: loss became non-finite at step " + std::to_string(step));
    }
    result.loss_curve.push_back(loss);
    if (progress) progress(step, loss);

    auto grads = params.zeros_like();
    model.backward(trace, Video((2.0f / n) * diff, config.batch, side, side),
                   nn::GradSink{&grads}, nullptr);
    double norm2 = 0.0;
    for (const auto& g : grads) norm2 += static_cast<double>(g.squaredNorm());
    const double norm = std::sqrt(norm2);
    if (config.grad_clip > 0.0 && norm > config.grad_clip) {
      const float s = static_cast<float>(config.grad_clip / norm);
      for (auto& g : grads) g *= s;
    }
    // Linear warmup, then cosine decay to 10% of the base rate.
    double lr = config.lr;
    if (step < config.warmup) {
      lr *= static_cast<double>(step + 1) / config.warmup;
    } else {
      const double prog = static_cast<double>(step - config.warmup) /
                          std::max(1, config.steps - config.warmup);
      lr *= 0.1 + 0.9 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * prog));
    }
    adam.step(weights, grads, lr);
    for (Index i = 0; i < params.size(); ++i) params[i] = weights[static_cast<std::size_t>(i)];
  }
  return result;
}

}  // namespace xfedit
