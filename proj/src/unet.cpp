#include "xfedit/unet.hpp"

#include <cmath>
#include <string>

namespace xfedit {

using nn::Tensor;

void UNetConfig::validate() const {
  if (widths.size() < 2) throw ConfigError("UNet: need at least one down-sampling stage");
  for (Index w : widths) {
    if (w <= 0) throw ConfigError("UNet: channel widths must be positive");
    if (w % norm_groups != 0) throw ConfigError("UNet: widths must be divisible by norm_groups");
    if (w % heads != 0) throw ConfigError("UNet: widths must be divisible by heads");
  }
  if (image_size <= 0 || image_channels <= 0) throw ConfigError("UNet: bad image geometry");
  const Index scale = Index{1} << depth();
  if (image_size % scale != 0) {
    throw ConfigError("UNet: image size " + std::to_string(image_size) +
                      " not divisible by 2^depth = " + std::to_string(scale));
  }
  if (time_frequencies <= 0 || time_frequencies % 2 != 0 || time_width <= 0 ||
      context_width <= 0) {
    throw ConfigError("UNet: bad embedding widths");
  }
}

Tensor timestep_features(const std::vector<int>& timesteps, Index frequencies) {
  const Index half = frequencies / 2;
  Tensor out(frequencies, static_cast<Index>(timesteps.size()));
  for (std::size_t j = 0; j < timesteps.size(); ++j) {
    for (Index k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / half);
      const double arg = timesteps[j] * freq;
      out(k, static_cast<Index>(j)) = static_cast<float>(std::sin(arg));
      out(half + k, static_cast<Index>(j)) = static_cast<float>(std::cos(arg));
    }
  }
  return out;
}

ToyUNet::ToyUNet(UNetConfig config) : config_(std::move(config)) {
  config_.validate();
  const int depth = config_.depth();
  const auto& w = config_.widths;
  const Index g = config_.norm_groups;
  const Index tw = config_.time_width;
  auto& ps = params_;

  time_fc1_ = nn::Linear::create(ps, "time.fc1", config_.time_frequencies, tw);
  time_fc2_ = nn::Linear::create(ps, "time.fc2", tw, tw);
  conv_in_ = nn::Conv2d::create(ps, "conv_in", config_.image_channels, w[0], 3, 1);
  for (int k = 0; k < depth; ++k) {
    const std::string n = "down" + std::to_string(k);
    const Index c = w[static_cast<std::size_t>(k) + 1];
    down_conv_.push_back(nn::Conv2d::create(ps, n + ".downsample", w[static_cast<std::size_t>(k)], c, 3, 2));
    down_res_.push_back(nn::ResBlock::create(ps, n + ".res", c, c, tw, g));
    down_self_.push_back(nn::SelfAttentionBlock::create(ps, n + ".self_attn", c, config_.heads, g));
    down_cross_.push_back(nn::CrossAttentionBlock::create(ps, n + ".cross_attn", c,
                                                          config_.context_width, config_.heads,
                                                          g, k));
  }
  const Index cm = w.back();
  mid_res_ = nn::ResBlock::create(ps, "mid.res", cm, cm, tw, g);
  mid_self_ = nn::SelfAttentionBlock::create(ps, "mid.self_attn", cm, config_.heads, g);
  mid_cross_ = nn::CrossAttentionBlock::create(ps, "mid.cross_attn", cm, config_.context_width,
                                               config_.heads, g, depth);
  up_res_.resize(static_cast<std::size_t>(depth));
  up_self_.resize(static_cast<std::size_t>(depth));
  up_cross_.resize(static_cast<std::size_t>(depth));
  up_conv_.resize(static_cast<std::size_t>(depth));
  for (int k = depth - 1; k >= 0; --k) {
    const std::string n = "up" + std::to_string(k);
    const auto kk = static_cast<std::size_t>(k);
    const Index c = w[kk + 1];
    up_res_[kk] = nn::ResBlock::create(ps, n + ".res", 2 * c, c, tw, g);
    up_self_[kk] = nn::SelfAttentionBlock::create(ps, n + ".self_attn", c, config_.heads, g);
    up_cross_[kk] = nn::CrossAttentionBlock::create(ps, n + ".cross_attn", c,
                                                    config_.context_width, config_.heads, g,
                                                    2 * depth - k);
    up_conv_[kk] = nn::Conv2d::create(ps, n + ".upsample", c, w[kk], 3, 1);
  }
  out_res_ = nn::ResBlock::create(ps, "out.res", 2 * w[0], w[0], tw, g);
  out_norm_ = nn::GroupNorm::create(ps, "out.norm", w[0], g);
  conv_out_ = nn::Conv2d::create(ps, "conv_out", w[0], config_.image_channels, 3, 1);

  std::mt19937_64 rng(config_.seed);
  time_fc1_.init(ps, rng);
  time_fc2_.init(ps, rng);
  conv_in_.init(ps, rng);
  for (int k = 0; k < depth; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    down_conv_[kk].init(ps, rng);
    down_res_[kk].init(ps, rng);
    down_self_[kk].init(ps, rng);
    down_cross_[kk].init(ps, rng);
  }
  mid_res_.init(ps, rng);
  mid_self_.init(ps, rng);
  mid_cross_.init(ps, rng);
  for (int k = depth - 1; k >= 0; --k) {
    const auto kk = static_cast<std::size_t>(k);
    up_res_[kk].init(ps, rng);
    up_self_[kk].init(ps, rng);
    up_cross_[kk].init(ps, rng);
    up_conv_[kk].init(ps, rng);
  }
  out_res_.init(ps, rng);
  out_norm_.init(ps);
  conv_out_.init(ps, rng, 0.0f);
}

std::vector<AttentionMode> ToyUNet::default_modes() const {
  return default_attention_modes(config_.depth(), 1, config_.depth());
}

Video ToyUNet::forward(const Inputs& in, std::vector<LayerMap>* maps, Trace* trace) const {
  return run(in, maps, trace, false);
}

Video ToyUNet::run(const Inputs& in, std::vector<LayerMap>* maps, Trace* trace,
                   bool encoder_only) const {
  if (!in.x) throw ShapeError("ToyUNet: missing input");
  const Video& x = *in.x;
  const int depth = config_.depth();
  if (x.frames() < 1) throw ShapeError("ToyUNet: need at least one frame");
  if (x.channels() != config_.image_channels || x.height() != config_.image_size ||
      x.width() != config_.image_size) {
    throw ShapeError("ToyUNet: input " + x.shape_string() + " does not match model geometry");
  }
  if (static_cast<Index>(in.timesteps.size()) != x.frames() ||
      static_cast<Index>(in.contexts.size()) != x.frames()) {
    throw ShapeError("ToyUNet: need one timestep and one context per frame");
  }
  std::vector<AttentionMode> modes = in.modes;
  if (modes.empty()) modes.assign(static_cast<std::size_t>(self_attention_layers()), AttentionMode::Self);
  if (static_cast<int>(modes.size()) != self_attention_layers()) {
    throw ShapeError("ToyUNet: " + std::to_string(modes.size()) + " attention modes for " +
                     std::to_string(self_attention_layers()) + " self-attention layers");
  }
  const auto p = params_.values();
  if (maps) maps->assign(static_cast<std::size_t>(cross_attention_layers()), LayerMap{});
  auto map_slot = [&](int layer) -> LayerMap* {
    return maps ? &(*maps)[static_cast<std::size_t>(layer)] : nullptr;
  };
  if (trace) {
    trace->down_conv.resize(static_cast<std::size_t>(depth));
    trace->down_res.resize(static_cast<std::size_t>(depth));
    trace->down_self.resize(static_cast<std::size_t>(depth));
    trace->down_cross.resize(static_cast<std::size_t>(depth));
    trace->up_res.resize(static_cast<std::size_t>(depth));
    trace->up_self.resize(static_cast<std::size_t>(depth));
    trace->up_cross.resize(static_cast<std::size_t>(depth));
    trace->up_conv.resize(static_cast<std::size_t>(depth));
    trace->contexts = in.contexts;
  }
  auto T = [&](auto member) { return trace ? &(trace->*member) : nullptr; };

  const Tensor sinus = timestep_features(in.timesteps, config_.time_frequencies);
  const Tensor hidden = time_fc1_.forward(p, sinus);
  const Tensor temb = time_fc2_.forward(p, nn::silu(hidden));
  if (trace) {
    trace->sinusoid = sinus;
    trace->time_hidden = hidden;
    trace->temb = temb;
  }

  Video h = conv_in_.forward(p, x, T(&Trace::conv_in));
  const Video stem = h;
  std::vector<Video> skips(static_cast<std::size_t>(depth));
  for (int k = 0; k < depth; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    h = down_conv_[kk].forward(p, h, trace ? &trace->down_conv[kk] : nullptr);
    h = down_res_[kk].forward(p, h, temb, trace ? &trace->down_res[kk] : nullptr);
    h = down_self_[kk].forward(p, h, modes[kk], trace ? &trace->down_self[kk] : nullptr);
    h = down_cross_[kk].forward(p, h, in.contexts, in.ctx, map_slot(k),
                                trace ? &trace->down_cross[kk] : nullptr);
    skips[kk] = h;
  }
  if (encoder_only) return h;

  h = mid_res_.forward(p, h, temb, T(&Trace::mid_res));
  h = mid_self_.forward(p, h, modes[static_cast<std::size_t>(depth)], T(&Trace::mid_self));
  h = mid_cross_.forward(p, h, in.contexts, in.ctx, map_slot(depth), T(&Trace::mid_cross));

  for (int k = depth - 1; k >= 0; --k) {
    const auto kk = static_cast<std::size_t>(k);
    const int layer = 2 * depth - k;
    h = nn::concat_channels(h, skips[kk]);
    h = up_res_[kk].forward(p, h, temb, trace ? &trace->up_res[kk] : nullptr);
    h = up_self_[kk].forward(p, h, modes[static_cast<std::size_t>(layer)],
                             trace ? &trace->up_self[kk] : nullptr);
    h = up_cross_[kk].forward(p, h, in.contexts, in.ctx, map_slot(layer),
                              trace ? &trace->up_cross[kk] : nullptr);
    h = up_conv_[kk].forward(p, nn::upsample_nearest2x(h), trace ? &trace->up_conv[kk] : nullptr);
  }
  h = nn::concat_channels(h, stem);
  h = out_res_.forward(p, h, temb, T(&Trace::out_res));
  Video normed = out_norm_.forward(p, h, T(&Trace::out_norm));
  Video eps = conv_out_.forward(p, nn::silu(normed), T(&Trace::conv_out));
  if (trace) trace->out_norm_out = std::move(normed);
  return eps;
}

void ToyUNet::backward(const Trace& trace, const Video& d_eps, const nn::GradSink& sink,
                       std::vector<Tensor>* d_contexts) const {
  const int depth = config_.depth();
  const auto p = params_.values();
  const auto& w = config_.widths;
  Tensor d_temb = Tensor::Zero(trace.temb.rows(), trace.temb.cols());

  Video d = conv_out_.backward(p, trace.conv_out, d_eps, sink);
  d = Video(nn::silu_backward(trace.out_norm_out.data(), d.data()), d.frames(), d.height(),
            d.width());
  d = out_norm_.backward(p, trace.out_norm, d, sink);
  d = out_res_.backward(p, trace.out_res, d, d_temb, sink);
  Video d_stem(Tensor(d.data().bottomRows(w[0])), d.frames(), d.height(), d.width());
  d = Video(Tensor(d.data().topRows(w[0])), d.frames(), d.height(), d.width());

  std::vector<Video> d_skips(static_cast<std::size_t>(depth));
  for (int k = 0; k < depth; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    const Index c = w[kk + 1];
    d = up_conv_[kk].backward(p, trace.up_conv[kk], d, sink);
    d = nn::upsample_nearest2x_backward(d);
    d = up_cross_[kk].backward(p, trace.up_cross[kk], d, trace.contexts, d_contexts, sink);
    d = up_self_[kk].backward(p, trace.up_self[kk], d, sink);
    d = up_res_[kk].backward(p, trace.up_res[kk], d, d_temb, sink);
    d_skips[kk] = Video(Tensor(d.data().bottomRows(c)), d.frames(), d.height(), d.width());
    d = Video(Tensor(d.data().topRows(c)), d.frames(), d.height(), d.width());
  }
  d = mid_cross_.backward(p, trace.mid_cross, d, trace.contexts, d_contexts, sink);
  d = mid_self_.backward(p, trace.mid_self, d, sink);
  d = mid_res_.backward(p, trace.mid_res, d, d_temb, sink);
  for (int k = depth - 1; k >= 0; --k) {
    const auto kk = static_cast<std::size_t>(k);
    d.data() += d_skips[kk].data();
    d = down_cross_[kk].backward(p, trace.down_cross[kk], d, trace.contexts, d_contexts, sink);
    d = down_self_[kk].backward(p, trace.down_self[kk], d, sink);
    d = down_res_[kk].backward(p, trace.down_res[kk], d, d_temb, sink);
    d = down_conv_[kk].backward(p, trace.down_conv[kk], d, sink);
  }
  d.data() += d_stem.data();
  if (!sink.active()) return;
  conv_in_.backward(p, trace.conv_in, d, sink);
  const Tensor d_act = time_fc2_.backward(p, nn::silu(trace.time_hidden), d_temb, sink);
  time_fc1_.backward(p, trace.sinusoid, nn::silu_backward(trace.time_hidden, d_act), sink);
}

Tensor ToyUNet::encoder_features(const Video& x, int timestep, const Tensor& context) const {
  Inputs in;
  in.x = &x;
  in.timesteps.assign(static_cast<std::size_t>(x.frames()), timestep);
  in.contexts.assign(static_cast<std::size_t>(x.frames()), &context);
  const Video deep = run(in, nullptr, nullptr, true);
  Tensor pooled(deep.channels(), deep.frames());
  for (Index f = 0; f < deep.frames(); ++f) {
    pooled.col(f) = deep.frame(f).rowwise().mean();
  }
  return pooled;
}

}  // namespace xfedit
