#include "xfedit/denoiser.hpp"

#include <string>

namespace xfedit {

ToyUNet::Inputs VideoUNet::inputs(const Video& x_t, int t, const TextEmbedding& cond,
                                  AttentionContext& ctx) const {
  if (static_cast<int>(ctx.modes.size()) != model_->self_attention_layers()) {
    throw ShapeError("attention context has " + std::to_string(ctx.modes.size()) +
                     " layer modes, model has " +
                     std::to_string(model_->self_attention_layers()) + " self-attention layers");
  }
  if (cond.width() != model_->config().context_width) {
    throw ShapeError("conditioning width " + std::to_string(cond.width()) +
                     " does not match model context width");
  }
  ctx.timestep = t;
  ToyUNet::Inputs in;
  in.x = &x_t;
  in.timesteps.assign(static_cast<std::size_t>(x_t.frames()), t);
  in.contexts.assign(static_cast<std::size_t>(x_t.frames()), &cond.tokens());
  in.modes = ctx.modes;
  in.ctx = &ctx;
  return in;
}

Prediction VideoUNet::predict(const Video& x_t, int t, const TextEmbedding& cond,
                              AttentionContext& ctx) const {
  const auto in = inputs(x_t, t, cond, ctx);
  Prediction out;
  out.eps = model_->forward(in, &out.maps, nullptr);
  return out;
}

std::optional<NoisePredictor::CondGradient> VideoUNet::predict_with_cond_gradient(
    const Video& x_t, int t, const TextEmbedding& cond, AttentionContext& ctx,
    const Upstream& upstream) const {
  const auto in = inputs(x_t, t, cond, ctx);
  ToyUNet::Trace trace;
  CondGradient result;
  result.eps = model_->forward(in, nullptr, &trace);
  const Video d_eps = upstream(result.eps);
  require_same_shape(d_eps, result.eps, "predict_with_cond_gradient");
  std::vector<nn::Tensor> d_ctx(static_cast<std::size_t>(x_t.frames()),
                                nn::Tensor::Zero(cond.width(), cond.length()));
  model_->backward(trace, d_eps, nn::GradSink{}, &d_ctx);
  // Every frame reads the same embedding.
  nn::Tensor total = nn::Tensor::Zero(cond.width(), cond.length());
  for (const auto& g : d_ctx) total += g;
  result.grad = TextEmbedding(std::move(total));
  return result;
}

}  // namespace xfedit
