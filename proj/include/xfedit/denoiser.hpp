#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "xfedit/attention.hpp"
#include "xfedit/tensor.hpp"
#include "xfedit/unet.hpp"

namespace xfedit {

struct Prediction {
  Video eps;
  std::vector<LayerMap> maps;  // fresh maps, one per text cross-attention layer
};

/// eps_hat(x_t, t, cond) with per-run attention configuration.
///
/// This is the seam for other backbones: a latent-space model (weights loaded
/// from elsewhere plus an encoder/decoder around it) plugs in here without
/// touching inversion or the editing pipeline.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;

  /// Sets ctx.timestep = t, then records/injects through ctx as configured.
  virtual Prediction predict(const Video& x_t, int t, const TextEmbedding& cond,
                             AttentionContext& ctx) const = 0;

  virtual int self_attention_layers() const = 0;
  virtual int cross_attention_layers() const = 0;
  virtual std::vector<AttentionMode> default_modes() const = 0;

  /// d(loss)/d(eps) given eps.
  using Upstream = std::function<Video(const Video& eps)>;
  struct CondGradient {
    Video eps;
    TextEmbedding grad;
  };

  /// eps plus the gradient of the loss (through `upstream`) with respect to
  /// the conditioning embedding. nullopt when the model is not differentiable.
  virtual std::optional<CondGradient> predict_with_cond_gradient(const Video& x_t, int t,
                                                                 const TextEmbedding& cond,
                                                                 AttentionContext& ctx,
                                                                 const Upstream& upstream) const {
    (void)x_t, (void)t, (void)cond, (void)ctx, (void)upstream;
    return std::nullopt;
  }

  AttentionContext make_context() const { return AttentionContext(default_modes()); }
};

/// The 2D ToyUNet run over whole videos: per-frame convolutions reuse the
/// image weights on every frame, self-attention layers follow ctx.modes.
/// Holds no weights of its own.
class VideoUNet final : public NoisePredictor {
 public:
  explicit VideoUNet(std::shared_ptr<const ToyUNet> model) : model_(std::move(model)) {}

  Prediction predict(const Video& x_t, int t, const TextEmbedding& cond,
                     AttentionContext& ctx) const override;
  std::optional<CondGradient> predict_with_cond_gradient(const Video& x_t, int t,
                                                         const TextEmbedding& cond,
                                                         AttentionContext& ctx,
                                                         const Upstream& upstream) const override;

  int self_attention_layers() const override { return model_->self_attention_layers(); }
  int cross_attention_layers() const override { return model_->cross_attention_layers(); }
  std::vector<AttentionMode> default_modes() const override { return model_->default_modes(); }

  const ToyUNet& model() const { return *model_; }
  std::shared_ptr<const ToyUNet> shared_model() const { return model_; }
  Index parameter_count() const { return model_->parameter_count(); }

 private:
  ToyUNet::Inputs inputs(const Video& x_t, int t, const TextEmbedding& cond,
                         AttentionContext& ctx) const;

  std::shared_ptr<const ToyUNet> model_;
};

/// Wraps a 2D model for video inference.
inline VideoUNet inflate(std::shared_ptr<const ToyUNet> model) {
  return VideoUNet(std::move(model));
}

}  // namespace xfedit
