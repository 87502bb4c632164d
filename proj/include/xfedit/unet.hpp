#pragma once

#include <cstdint>
#include <vector>

#include "xfedit/attention.hpp"
#include "xfedit/layers.hpp"

namespace xfedit {

struct UNetConfig {
  Index image_size = 32;
  Index image_channels = 3;
  /// widths[0] is the full-resolution stem; widths[k + 1] is the width after
  /// the k-th down-sampling. depth() == widths.size() - 1.
  std::vector<Index> widths = {16, 32, 64};
  Index heads = 2;
  Index norm_groups = 4;
  Index time_frequencies = 32;
  Index time_width = 64;
  Index context_width = 32;
  std::uint64_t seed = 0;

  int depth() const { return static_cast<int>(widths.size()) - 1; }
  void validate() const;
  bool operator==(const UNetConfig&) const = default;
};

/// Small text-conditioned encoder/decoder noise predictor.
///
/// Every stage below full resolution is ResBlock -> self-attention -> text
/// cross-attention. Convolutions and norms act on each frame separately, so
/// the same weights run unchanged on a single image or on a stack of video
/// frames; only the self-attention key/value sets change with the mode.
class ToyUNet {
 public:
  using Tensor = nn::Tensor;

  /// Builds and initialises from config.seed.
  explicit ToyUNet(UNetConfig config);

  const UNetConfig& config() const { return config_; }
  const nn::ParameterSet& parameters() const { return params_; }
  nn::ParameterSet& mutable_parameters() { return params_; }
  Index parameter_count() const { return params_.scalar_count(); }

  int self_attention_layers() const { return 2 * config_.depth() + 1; }
  int cross_attention_layers() const { return 2 * config_.depth() + 1; }
  std::vector<AttentionMode> default_modes() const;

  /// Per-call inputs. `timesteps` and `contexts` hold one entry per frame.
  struct Inputs {
    const Video* x = nullptr;
    std::vector<int> timesteps;
    std::vector<const Tensor*> contexts;
    std::vector<AttentionMode> modes;  // empty = SELF everywhere
    AttentionContext* ctx = nullptr;   // optional record/inject hooks
  };

  struct Trace {
    Tensor sinusoid, time_hidden, temb;
    nn::Conv2d::Cache conv_in;
    std::vector<nn::Conv2d::Cache> down_conv;
    std::vector<nn::ResBlock::Cache> down_res;
    std::vector<nn::SelfAttentionBlock::Cache> down_self;
    std::vector<nn::CrossAttentionBlock::Cache> down_cross;
    nn::ResBlock::Cache mid_res;
    nn::SelfAttentionBlock::Cache mid_self;
    nn::CrossAttentionBlock::Cache mid_cross;
    std::vector<nn::ResBlock::Cache> up_res;
    std::vector<nn::SelfAttentionBlock::Cache> up_self;
    std::vector<nn::CrossAttentionBlock::Cache> up_cross;
    std::vector<nn::Conv2d::Cache> up_conv;
    nn::ResBlock::Cache out_res;
    nn::GroupNorm::Cache out_norm;
    Video out_norm_out;
    nn::Conv2d::Cache conv_out;
    std::vector<const Tensor*> contexts;
  };

  /// Noise prediction. Fresh cross-attention maps go to `maps` (ordered by
  /// layer id) when non-null; `trace` keeps what backward needs.
  Video forward(const Inputs& in, std::vector<LayerMap>* maps = nullptr,
                Trace* trace = nullptr) const;

  /// Reverse pass from d(loss)/d(eps). Parameter gradients go to `sink`,
  /// per-frame context gradients are added to `d_contexts` when non-null.
  void backward(const Trace& trace, const Video& d_eps, const nn::GradSink& sink,
                std::vector<Tensor>* d_contexts) const;

  /// Spatially averaged output of the deepest encoder stage, one column per
  /// frame (SELF attention, no hooks).
  Tensor encoder_features(const Video& x, int timestep, const Tensor& context) const;

 private:
  Video run(const Inputs& in, std::vector<LayerMap>* maps, Trace* trace, bool encoder_only) const;

  UNetConfig config_;
  nn::ParameterSet params_;

  nn::Linear time_fc1_, time_fc2_;
  nn::Conv2d conv_in_;
  std::vector<nn::Conv2d> down_conv_;
  std::vector<nn::ResBlock> down_res_;
  std::vector<nn::SelfAttentionBlock> down_self_;
  std::vector<nn::CrossAttentionBlock> down_cross_;
  nn::ResBlock mid_res_;
  nn::SelfAttentionBlock mid_self_;
  nn::CrossAttentionBlock mid_cross_;
  // Indexed by level k, executed from k = depth-1 down to 0.
  std::vector<nn::ResBlock> up_res_;
  std::vector<nn::SelfAttentionBlock> up_self_;
  std::vector<nn::CrossAttentionBlock> up_cross_;
  std::vector<nn::Conv2d> up_conv_;
  nn::ResBlock out_res_;
  nn::GroupNorm out_norm_;
  nn::Conv2d conv_out_;
};

/// Sinusoidal timestep features, one column per timestep.
nn::Tensor timestep_features(const std::vector<int>& timesteps, Index frequencies);

}  // namespace xfedit
