#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "xfedit/attention.hpp"
#include "xfedit/tensor.hpp"

namespace xfedit::nn {

using Tensor = MatrixX<float>;

/// Flat, ordered parameter storage. Layers keep indices into it, so copying
/// a model never leaves dangling references.
class ParameterSet {
 public:
  Index add(std::string name, Index rows, Index cols);
  Index size() const { return static_cast<Index>(values_.size()); }
  Index scalar_count() const;

  Tensor& operator[](Index i) { return values_[static_cast<std::size_t>(i)]; }
  const Tensor& operator[](Index i) const { return values_[static_cast<std::size_t>(i)]; }
  const std::string& name(Index i) const { return names_[static_cast<std::size_t>(i)]; }
  std::span<const Tensor> values() const { return values_; }

  /// Zero tensors with the same shapes, for gradient accumulation.
  std::vector<Tensor> zeros_like() const;

 private:
  std::vector<Tensor> values_;
  std::vector<std::string> names_;
};

/// Gradient sink; null `grads` means parameter gradients are not needed.
struct GradSink {
  std::vector<Tensor>* grads = nullptr;
  void add(Index id, const Tensor& g) const {
    if (grads) (*grads)[static_cast<std::size_t>(id)] += g;
  }
  bool active() const { return grads != nullptr; }
};

// ---------------------------------------------------------------------------

struct Conv2d {
  struct Cache {
    Tensor columns;
    Index frames = 0, height = 0, width = 0;
  };

  Index weight = -1, bias = -1;
  Index in_channels = 0, out_channels = 0, kernel = 3, stride = 1;

  static Conv2d create(ParameterSet& ps, const std::string& name, Index in, Index out,
                       Index kernel, Index stride);
  void init(ParameterSet& ps, std::mt19937_64& rng, float gain = 1.0f) const;

  Video forward(std::span<const Tensor> p, const Video& x, Cache* cache) const;
  Video backward(std::span<const Tensor> p, const Cache& cache, const Video& dy,
                 const GradSink& sink) const;
};

struct Linear {
  Index weight = -1, bias = -1;
  Index in_features = 0, out_features = 0;

  static Linear create(ParameterSet& ps, const std::string& name, Index in, Index out);
  void init(ParameterSet& ps, std::mt19937_64& rng, float gain = 1.0f) const;

  Tensor forward(std::span<const Tensor> p, const Tensor& x) const;
  /// Returns dx; x is the forward input.
  Tensor backward(std::span<const Tensor> p, const Tensor& x, const Tensor& dy,
                  const GradSink& sink) const;
};

struct GroupNorm {
  struct Cache {
    Tensor normalized;
    Tensor inv_std;  // groups x frames
    Index frames = 0;
  };

  Index gamma = -1, beta = -1;
  Index channels = 0, groups = 1;
  float eps = 1e-5f;

  static GroupNorm create(ParameterSet& ps, const std::string& name, Index channels,
                          Index groups);
  void init(ParameterSet& ps) const;

  Video forward(std::span<const Tensor> p, const Video& x, Cache* cache) const;
  Video backward(std::span<const Tensor> p, const Cache& cache, const Video& dy,
                 const GradSink& sink) const;
};

Tensor silu(const Tensor& x);
Tensor silu_backward(const Tensor& x, const Tensor& dy);

inline Video silu(const Video& x) {
  return Video(silu(x.data()), x.frames(), x.height(), x.width());
}

Video upsample_nearest2x(const Video& x);
Video upsample_nearest2x_backward(const Video& dy);

Video concat_channels(const Video& a, const Video& b);

/// Residual conv block applied to each frame independently, with an additive
/// per-frame time embedding.
struct ResBlock {
  struct Cache {
    GroupNorm::Cache gn1, gn2;
    Video gn1_out, gn2_out;
    Conv2d::Cache conv1, conv2, skip;
    Tensor temb_act;  // silu(temb)
  };

  GroupNorm norm1, norm2;
  Conv2d conv1, conv2;
  Linear time_proj;
  bool has_skip = false;
  Conv2d skip;

  static ResBlock create(ParameterSet& ps, const std::string& name, Index in, Index out,
                         Index time_dim, Index groups);
  void init(ParameterSet& ps, std::mt19937_64& rng) const;

  /// temb: time_dim x frames.
  Video forward(std::span<const Tensor> p, const Video& x, const Tensor& temb,
                Cache* cache) const;
  /// Returns dx, accumulates d temb into `d_temb`.
  Video backward(std::span<const Tensor> p, const Cache& cache, const Video& dy, Tensor& d_temb,
                 const GradSink& sink) const;
};

/// Self-attention over feature tokens with cross-frame key/value sets.
struct SelfAttentionBlock {
  struct Cache {
    GroupNorm::Cache norm;
    Tensor h, q, k, v, attended;
    std::vector<AttentionGroup> groups;
    AttentionProbs<float> probs;
  };

  GroupNorm norm;
  Index wq = -1, wk = -1, wv = -1, wo = -1, bo = -1;
  Index channels = 0, heads = 1;

  static SelfAttentionBlock create(ParameterSet& ps, const std::string& name, Index channels,
                                   Index heads, Index groups);
  void init(ParameterSet& ps, std::mt19937_64& rng) const;
  AttentionWeights<float> weights(std::span<const Tensor> p) const;

  Video forward(std::span<const Tensor> p, const Video& x, AttentionMode mode,
                Cache* cache) const;
  Video backward(std::span<const Tensor> p, const Cache& cache, const Video& dy,
                 const GradSink& sink) const;
};

/// Text cross-attention, applied to each frame independently. Every frame
/// has its own context pointer (they usually all point to one embedding).
struct CrossAttentionBlock {
  struct Cache {
    GroupNorm::Cache norm;
    Tensor h, q, attended;
    std::vector<Tensor> k, v;  // per frame, C x L
    LayerMap used;             // probabilities actually applied
    bool injected = false;
  };

  GroupNorm norm;
  Index wq = -1, wk = -1, wv = -1, wo = -1, bo = -1;
  Index channels = 0, context_width = 0, heads = 1;
  int layer_id = 0;

  static CrossAttentionBlock create(ParameterSet& ps, const std::string& name, Index channels,
                                    Index context_width, Index heads, Index groups,
                                    int layer_id);
  void init(ParameterSet& ps, std::mt19937_64& rng) const;

  /// `ctx` may be null (plain forward, no record/inject). Fills `fresh_map`
  /// with the freshly computed probabilities when non-null.
  Video forward(std::span<const Tensor> p, const Video& x,
                const std::vector<const Tensor*>& contexts, AttentionContext* ctx,
                LayerMap* fresh_map, Cache* cache) const;
  /// Returns dx; adds per-frame context gradients into d_contexts[f].
  Video backward(std::span<const Tensor> p, const Cache& cache, const Video& dy,
                 const std::vector<const Tensor*>& contexts, std::vector<Tensor>* d_contexts,
                 const GradSink& sink) const;
};

}  // namespace xfedit::nn
