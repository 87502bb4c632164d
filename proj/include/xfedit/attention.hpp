#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "xfedit/tensor.hpp"

namespace xfedit {

/// How a self-attention layer looks across frames.
enum class AttentionMode {
  Self,             // frame i sees frame i
  SparseCausal,     // frame i sees frames 1 and i-1 (frame 1 sees itself)
  TemporalOnly,     // token n sees token n of every frame
  SpatialTemporal,  // frame i sees every token of every frame
};

const char* to_string(AttentionMode mode);
AttentionMode attention_mode_from_string(const std::string& name);

/// One softmax problem: a set of query columns attending to a set of key
/// columns. Columns index the F*N token axis (frame-major).
struct AttentionGroup {
  std::vector<Index> queries;
  std::vector<Index> keys;
};

std::vector<AttentionGroup> attention_groups(AttentionMode mode, Index frames, Index tokens);

/// Projection weights of one attention layer. `query`, `key`, `value` map
/// features to the D-wide attention space, `out` maps back; the layer output
/// is `out * attended + out_bias`.
template <typename Scalar>
struct AttentionWeights {
  MatrixX<Scalar> query;
  MatrixX<Scalar> key;
  MatrixX<Scalar> value;
  MatrixX<Scalar> out;
  VectorX<Scalar> out_bias;
};

/// Column-wise softmax with max subtraction (each column is one query).
template <typename Derived>
void softmax_cols_inplace(Eigen::MatrixBase<Derived>& scores) {
  for (Index c = 0; c < scores.cols(); ++c) {
    auto col = scores.col(c);
    const auto m = col.maxCoeff();
    col = (col.array() - m).exp().matrix();
    col /= col.sum();
  }
}

/// Row-wise softmax with max subtraction.
template <typename Derived>
void softmax_rows_inplace(Eigen::MatrixBase<Derived>& scores) {
  for (Index r = 0; r < scores.rows(); ++r) {
    auto row = scores.row(r);
    const auto m = row.maxCoeff();
    row = (row.array() - m).exp().matrix();
    row /= row.sum();
  }
}

/// Probabilities kept from a forward pass for the backward pass, one entry
/// per (group, head), each |keys| x |queries| (column j is query j's
/// distribution over the group's keys).
template <typename Scalar>
struct AttentionProbs {
  std::vector<MatrixX<Scalar>> probs;
};

/// Multi-head grouped attention on already projected q/k/v (rows are the
/// attention width, columns the F*N tokens). Heads split rows evenly.
template <typename Scalar>
MatrixX<Scalar> grouped_attention(const MatrixX<Scalar>& q, const MatrixX<Scalar>& k,
                                  const MatrixX<Scalar>& v,
                                  const std::vector<AttentionGroup>& groups, Index heads,
                                  AttentionProbs<Scalar>* keep = nullptr) {
  if (heads < 1 || q.rows() % heads != 0 || v.rows() % heads != 0) {
    throw ShapeError("attention width not divisible by heads");
  }
  if (k.cols() != q.cols() || v.cols() != q.cols() || k.rows() != q.rows()) {
    throw ShapeError("grouped_attention: q/k/v shape mismatch");
  }
  const Index dh = q.rows() / heads;
  const Index vh = v.rows() / heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  MatrixX<Scalar> out = MatrixX<Scalar>::Zero(v.rows(), q.cols());
  if (keep) keep->probs.clear();
  for (const auto& g : groups) {
    const MatrixX<Scalar> qg = q(Eigen::all, g.queries);
    const MatrixX<Scalar> kg = k(Eigen::all, g.keys);
    const MatrixX<Scalar> vg = v(Eigen::all, g.keys);
    MatrixX<Scalar> og(v.rows(), qg.cols());
    for (Index h = 0; h < heads; ++h) {
      MatrixX<Scalar> pt = kg.middleRows(h * dh, dh).transpose() * qg.middleRows(h * dh, dh);
      pt *= scale;
      softmax_cols_inplace(pt);
      og.middleRows(h * vh, vh).noalias() = vg.middleRows(h * vh, vh) * pt;
      if (keep) keep->probs.push_back(std::move(pt));
    }
    out(Eigen::all, g.queries) = og;
  }
  return out;
}

/// Gradients of grouped_attention given the forward probabilities.
template <typename Scalar>
void grouped_attention_backward(const MatrixX<Scalar>& q, const MatrixX<Scalar>& k,
                                const MatrixX<Scalar>& v,
                                const std::vector<AttentionGroup>& groups, Index heads,
                                const AttentionProbs<Scalar>& keep, const MatrixX<Scalar>& d_out,
                                MatrixX<Scalar>& d_q, MatrixX<Scalar>& d_k,
                                MatrixX<Scalar>& d_v) {
  const Index dh = q.rows() / heads;
  const Index vh = v.rows() / heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  d_q = MatrixX<Scalar>::Zero(q.rows(), q.cols());
  d_k = MatrixX<Scalar>::Zero(k.rows(), k.cols());
  d_v = MatrixX<Scalar>::Zero(v.rows(), v.cols());
  std::size_t slot = 0;
  for (const auto& g : groups) {
    const MatrixX<Scalar> qg = q(Eigen::all, g.queries);
    const MatrixX<Scalar> kg = k(Eigen::all, g.keys);
    const MatrixX<Scalar> vg = v(Eigen::all, g.keys);
    const MatrixX<Scalar> dog = d_out(Eigen::all, g.queries);
    MatrixX<Scalar> dqg(q.rows(), qg.cols()), dkg(k.rows(), kg.cols()), dvg(v.rows(), vg.cols());
    for (Index h = 0; h < heads; ++h, ++slot) {
      const MatrixX<Scalar>& pt = keep.probs[slot];
      const auto doh = dog.middleRows(h * vh, vh);
      dvg.middleRows(h * vh, vh).noalias() = doh * pt.transpose();
      const MatrixX<Scalar> dpt = vg.middleRows(h * vh, vh).transpose() * doh;
      const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> coldot =
          (dpt.array() * pt.array()).colwise().sum();
      const MatrixX<Scalar> dst =
          (pt.array() * (dpt.array().rowwise() - coldot.array())).matrix() * scale;
      dqg.middleRows(h * dh, dh).noalias() = kg.middleRows(h * dh, dh) * dst;
      dkg.middleRows(h * dh, dh).noalias() = qg.middleRows(h * dh, dh) * dst.transpose();
    }
    // Scatter-add: key lists may repeat a column (sparse-causal frame 2).
    for (std::size_t j = 0; j < g.queries.size(); ++j) {
      d_q.col(g.queries[j]) += dqg.col(static_cast<Index>(j));
    }
    for (std::size_t j = 0; j < g.keys.size(); ++j) {
      d_k.col(g.keys[j]) += dkg.col(static_cast<Index>(j));
      d_v.col(g.keys[j]) += dvg.col(static_cast<Index>(j));
    }
  }
}

/// Cross-frame self-attention over tokens laid out as D x (F*N), sharing one
/// set of projection weights across every frame and position.
template <typename Scalar>
MatrixX<Scalar> cross_frame_attend(const MatrixX<Scalar>& features, Index frames,
                                   AttentionMode mode, const AttentionWeights<Scalar>& w,
                                   Index heads) {
  if (frames <= 0) throw ShapeError("cross_frame_attend: need at least one frame");
  if (features.cols() % frames != 0) throw ShapeError("cross_frame_attend: ragged frames");
  if (w.query.cols() != features.rows() || w.key.cols() != features.rows() ||
      w.value.cols() != features.rows() || w.out.cols() != w.value.rows() ||
      w.out_bias.size() != w.out.rows()) {
    throw ShapeError("cross_frame_attend: weight shapes do not match feature width");
  }
  const Index tokens = features.cols() / frames;
  const MatrixX<Scalar> q = w.query * features;
  const MatrixX<Scalar> k = w.key * features;
  const MatrixX<Scalar> v = w.value * features;
  const auto groups = attention_groups(mode, frames, tokens);
  MatrixX<Scalar> attended = grouped_attention(q, k, v, groups, heads);
  return (w.out * attended).colwise() + w.out_bias;
}

// ---------------------------------------------------------------------------
// Cross-attention maps and the per-run attention context.

/// Text cross-attention probabilities of one layer at one timestep:
/// F x heads x N x L, stored as F*heads blocks of N x L (block f*heads + h).
struct LayerMap {
  Index frames = 0;
  Index heads = 0;
  Index tokens = 0;
  Index text_length = 0;
  std::vector<MatrixX<float>> blocks;

  const MatrixX<float>& block(Index f, Index h) const {
    return blocks[static_cast<std::size_t>(f * heads + h)];
  }
  bool same_signature(const LayerMap& o) const {
    return frames == o.frames && heads == o.heads && tokens == o.tokens &&
           text_length == o.text_length;
  }
  bool operator==(const LayerMap& o) const {
    return same_signature(o) && blocks == o.blocks;
  }
};

/// Recorded maps keyed by (timestep, cross-attention layer id).
class CrossAttnMaps {
 public:
  using Key = std::pair<int, int>;

  void insert(int timestep, int layer, LayerMap map);
  const LayerMap* find(int timestep, int layer) const;
  bool contains(int timestep, int layer) const { return find(timestep, layer) != nullptr; }
  std::size_t size() const { return maps_.size(); }
  bool empty() const { return maps_.empty(); }
  const std::map<Key, LayerMap>& entries() const { return maps_; }
  bool operator==(const CrossAttnMaps& o) const { return maps_ == o.maps_; }

 private:
  std::map<Key, LayerMap> maps_;
};

enum class Branch { Conditional, Unconditional };

/// What to do when an injected map and the fresh map disagree on text length.
enum class TokenMismatch {
  Reject,   // ShapeError
  Overlap,  // use injected values on the first min(L_src, L_tgt) columns
};

/// Per-run attention configuration plus recording/injection state.
///
/// Single writer: one sampling run owns a context; concurrent runs need their
/// own contexts even when they share a model.
class AttentionContext {
 public:
  AttentionContext() = default;
  explicit AttentionContext(std::vector<AttentionMode> self_attention_modes)
      : modes(std::move(self_attention_modes)) {}

  std::vector<AttentionMode> modes;  // one per self-attention layer
  std::string run_id;

  bool record_maps = false;
  CrossAttnMaps recorded;

  std::shared_ptr<const CrossAttnMaps> injected_maps;
  bool injection_active = false;
  bool inject_unconditional = false;
  TokenMismatch token_mismatch = TokenMismatch::Reject;

  Branch branch = Branch::Conditional;
  int timestep = -1;

  // Instrumentation.
  long injections_fired = 0;
  long maps_recorded = 0;

  bool recording_now() const { return record_maps && branch == Branch::Conditional; }
  bool injecting_now() const {
    return injection_active && injected_maps &&
           (branch == Branch::Conditional || inject_unconditional);
  }
};

/// Stores `map` under (ctx.timestep, layer_id). Throws on a duplicate key or
/// when recording is off.
void record_cross_attention(AttentionContext& ctx, int layer_id, const LayerMap& map);

/// The map the layer should use: the injected one for (ctx.timestep,
/// layer_id) when injection is live and such a map exists, else `fresh`.
/// Columns the injected map does not cover (Overlap policy) keep fresh
/// values and each row is renormalised.
LayerMap inject_cross_attention(AttentionContext& ctx, int layer_id, const LayerMap& fresh);

/// Default layer placement: the first self-attention of the down, middle and
/// up stages is spatial-temporal, everything else sparse-causal.
std::vector<AttentionMode> default_attention_modes(int down_layers, int mid_layers,
                                                   int up_layers);

}  // namespace xfedit
