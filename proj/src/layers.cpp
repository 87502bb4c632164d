#include "xfedit/layers.hpp"

#include <cmath>

namespace xfedit::nn {

Index ParameterSet::add(std::string name, Index rows, Index cols) {
  values_.push_back(Tensor::Zero(rows, cols));
  names_.push_back(std::move(name));
  return static_cast<Index>(values_.size()) - 1;
}

Index ParameterSet::scalar_count() const {
  Index n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

std::vector<Tensor> ParameterSet::zeros_like() const {
  std::vector<Tensor> out;
  out.reserve(values_.size());
  for (const auto& v : values_) out.push_back(Tensor::Zero(v.rows(), v.cols()));
  return out;
}

namespace {

void fill_uniform(Tensor& t, std::mt19937_64& rng, float bound) {
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (Index j = 0; j < t.cols(); ++j) {
    for (Index i = 0; i < t.rows(); ++i) t(i, j) = dist(rng);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

Conv2d Conv2d::create(ParameterSet& ps, const std::string& name, Index in, Index out,
                      Index kernel, Index stride) {
  Conv2d c;
  c.in_channels = in;
  c.out_channels = out;
  c.kernel = kernel;
  c.stride = stride;
  c.weight = ps.add(name + ".weight", out, in * kernel * kernel);
  c.bias = ps.add(name + ".bias", out, 1);
  return c;
}

void Conv2d::init(ParameterSet& ps, std::mt19937_64& rng, float gain) const {
  const float fan_in = static_cast<float>(in_channels * kernel * kernel);
  fill_uniform(ps[weight], rng, gain / std::sqrt(fan_in));
  ps[bias].setZero();
}

Video Conv2d::forward(std::span<const Tensor> p, const Video& x, Cache* cache) const {
  if (x.channels() != in_channels) {
    throw ShapeError("Conv2d: expected " + std::to_string(in_channels) + " channels, got " +
                     std::to_string(x.channels()));
  }
  const Index pad = kernel / 2;
  const Index h = x.height(), w = x.width(), frames = x.frames();
  const Index ho = (h + 2 * pad - kernel) / stride + 1;
  const Index wo = (w + 2 * pad - kernel) / stride + 1;
  const Tensor& weights = p[static_cast<std::size_t>(weight)];
  const Tensor& b = p[static_cast<std::size_t>(bias)];

  Tensor out;
  if (kernel == 1 && stride == 1) {
    out = weights * x.data();
    if (cache) {
      cache->columns = x.data();
    }
  } else {
    Tensor cols = Tensor::Zero(kernel * kernel * in_channels, frames * ho * wo);
    for (Index f = 0; f < frames; ++f) {
      for (Index oy = 0; oy < ho; ++oy) {
        for (Index ox = 0; ox < wo; ++ox) {
          const Index col = f * ho * wo + oy * wo + ox;
          for (Index ky = 0; ky < kernel; ++ky) {
            const Index iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= h) continue;
            for (Index kx = 0; kx < kernel; ++kx) {
              const Index ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= w) continue;
              cols.col(col).segment((ky * kernel + kx) * in_channels, in_channels) =
                  x.data().col(f * h * w + iy * w + ix);
            }
          }
        }
      }
    }
    out.noalias() = weights * cols;
    if (cache) cache->columns = std::move(cols);
  }
  out.colwise() += b.col(0);
  if (cache) {
    cache->frames = frames;
    cache->height = h;
    cache->width = w;
  }
  return Video(std::move(out), frames, ho, wo);
}

Video Conv2d::backward(std::span<const Tensor> p, const Cache& cache, const Video& dy,
                       const GradSink& sink) const {
  const Tensor& weights = p[static_cast<std::size_t>(weight)];
  if (sink.active()) {
    sink.add(weight, dy.data() * cache.columns.transpose());
    sink.add(bias, dy.data().rowwise().sum());
  }
  const Index h = cache.height, w = cache.width, frames = cache.frames;
  if (kernel == 1 && stride == 1) {
    return Video(weights.transpose() * dy.data(), frames, h, w);
  }
  const Tensor dcols = weights.transpose() * dy.data();
  const Index pad = kernel / 2;
  const Index ho = dy.height(), wo = dy.width();
  Tensor dx = Tensor::Zero(in_channels, frames * h * w);
  for (Index f = 0; f < frames; ++f) {
    for (Index oy = 0; oy < ho; ++oy) {
      for (Index ox = 0; ox < wo; ++ox) {
        const Index col = f * ho * wo + oy * wo + ox;
        for (Index ky = 0; ky < kernel; ++ky) {
          const Index iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          for (Index kx = 0; kx < kernel; ++kx) {
            const Index ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= w) continue;
            dx.col(f * h * w + iy * w + ix) +=
                dcols.col(col).segment((ky * kernel + kx) * in_channels, in_channels);
          }
        }
      }
    }
  }
  return Video(std::move(dx), frames, h, w);
}

// ---------------------------------------------------------------------------
// Linear

Linear Linear::create(ParameterSet& ps, const std::string& name, Index in, Index out) {
  Linear l;
  l.in_features = in;
  l.out_features = out;
  l.weight = ps.add(name + ".weight", out, in);
  l.bias = ps.add(name + ".bias", out, 1);
  return l;
}

void Linear::init(ParameterSet& ps, std::mt19937_64& rng, float gain) const {
  fill_uniform(ps[weight], rng, gain / std::sqrt(static_cast<float>(in_features)));
  ps[bias].setZero();
}

Tensor Linear::forward(std::span<const Tensor> p, const Tensor& x) const {
  Tensor y = p[static_cast<std::size_t>(weight)] * x;
  y.colwise() += p[static_cast<std::size_t>(bias)].col(0);
  return y;
}

Tensor Linear::backward(std::span<const Tensor> p, const Tensor& x, const Tensor& dy,
                        const GradSink& sink) const {
  if (sink.active()) {
    sink.add(weight, dy * x.transpose());
    sink.add(bias, dy.rowwise().sum());
  }
  return p[static_cast<std::size_t>(weight)].transpose() * dy;
}

// ---------------------------------------------------------------------------
// GroupNorm

GroupNorm GroupNorm::create(ParameterSet& ps, const std::string& name, Index channels,
                            Index groups) {
  if (groups < 1 || channels % groups != 0) {
    throw ShapeError("GroupNorm: channels must be divisible by groups");
  }
  GroupNorm g;
  g.channels = channels;
  g.groups = groups;
  g.gamma = ps.add(name + ".gamma", channels, 1);
  g.beta = ps.add(name + ".beta", channels, 1);
  return g;
}

void GroupNorm::init(ParameterSet& ps) const {
  ps[gamma].setOnes();
  ps[beta].setZero();
}

Video GroupNorm::forward(std::span<const Tensor> p, const Video& x, Cache* cache) const {
  if (x.channels() != channels) throw ShapeError("GroupNorm: channel mismatch");
  const Index cg = channels / groups;
  const Index hw = x.pixels();
  const float n = static_cast<float>(cg * hw);
  Tensor xhat(channels, x.data().cols());
  Tensor inv_std(groups, x.frames());
  for (Index f = 0; f < x.frames(); ++f) {
    for (Index g = 0; g < groups; ++g) {
      const auto blk = x.data().block(g * cg, f * hw, cg, hw);
      const float mean = blk.sum() / n;
      auto out = xhat.block(g * cg, f * hw, cg, hw);
      out = blk.array() - mean;
      const float var = out.squaredNorm() / n;
      const float inv = 1.0f / std::sqrt(var + eps);
      out *= inv;
      inv_std(g, f) = inv;
    }
  }
  Tensor y = (xhat.array().colwise() * p[static_cast<std::size_t>(gamma)].col(0).array())
                 .matrix();
  y.colwise() += p[static_cast<std::size_t>(beta)].col(0);
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->frames = x.frames();
  }
  return Video(std::move(y), x.frames(), x.height(), x.width());
}

Video GroupNorm::backward(std::span<const Tensor> p, const Cache& cache, const Video& dy,
                          const GradSink& sink) const {
  const Tensor& xhat = cache.normalized;
  if (sink.active()) {
    sink.add(gamma, (dy.data().array() * xhat.array()).rowwise().sum().matrix());
    sink.add(beta, dy.data().rowwise().sum());
  }
  const Tensor dxhat =
      (dy.data().array().colwise() * p[static_cast<std::size_t>(gamma)].col(0).array()).matrix();
  const Index cg = channels / groups;
  const Index hw = dy.pixels();
  const float n = static_cast<float>(cg * hw);
  Tensor dx(channels, dy.data().cols());
  for (Index f = 0; f < cache.frames; ++f) {
    for (Index g = 0; g < groups; ++g) {
      const auto dxh = dxhat.block(g * cg, f * hw, cg, hw);
      const auto xh = xhat.block(g * cg, f * hw, cg, hw);
      const float mean_d = dxh.sum() / n;
      const float mean_dx = (dxh.array() * xh.array()).sum() / n;
      dx.block(g * cg, f * hw, cg, hw) =
          (cache.inv_std(g, f) * (dxh.array() - mean_d - xh.array() * mean_dx)).matrix();
    }
  }
  return Video(std::move(dx), dy.frames(), dy.height(), dy.width());
}

// ---------------------------------------------------------------------------

Tensor silu(const Tensor& x) {
  return (x.array() / (1.0f + (-x.array()).exp())).matrix();
}

Tensor silu_backward(const Tensor& x, const Tensor& dy) {
  const auto s = 1.0f / (1.0f + (-x.array()).exp());
  return (dy.array() * s * (1.0f + x.array() * (1.0f - s))).matrix();
}

Video upsample_nearest2x(const Video& x) {
  const Index h = x.height(), w = x.width();
  Video out(x.frames(), x.channels(), 2 * h, 2 * w);
  for (Index f = 0; f < x.frames(); ++f) {
    for (Index y = 0; y < 2 * h; ++y) {
      for (Index xx = 0; xx < 2 * w; ++xx) {
        out.data().col(f * 4 * h * w + y * 2 * w + xx) =
            x.data().col(f * h * w + (y / 2) * w + xx / 2);
      }
    }
  }
  return out;
}

Video upsample_nearest2x_backward(const Video& dy) {
  const Index h = dy.height() / 2, w = dy.width() / 2;
  Video dx(dy.frames(), dy.channels(), h, w);
  for (Index f = 0; f < dy.frames(); ++f) {
    for (Index y = 0; y < 2 * h; ++y) {
      for (Index xx = 0; xx < 2 * w; ++xx) {
        dx.data().col(f * h * w + (y / 2) * w + xx / 2) +=
            dy.data().col(f * 4 * h * w + y * 2 * w + xx);
      }
    }
  }
  return dx;
}

Video concat_channels(const Video& a, const Video& b) {
  if (a.frames() != b.frames() || a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError("concat_channels: spatial shape mismatch");
  }
  Tensor out(a.channels() + b.channels(), a.data().cols());
  out.topRows(a.channels()) = a.data();
  out.bottomRows(b.channels()) = b.data();
  return Video(std::move(out), a.frames(), a.height(), a.width());
}

// ---------------------------------------------------------------------------
// ResBlock

ResBlock ResBlock::create(ParameterSet& ps, const std::string& name, Index in, Index out,
                          Index time_dim, Index groups) {
  ResBlock r;
  r.norm1 = GroupNorm::create(ps, name + ".norm1", in, groups);
  r.conv1 = Conv2d::create(ps, name + ".conv1", in, out, 3, 1);
  r.time_proj = Linear::create(ps, name + ".time_proj", time_dim, out);
  r.norm2 = GroupNorm::create(ps, name + ".norm2", out, groups);
  r.conv2 = Conv2d::create(ps, name + ".conv2", out, out, 3, 1);
  r.has_skip = in != out;
  if (r.has_skip) r.skip = Conv2d::create(ps, name + ".skip", in, out, 1, 1);
  return r;
}

void ResBlock::init(ParameterSet& ps, std::mt19937_64& rng) const {
  norm1.init(ps);
  conv1.init(ps, rng);
  time_proj.init(ps, rng);
  norm2.init(ps);
  conv2.init(ps, rng, 0.0f);
  if (has_skip) skip.init(ps, rng);
}

Video ResBlock::forward(std::span<const Tensor> p, const Video& x, const Tensor& temb,
                        Cache* cache) const {
  Video h1 = norm1.forward(p, x, cache ? &cache->gn1 : nullptr);
  Video c1 = conv1.forward(p, silu(h1), cache ? &cache->conv1 : nullptr);
  const Tensor tp = time_proj.forward(p, silu(temb));
  for (Index f = 0; f < c1.frames(); ++f) c1.frame(f).colwise() += tp.col(f);
  Video h2 = norm2.forward(p, c1, cache ? &cache->gn2 : nullptr);
  Video c2 = conv2.forward(p, silu(h2), cache ? &cache->conv2 : nullptr);
  if (has_skip) {
    c2.data() += skip.forward(p, x, cache ? &cache->skip : nullptr).data();
  } else {
    c2.data() += x.data();
  }
  if (cache) {
    cache->gn1_out = std::move(h1);
    cache->gn2_out = std::move(h2);
    cache->temb_act = temb;
  }
  return c2;
}

Video ResBlock::backward(std::span<const Tensor> p, const Cache& cache, const Video& dy,
                         Tensor& d_temb, const GradSink& sink) const {
  const Video d_a2 = conv2.backward(p, cache.conv2, dy, sink);
  const Video d_h2(silu_backward(cache.gn2_out.data(), d_a2.data()), dy.frames(), dy.height(),
                   dy.width());
  const Video d_c1 = norm2.backward(p, cache.gn2, d_h2, sink);

  Tensor d_tp(d_c1.channels(), d_c1.frames());
  for (Index f = 0; f < d_c1.frames(); ++f) d_tp.col(f) = d_c1.frame(f).rowwise().sum();
  const Tensor& temb = cache.temb_act;
  const Tensor d_ta = time_proj.backward(p, silu(temb), d_tp, sink);
  d_temb += silu_backward(temb, d_ta);

  const Video d_a1 = conv1.backward(p, cache.conv1, d_c1, sink);
  const Video d_h1(silu_backward(cache.gn1_out.data(), d_a1.data()), d_a1.frames(),
                   d_a1.height(), d_a1.width());
  Video dx = norm1.backward(p, cache.gn1, d_h1, sink);
  if (has_skip) {
    dx.data() += skip.backward(p, cache.skip, dy, sink).data();
  } else {
    dx.data() += dy.data();
  }
  return dx;
}

// ---------------------------------------------------------------------------
// SelfAttentionBlock

SelfAttentionBlock SelfAttentionBlock::create(ParameterSet& ps, const std::string& name,
                                              Index channels, Index heads, Index groups) {
  if (channels % heads != 0) throw ShapeError("attention channels not divisible by heads");
  SelfAttentionBlock a;
  a.channels = channels;
  a.heads = heads;
  a.norm = GroupNorm::create(ps, name + ".norm", channels, groups);
  a.wq = ps.add(name + ".to_q", channels, channels);
  a.wk = ps.add(name + ".to_k", channels, channels);
  a.wv = ps.add(name + ".to_v", channels, channels);
  a.wo = ps.add(name + ".to_out.weight", channels, channels);
  a.bo = ps.add(name + ".to_out.bias", channels, 1);
  return a;
}

void SelfAttentionBlock::init(ParameterSet& ps, std::mt19937_64& rng) const {
  norm.init(ps);
  const float b = 1.0f / std::sqrt(static_cast<float>(channels));
  fill_uniform(ps[wq], rng, b);
  fill_uniform(ps[wk], rng, b);
  fill_uniform(ps[wv], rng, b);
  ps[wo].setZero();
  ps[bo].setZero();
}

AttentionWeights<float> SelfAttentionBlock::weights(std::span<const Tensor> p) const {
  auto at = [&](Index i) -> const Tensor& { return p[static_cast<std::size_t>(i)]; };
  return {at(wq), at(wk), at(wv), at(wo), at(bo).col(0)};
}

Video SelfAttentionBlock::forward(std::span<const Tensor> p, const Video& x, AttentionMode mode,
                                  Cache* cache) const {
  auto at = [&](Index i) -> const Tensor& { return p[static_cast<std::size_t>(i)]; };
  Video h = norm.forward(p, x, cache ? &cache->norm : nullptr);
  Tensor q = at(wq) * h.data();
  Tensor k = at(wk) * h.data();
  Tensor v = at(wv) * h.data();
  auto groups = attention_groups(mode, x.frames(), x.pixels());
  Tensor attended = grouped_attention<float>(q, k, v, groups, heads,
                                             cache ? &cache->probs : nullptr);
  Tensor out = at(wo) * attended;
  out.colwise() += at(bo).col(0);
  out += x.data();
  if (cache) {
    cache->h = std::move(h.data());
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->attended = std::move(attended);
    cache->groups = std::move(groups);
  }
  return Video(std::move(out), x.frames(), x.height(), x.width());
}

Video SelfAttentionBlock::backward(std::span<const Tensor> p, const Cache& cache,
                                   const Video& dy, const GradSink& sink) const {
  auto at = [&](Index i) -> const Tensor& { return p[static_cast<std::size_t>(i)]; };
  if (sink.active()) {
    sink.add(wo, dy.data() * cache.attended.transpose());
    sink.add(bo, dy.data().rowwise().sum());
  }
  const Tensor d_att = at(wo).transpose() * dy.data();
  Tensor dq, dk, dv;
  grouped_attention_backward<float>(cache.q, cache.k, cache.v, cache.groups, heads, cache.probs,
                                    d_att, dq, dk, dv);
  if (sink.active()) {
    sink.add(wq, dq * cache.h.transpose());
    sink.add(wk, dk * cache.h.transpose());
    sink.add(wv, dv * cache.h.transpose());
  }
  Tensor dh = at(wq).transpose() * dq;
  dh.noalias() += at(wk).transpose() * dk;
  dh.noalias() += at(wv).transpose() * dv;
  Video dx = norm.backward(p, cache.norm, Video(std::move(dh), dy.frames(), dy.height(), dy.width()),
                           sink);
  dx.data() += dy.data();
  return dx;
}

// ---------------------------------------------------------------------------
// CrossAttentionBlock

CrossAttentionBlock CrossAttentionBlock::create(ParameterSet& ps, const std::string& name,
                                                Index channels, Index context_width,
                                                Index heads, Index groups, int layer_id) {
  if (channels % heads != 0) throw ShapeError("attention channels not divisible by heads");
  CrossAttentionBlock a;
  a.channels = channels;
  a.context_width = context_width;
  a.heads = heads;
  a.layer_id = layer_id;
  a.norm = GroupNorm::create(ps, name + ".norm", channels, groups);
  a.wq = ps.add(name + ".to_q", channels, channels);
  a.wk = ps.add(name + ".to_k", channels, context_width);
  a.wv = ps.add(name + ".to_v", channels, context_width);
  a.wo = ps.add(name + ".to_out.weight", channels, channels);
  a.bo = ps.add(name + ".to_out.bias", channels, 1);
  return a;
}

void CrossAttentionBlock::init(ParameterSet& ps, std::mt19937_64& rng) const {
  norm.init(ps);
  fill_uniform(ps[wq], rng, 1.0f / std::sqrt(static_cast<float>(channels)));
  fill_uniform(ps[wk], rng, 1.0f / std::sqrt(static_cast<float>(context_width)));
  fill_uniform(ps[wv], rng, 1.0f / std::sqrt(static_cast<float>(context_width)));
  ps[wo].setZero();
  ps[bo].setZero();
}

Video CrossAttentionBlock::forward(std::span<const Tensor> p, const Video& x,
                                   const std::vector<const Tensor*>& contexts,
                                   AttentionContext* ctx, LayerMap* fresh_map,
                                   Cache* cache) const {
  auto at = [&](Index i) -> const Tensor& { return p[static_cast<std::size_t>(i)]; };
  const Index frames = x.frames();
  const Index n = x.pixels();
  if (static_cast<Index>(contexts.size()) != frames) {
    throw ShapeError("CrossAttention: need one context per frame");
  }
  Video h = norm.forward(p, x, cache ? &cache->norm : nullptr);
  Tensor q = at(wq) * h.data();
  const Index dh = channels / heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

  std::vector<Tensor> ks(static_cast<std::size_t>(frames)), vs(static_cast<std::size_t>(frames));
  LayerMap fresh;
  fresh.frames = frames;
  fresh.heads = heads;
  fresh.tokens = n;
  fresh.text_length = contexts.front()->cols();
  fresh.blocks.reserve(static_cast<std::size_t>(frames * heads));
  for (Index f = 0; f < frames; ++f) {
    const Tensor& c = *contexts[static_cast<std::size_t>(f)];
    if (c.rows() != context_width || c.cols() != fresh.text_length) {
      throw ShapeError("CrossAttention: context shape mismatch");
    }
    // Frames sharing one embedding share the projected keys/values.
    if (f > 0 && contexts[static_cast<std::size_t>(f)] == contexts[static_cast<std::size_t>(f) - 1]) {
      ks[static_cast<std::size_t>(f)] = ks[static_cast<std::size_t>(f) - 1];
      vs[static_cast<std::size_t>(f)] = vs[static_cast<std::size_t>(f) - 1];
    } else {
      ks[static_cast<std::size_t>(f)] = at(wk) * c;
      vs[static_cast<std::size_t>(f)] = at(wv) * c;
    }
    for (Index hd = 0; hd < heads; ++hd) {
      Tensor s = q.block(hd * dh, f * n, dh, n).transpose() *
                 ks[static_cast<std::size_t>(f)].middleRows(hd * dh, dh) * scale;
      softmax_rows_inplace(s);
      fresh.blocks.push_back(std::move(s));
    }
  }

  bool injected = false;
  LayerMap used;
  if (ctx) {
    if (ctx->recording_now()) record_cross_attention(*ctx, layer_id, fresh);
    const long before = ctx->injections_fired;
    used = inject_cross_attention(*ctx, layer_id, fresh);
    injected = ctx->injections_fired != before;
  }
  const LayerMap& applied = injected ? used : fresh;

  Tensor attended(channels, frames * n);
  for (Index f = 0; f < frames; ++f) {
    for (Index hd = 0; hd < heads; ++hd) {
      attended.block(hd * dh, f * n, dh, n).noalias() =
          vs[static_cast<std::size_t>(f)].middleRows(hd * dh, dh) *
          applied.block(f, hd).transpose();
    }
  }
  Tensor out = at(wo) * attended;
  out.colwise() += at(bo).col(0);
  out += x.data();

  if (fresh_map) *fresh_map = fresh;
  if (cache) {
    cache->h = std::move(h.data());
    cache->q = std::move(q);
    cache->k = std::move(ks);
    cache->v = std::move(vs);
    cache->attended = std::move(attended);
    cache->injected = injected;
    cache->used = injected ? std::move(used) : std::move(fresh);
  }
  return Video(std::move(out), frames, x.height(), x.width());
}

Video CrossAttentionBlock::backward(std::span<const Tensor> p, const Cache& cache,
                                    const Video& dy, const std::vector<const Tensor*>& contexts,
                                    std::vector<Tensor>* d_contexts,
                                    const GradSink& sink) const {
  auto at = [&](Index i) -> const Tensor& { return p[static_cast<std::size_t>(i)]; };
  const Index frames = dy.frames();
  const Index n = dy.pixels();
  const Index dh = channels / heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  if (sink.active()) {
    sink.add(wo, dy.data() * cache.attended.transpose());
    sink.add(bo, dy.data().rowwise().sum());
  }
  const Tensor d_att = at(wo).transpose() * dy.data();
  Tensor dq = Tensor::Zero(channels, frames * n);
  const Index text_len = cache.used.text_length;
  for (Index f = 0; f < frames; ++f) {
    const Tensor& k = cache.k[static_cast<std::size_t>(f)];
    const Tensor& v = cache.v[static_cast<std::size_t>(f)];
    Tensor dk = Tensor::Zero(channels, text_len);
    Tensor dv = Tensor::Zero(channels, text_len);
    for (Index hd = 0; hd < heads; ++hd) {
      const Tensor& prob = cache.used.block(f, hd);
      const auto dog = d_att.block(hd * dh, f * n, dh, n);
      dv.middleRows(hd * dh, dh).noalias() += dog * prob;
      if (cache.injected) continue;
      const Tensor dp = dog.transpose() * v.middleRows(hd * dh, dh);
      const VectorX<float> rowdot = (dp.array() * prob.array()).rowwise().sum();
      const Tensor ds = (prob.array() * (dp.array().colwise() - rowdot.array())).matrix() * scale;
      dq.block(hd * dh, f * n, dh, n).noalias() += k.middleRows(hd * dh, dh) * ds.transpose();
      dk.middleRows(hd * dh, dh).noalias() += cache.q.block(hd * dh, f * n, dh, n) * ds;
    }
    const Tensor& c = *contexts[static_cast<std::size_t>(f)];
    if (sink.active()) {
      sink.add(wk, dk * c.transpose());
      sink.add(wv, dv * c.transpose());
    }
    if (d_contexts) {
      (*d_contexts)[static_cast<std::size_t>(f)] += at(wk).transpose() * dk + at(wv).transpose() * dv;
    }
  }
  if (sink.active()) sink.add(wq, dq * cache.h.transpose());
  Video dx = norm.backward(p, cache.norm,
                           Video(at(wq).transpose() * dq, frames, dy.height(), dy.width()), sink);
  dx.data() += dy.data();
  return dx;
}

}  // namespace xfedit::nn
