#include "xfedit/attention.hpp"

#include <algorithm>
#include <numeric>

namespace xfedit {

const char* to_string(AttentionMode mode) {
  switch (mode) {
    case AttentionMode::Self:
      return "SELF";
    case AttentionMode::SparseCausal:
      return "SC";
    case AttentionMode::TemporalOnly:
      return "TEMPORAL";
    case AttentionMode::SpatialTemporal:
      return "ST";
  }
  return "?";
}

AttentionMode attention_mode_from_string(const std::string& name) {
  if (name == "SELF") return AttentionMode::Self;
  if (name == "SC") return AttentionMode::SparseCausal;
  if (name == "TEMPORAL") return AttentionMode::TemporalOnly;
  if (name == "ST") return AttentionMode::SpatialTemporal;
  throw ConfigError("unknown attention mode '" + name + "' (expected SELF, SC, TEMPORAL or ST)");
}

namespace {
std::vector<Index> frame_range(Index frame, Index tokens) {
  std::vector<Index> cols(static_cast<std::size_t>(tokens));
  std::iota(cols.begin(), cols.end(), frame * tokens);
  return cols;
}
}  // namespace

std::vector<AttentionGroup> attention_groups(AttentionMode mode, Index frames, Index tokens) {
  if (frames <= 0 || tokens <= 0) throw ShapeError("attention_groups: empty token grid");
  std::vector<AttentionGroup> groups;
  switch (mode) {
    case AttentionMode::Self:
      for (Index f = 0; f < frames; ++f) {
        auto cols = frame_range(f, tokens);
        groups.push_back({cols, cols});
      }
      break;
    case AttentionMode::SparseCausal:
      for (Index f = 0; f < frames; ++f) {
        AttentionGroup g{frame_range(f, tokens), frame_range(0, tokens)};
        if (f > 0) {
          auto prev = frame_range(f - 1, tokens);
          g.keys.insert(g.keys.end(), prev.begin(), prev.end());
        }
        groups.push_back(std::move(g));
      }
      break;
    case AttentionMode::TemporalOnly:
      for (Index n = 0; n < tokens; ++n) {
        AttentionGroup g;
        for (Index f = 0; f < frames; ++f) g.queries.push_back(f * tokens + n);
        g.keys = g.queries;
        groups.push_back(std::move(g));
      }
      break;
    case AttentionMode::SpatialTemporal: {
      std::vector<Index> all(static_cast<std::size_t>(frames * tokens));
      std::iota(all.begin(), all.end(), Index{0});
      groups.push_back({all, all});
      break;
    }
  }
  return groups;
}

void CrossAttnMaps::insert(int timestep, int layer, LayerMap map) {
  auto [it, inserted] = maps_.emplace(Key{timestep, layer}, std::move(map));
  if (!inserted) {
    throw DomainError("cross-attention map already recorded for timestep " +
                      std::to_string(timestep) + ", layer " + std::to_string(layer));
  }
}

const LayerMap* CrossAttnMaps::find(int timestep, int layer) const {
  auto it = maps_.find(Key{timestep, layer});
  return it == maps_.end() ? nullptr : &it->second;
}

void record_cross_attention(AttentionContext& ctx, int layer_id, const LayerMap& map) {
  if (!ctx.record_maps) throw DomainError("record_cross_attention: recording is disabled");
  ctx.recorded.insert(ctx.timestep, layer_id, map);
  ++ctx.maps_recorded;
}

LayerMap inject_cross_attention(AttentionContext& ctx, int layer_id, const LayerMap& fresh) {
  if (!ctx.injecting_now()) return fresh;
  const LayerMap* injected = ctx.injected_maps->find(ctx.timestep, layer_id);
  if (!injected) return fresh;
  if (injected->frames != fresh.frames || injected->heads != fresh.heads ||
      injected->tokens != fresh.tokens) {
    throw ShapeError("injected cross-attention map does not match layer " +
                     std::to_string(layer_id));
  }
  ++ctx.injections_fired;
  if (injected->text_length == fresh.text_length) return *injected;
  if (ctx.token_mismatch == TokenMismatch::Reject) {
    throw ShapeError("injected cross-attention map has text length " +
                     std::to_string(injected->text_length) + ", layer expects " +
                     std::to_string(fresh.text_length));
  }
  LayerMap mixed = fresh;
  const Index overlap = std::min(injected->text_length, fresh.text_length);
  for (std::size_t b = 0; b < mixed.blocks.size(); ++b) {
    auto& blk = mixed.blocks[b];
    blk.leftCols(overlap) = injected->blocks[b].leftCols(overlap);
    for (Index r = 0; r < blk.rows(); ++r) {
      const float s = blk.row(r).sum();
      if (s > 0.0f) blk.row(r) /= s;
    }
  }
  return mixed;
}

std::vector<AttentionMode> default_attention_modes(int down_layers, int mid_layers,
                                                   int up_layers) {
  std::vector<AttentionMode> modes;
  for (int stage_size : {down_layers, mid_layers, up_layers}) {
    for (int i = 0; i < stage_size; ++i) {
      modes.push_back(i == 0 ? AttentionMode::SpatialTemporal : AttentionMode::SparseCausal);
    }
  }
  return modes;
}

}  // namespace xfedit
