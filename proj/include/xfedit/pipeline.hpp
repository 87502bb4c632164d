#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xfedit/denoiser.hpp"
#include "xfedit/inversion.hpp"
#include "xfedit/schedule.hpp"

namespace xfedit {

struct EditConfig {
  std::string target_prompt;
  double guidance_scale = 7.5;
  int num_steps = 50;
  double tau_m = 0.8;     // fraction of steps with cross-attention injection
  double tau_null = 0.5;  // fraction of steps using the optimised null embeddings
  std::uint64_t seed = 0;
  bool inject_unconditional = false;

  void validate() const;
  bool operator==(const EditConfig&) const = default;
};

/// Number of leading sampling steps a threshold covers: ceil(tau * S).
int active_steps(double tau, int num_steps);

/// eps_null + w * (eps_cond - eps_null). With w == 1 only the conditional
/// branch runs. The conditional branch sees ctx.branch == Conditional.
Video cfg_predict(const NoisePredictor& model, const Video& x_t, int t, const TextEmbedding& cond,
                  const TextEmbedding& null_embedding, double guidance_scale,
                  AttentionContext& ctx);

struct Reconstruction {
  Video video;
  CrossAttnMaps maps;
};

/// Reference pass: guided sampling from the inversion noise with the source
/// prompt and the optimised null embeddings, recording every conditional
/// cross-attention map.
Reconstruction reconstruct(const InversionRecord& inv, const NoisePredictor& model,
                           const Schedule& schedule, double guidance_scale,
                           const std::vector<AttentionMode>& modes = {});

struct EditResult {
  Video edited_video;
  Video reconstruction;  // filled by run_edit_pipeline
  CrossAttnMaps recorded_maps;
  std::vector<Video> latents;  // X_hat per step when requested
  long injections_fired = 0;
  std::vector<int> injection_steps;  // injections fired at each sampling step
};

struct EditPrompts {
  TextEmbedding target;
  TextEmbedding empty;
};

/// Guided edit pass: target prompt, recorded maps injected for the first
/// ceil(tau_m * S) steps, optimised null embeddings for the first
/// ceil(tau_null * S) steps and the empty embedding afterwards.
EditResult edit(const InversionRecord& inv, const CrossAttnMaps& maps, const EditPrompts& prompts,
                const EditConfig& config, const NoisePredictor& model, const Schedule& schedule,
                const std::vector<AttentionMode>& modes = {}, bool keep_latents = false);

struct PipelineRun {
  InversionRecord inversion;
  Reconstruction reconstruction;
  EditResult edit;
};

/// Inversion, reference pass and edit on a video in [-1, 1] model range.
PipelineRun run_edit_pipeline(const Video& video, const std::string& source_prompt,
                              const TextEmbedding& source, const EditPrompts& prompts,
                              const EditConfig& config, const NullTextOptions& null_options,
                              const NoisePredictor& model, const Schedule& schedule,
                              const std::vector<AttentionMode>& modes = {});

}  // namespace xfedit
