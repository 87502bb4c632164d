#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xfedit/denoiser.hpp"
#include "xfedit/schedule.hpp"

namespace xfedit {

/// Inversion trajectory of one video plus its per-step null-text embeddings.
///
/// trajectory[0] is the clean video and trajectory[k] (k >= 1) the latent at
/// schedule.inference_steps[S - k], so trajectory.back() is the starting
/// noise for sampling. null_embeddings[k] belongs to sampling step k, where
/// step 0 runs at t = inference_steps[0] (the noisiest).
struct InversionRecord {
  std::vector<Video> trajectory;
  std::vector<TextEmbedding> null_embeddings;
  std::string source_prompt;
  TextEmbedding source_embedding;
  std::vector<double> initial_loss;    // objective before optimising step k
  std::vector<double> per_step_loss;   // objective after optimising step k
  std::uint64_t schedule_hash = 0;

  int steps() const { return static_cast<int>(trajectory.size()) - 1; }
  const Video& noise() const { return trajectory.back(); }
  /// Inversion latent that sampling step k should land on.
  const Video& target_for_step(int k) const {
    return trajectory[trajectory.size() - 2 - static_cast<std::size_t>(k)];
  }
  void validate(const Schedule& schedule) const;
};

/// DDIM inversion with guidance 1. Returns S + 1 latents, starting with
/// `video` itself. Each step evaluates eps at the target timestep on the
/// current latent.
std::vector<Video> ddim_invert(const Video& video, const TextEmbedding& cond,
                               const NoisePredictor& model, const Schedule& schedule,
                               const std::vector<AttentionMode>& modes = {});

struct NullTextOptions {
  int inner_steps = 1;
  double step_size = 1e-2;
  double guidance_scale = 7.5;
  double early_stop = 1e-5;
  /// Rejected updates halve the step at most this many times per inner step.
  int max_halvings = 6;

  bool operator==(const NullTextOptions&) const = default;
};

struct NullTextResult {
  std::vector<TextEmbedding> null_embeddings;
  std::vector<double> initial_loss;
  std::vector<double> per_step_loss;
};

/// Per-timestep optimisation of the unconditional embedding so that guided
/// sampling from trajectory.back() tracks the inversion trajectory. One
/// embedding is shared by all frames; the objective sums over all of them.
NullTextResult null_text_optimize(const std::vector<Video>& trajectory, const TextEmbedding& cond,
                                  const TextEmbedding& initial_null, const NoisePredictor& model,
                                  const Schedule& schedule, const NullTextOptions& options,
                                  const std::vector<AttentionMode>& modes = {});

/// ddim_invert followed by null_text_optimize.
InversionRecord invert_video(const Video& video, const std::string& source_prompt,
                             const TextEmbedding& cond, const TextEmbedding& empty,
                             const NoisePredictor& model, const Schedule& schedule,
                             const NullTextOptions& options,
                             const std::vector<AttentionMode>& modes = {});

}  // namespace xfedit
