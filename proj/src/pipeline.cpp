#include "xfedit/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "xfedit/errors.hpp"

namespace xfedit {

void EditConfig::validate() const {
  if (!(guidance_scale >= 1.0) || !std::isfinite(guidance_scale))
    throw ConfigError("guidance_scale must be finite and at least 1");
  if (num_steps < 2) throw ConfigError("num_steps must be at least 2");
  if (!(tau_m >= 0.0 && tau_m <= 1.0)) throw ConfigError("tau_m must lie in [0, 1]");
  if (!(tau_null >= 0.0 && tau_null <= 1.0)) throw ConfigError("tau_null must lie in [0, 1]");
}

int active_steps(double tau, int num_steps) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw DomainError("active_steps: tau outside [0, 1]");
  const int n = static_cast<int>(std::ceil(tau * num_steps - 1e-9));
  return std::clamp(n, 0, num_steps);
}

Video cfg_predict(const NoisePredictor& model, const Video& x_t, int t, const TextEmbedding& cond,
                  const TextEmbedding& null_embedding, double guidance_scale,
                  AttentionContext& ctx) {
  ctx.branch = Branch::Conditional;
  Video eps_c = model.predict(x_t, t, cond, ctx).eps;
  if (guidance_scale == 1.0) return eps_c;
  ctx.branch = Branch::Unconditional;
  const Video eps_u = model.predict(x_t, t, null_embedding, ctx).eps;
  ctx.branch = Branch::Conditional;
  const float w = static_cast<float>(guidance_scale);
  return Video(
      (eps_u.data().array() + w * (eps_c.data().array() - eps_u.data().array())).matrix(),
      x_t.frames(), x_t.height(), x_t.width());
}

namespace {

AttentionContext run_context(const NoisePredictor& model, const std::vector<AttentionMode>& modes) {
  return modes.empty() ? model.make_context() : AttentionContext(modes);
}

void check_finite(const Video& x, int t, const char* what) {
  if (!x.data().allFinite())
    throw NumericalError(std::string(what) + ": non-finite latent at t=" + std::to_string(t));
}

}  // namespace

Reconstruction reconstruct(const InversionRecord& inv, const NoisePredictor& model,
                           const Schedule& schedule, double guidance_scale,
                           const std::vector<AttentionMode>& modes) {
  inv.validate(schedule);
  AttentionContext ctx = run_context(model, modes);
  ctx.record_maps = true;
  Video x = inv.noise();
  for (int k = 0; k < schedule.num_inference_steps(); ++k) {
    const int t = schedule.inference_steps[static_cast<std::size_t>(k)];
    const Video eps = cfg_predict(model, x, t, inv.source_embedding,
                                  inv.null_embeddings[static_cast<std::size_t>(k)],
                                  guidance_scale, ctx);
    x = ddim_step(x, eps, t, schedule.previous_timestep(k), schedule);
    check_finite(x, t, "reconstruct");
  }
  return {std::move(x), std::move(ctx.recorded)};
}

EditResult edit(const InversionRecord& inv, const CrossAttnMaps& maps, const EditPrompts& prompts,
                const EditConfig& config, const NoisePredictor& model, const Schedule& schedule,
                const std::vector<AttentionMode>& modes, bool keep_latents) {
  config.validate();
  inv.validate(schedule);
  const int s = schedule.num_inference_steps();
  if (config.num_steps != s)
    throw DomainError("edit: num_steps " + std::to_string(config.num_steps) +
                      " does not match the schedule's " + std::to_string(s));
  if (!prompts.target.same_shape(inv.source_embedding) ||
      !prompts.empty.same_shape(inv.source_embedding))
    throw ShapeError("edit: prompt embeddings differ in shape from the source embedding");

  const int inject_steps = active_steps(config.tau_m, s);
  const int null_steps = active_steps(config.tau_null, s);
  for (int k = 0; k < inject_steps; ++k) {
    const int t = schedule.inference_steps[static_cast<std::size_t>(k)];
    for (int layer = 0; layer < model.cross_attention_layers(); ++layer)
      if (!maps.contains(t, layer))
        throw InputError("edit: no recorded map for t=" + std::to_string(t) + " layer " +
                         std::to_string(layer));
  }

  AttentionContext ctx = run_context(model, modes);
  ctx.record_maps = true;
  ctx.injected_maps = std::make_shared<const CrossAttnMaps>(maps);
  ctx.inject_unconditional = config.inject_unconditional;

  EditResult result;
  Video x = inv.noise();
  for (int k = 0; k < s; ++k) {
    const int t = schedule.inference_steps[static_cast<std::size_t>(k)];
    ctx.injection_active = k < inject_steps;
    const TextEmbedding& null_embedding =
        k < null_steps ? inv.null_embeddings[static_cast<std::size_t>(k)] : prompts.empty;
    const long before = ctx.injections_fired;
    const Video eps =
        cfg_predict(model, x, t, prompts.target, null_embedding, config.guidance_scale, ctx);
    result.injection_steps.push_back(static_cast<int>(ctx.injections_fired - before));
    x = ddim_step(x, eps, t, schedule.previous_timestep(k), schedule);
    check_finite(x, t, "edit");
    if (keep_latents) result.latents.push_back(x);
  }
  result.edited_video = std::move(x);
  result.recorded_maps = std::move(ctx.recorded);
  result.injections_fired = ctx.injections_fired;
  return result;
}

PipelineRun run_edit_pipeline(const Video& video, const std::string& source_prompt,
                              const TextEmbedding& source, const EditPrompts& prompts,
                              const EditConfig& config, const NullTextOptions& null_options,
                              const NoisePredictor& model, const Schedule& schedule,
                              const std::vector<AttentionMode>& modes) {
  config.validate();
  PipelineRun run;
  run.inversion = invert_video(video, source_prompt, source, prompts.empty, model, schedule,
                               null_options, modes);
  run.reconstruction =
      reconstruct(run.inversion, model, schedule, config.guidance_scale, modes);
  run.edit = edit(run.inversion, run.reconstruction.maps, prompts, config, model, schedule, modes);
  run.edit.reconstruction = run.reconstruction.video;
  return run;
}

}  // namespace xfedit
