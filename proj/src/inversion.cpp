#include "xfedit/inversion.hpp"

#include <cmath>
#include <string>

#include "xfedit/errors.hpp"
#include "xfedit/optim.hpp"

namespace xfedit {

namespace {

AttentionContext branch_context(const NoisePredictor& model,
                                const std::vector<AttentionMode>& modes, Branch branch) {
  AttentionContext ctx = modes.empty() ? model.make_context() : AttentionContext(modes);
  ctx.branch = branch;
  return ctx;
}

double squared_error(const Video& a, const Video& b) {
  return (a.data().cast<double>() - b.data().cast<double>()).squaredNorm();
}

}  // namespace

void InversionRecord::validate(const Schedule& schedule) const {
  const int s = schedule.num_inference_steps();
  if (static_cast<int>(trajectory.size()) != s + 1)
    throw DomainError("inversion record: trajectory has " + std::to_string(trajectory.size()) +
                      " latents, schedule needs " + std::to_string(s + 1));
  if (static_cast<int>(null_embeddings.size()) != s)
    throw DomainError("inversion record: " + std::to_string(null_embeddings.size()) +
                      " null embeddings for " + std::to_string(s) + " steps");
  if (schedule_hash != schedule.hash())
    throw DomainError("inversion record: schedule mismatch");
  for (const auto& x : trajectory) require_same_shape(x, trajectory.front(), "inversion record");
  for (const auto& e : null_embeddings)
    if (!e.same_shape(source_embedding))
      throw ShapeError("inversion record: null embedding shape differs from source embedding");
  for (const auto& x : trajectory)
    if (!x.data().allFinite()) throw NumericalError("inversion record: non-finite latent");
}

std::vector<Video> ddim_invert(const Video& video, const TextEmbedding& cond,
                               const NoisePredictor& model, const Schedule& schedule,
                               const std::vector<AttentionMode>& modes) {
  if (video.frames() < 1) throw InputError("ddim_invert: video has no frames");
  if (!video.data().allFinite()) throw NumericalError("ddim_invert: non-finite input video");
  const int s = schedule.num_inference_steps();
  AttentionContext ctx = branch_context(model, modes, Branch::Conditional);
  std::vector<Video> traj;
  traj.reserve(static_cast<std::size_t>(s) + 1);
  traj.push_back(video);
  for (int k = 0; k < s; ++k) {
    const int lower = k == 0 ? 0 : schedule.inference_steps[static_cast<std::size_t>(s - k)];
    const int higher = schedule.inference_steps[static_cast<std::size_t>(s - 1 - k)];
    const Video eps = model.predict(traj.back(), higher, cond, ctx).eps;
    traj.push_back(ddim_inverse_step(traj.back(), eps, lower, higher, schedule));
    if (!traj.back().data().allFinite())
      throw NumericalError("ddim_invert: non-finite latent at t=" + std::to_string(higher));
  }
  return traj;
}

NullTextResult null_text_optimize(const std::vector<Video>& trajectory, const TextEmbedding& cond,
                                  const TextEmbedding& initial_null, const NoisePredictor& model,
                                  const Schedule& schedule, const NullTextOptions& options,
                                  const std::vector<AttentionMode>& modes) {
  const int s = schedule.num_inference_steps();
  if (static_cast<int>(trajectory.size()) != s + 1)
    throw DomainError("null_text_optimize: trajectory length does not match the schedule");
  if (options.inner_steps < 0 || options.step_size <= 0.0 || options.max_halvings < 0)
    throw DomainError("null_text_optimize: bad options");
  if (!initial_null.same_shape(cond))
    throw ShapeError("null_text_optimize: null and conditional embeddings differ in shape");

  AttentionContext cond_ctx = branch_context(model, modes, Branch::Conditional);
  AttentionContext null_ctx = branch_context(model, modes, Branch::Unconditional);
  const float w = static_cast<float>(options.guidance_scale);

  NullTextResult out;
  TextEmbedding null_embedding = initial_null;
  Video x = trajectory.back();

  for (int k = 0; k < s; ++k) {
    const int t = schedule.inference_steps[static_cast<std::size_t>(k)];
    const int t_prev = schedule.previous_timestep(k);
    const Video& target = trajectory[trajectory.size() - 2 - static_cast<std::size_t>(k)];
    const auto c = ddim_step_coefficients(schedule.alpha_bar(t), schedule.alpha_bar(t_prev));
    const Video eps_c = model.predict(x, t, cond, cond_ctx).eps;

    auto guided = [&](const Video& eps_u) {
      return Video((eps_u.data().array() + w * (eps_c.data().array() - eps_u.data().array()))
                       .matrix(),
                   x.frames(), x.height(), x.width());
    };
    auto loss_of = [&](const Video& eps_u) {
      return squared_error(target, ddim_step(x, guided(eps_u), t, t_prev, schedule));
    };
    const auto upstream = [&](const Video& eps_u) {
      const Video r(target.data() - ddim_step(x, guided(eps_u), t, t_prev, schedule).data(),
                    x.frames(), x.height(), x.width());
      const float scale = static_cast<float>(-2.0 * c.eps_scale * (1.0 - options.guidance_scale));
      return Video((scale * r.data().array()).matrix(), x.frames(), x.height(), x.width());
    };

    Adam adam({null_embedding.tokens()});
    Video eps_u;
    double loss = 0.0;
    bool have_eps = false;
    for (int i = 0; i < options.inner_steps; ++i) {
      auto fg = model.predict_with_cond_gradient(x, t, null_embedding, null_ctx, upstream);
      if (!fg) throw ConfigError("null_text_optimize: model does not provide gradients");
      eps_u = std::move(fg->eps);
      have_eps = true;
      loss = loss_of(eps_u);
      if (i == 0) out.initial_loss.push_back(loss);
      if (loss < options.early_stop) break;

      const std::vector<MatrixX<float>> grads{fg->grad.tokens()};
      double lr = options.step_size;
      for (int h = 0; h <= options.max_halvings; ++h, lr *= 0.5) {
        TextEmbedding candidate(null_embedding.tokens() - adam.propose(grads, lr)[0]);
        Video cand_eps = model.predict(x, t, candidate, null_ctx).eps;
        const double cand_loss = loss_of(cand_eps);
        if (std::isfinite(cand_loss) && cand_loss <= loss) {
          adam.commit(grads);
          null_embedding = std::move(candidate);
          eps_u = std::move(cand_eps);
          loss = cand_loss;
          break;
        }
      }
    }
    if (!have_eps) {
      eps_u = model.predict(x, t, null_embedding, null_ctx).eps;
      loss = loss_of(eps_u);
      out.initial_loss.push_back(loss);
    }
    if (!std::isfinite(loss))
      throw NumericalError("null_text_optimize: non-finite loss at t=" + std::to_string(t));
    out.per_step_loss.push_back(loss);
    out.null_embeddings.push_back(null_embedding);
    x = ddim_step(x, guided(eps_u), t, t_prev, schedule);
  }
  return out;
}

InversionRecord invert_video(const Video& video, const std::string& source_prompt,
                             const TextEmbedding& cond, const TextEmbedding& empty,
                             const NoisePredictor& model, const Schedule& schedule,
                             const NullTextOptions& options,
                             const std::vector<AttentionMode>& modes) {
  InversionRecord rec;
  rec.trajectory = ddim_invert(video, cond, model, schedule, modes);
  auto opt = null_text_optimize(rec.trajectory, cond, empty, model, schedule, options, modes);
  rec.null_embeddings = std::move(opt.null_embeddings);
  rec.initial_loss = std::move(opt.initial_loss);
  rec.per_step_loss = std::move(opt.per_step_loss);
  rec.source_prompt = source_prompt;
  rec.source_embedding = cond;
  rec.schedule_hash = schedule.hash();
  return rec;
}

}  // namespace xfedit
