#include "xfedit/schedule.hpp"

#include <string>

#include "xfedit/hash.hpp"

namespace xfedit {

double Schedule::alpha_bar(int t) const {
  if (t < 0 || t >= static_cast<int>(alpha_bars.size())) {
    throw DomainError("timestep " + std::to_string(t) + " outside schedule");
  }
  return alpha_bars[static_cast<std::size_t>(t)];
}

int Schedule::previous_timestep(int k) const {
  if (k < 0 || k >= num_inference_steps()) throw DomainError("inference step index out of range");
  return k + 1 < num_inference_steps() ? inference_steps[static_cast<std::size_t>(k) + 1] : 0;
}

std::uint64_t Schedule::hash() const {
  Fnv1a h;
  h.update_pod(num_train_steps);
  for (double b : betas) h.update_pod(b);
  for (int t : inference_steps) h.update_pod(t);
  return h.digest();
}

Schedule make_schedule(int num_train_steps, double beta_start, double beta_end,
                       int num_inference_steps) {
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw DomainError("make_schedule: need 0 < beta_start <= beta_end < 1");
  }
  if (num_inference_steps < 2 || num_inference_steps > num_train_steps) {
    throw DomainError("make_schedule: need 2 <= num_inference_steps <= num_train_steps");
  }
  Schedule s;
  s.num_train_steps = num_train_steps;
  s.betas.resize(static_cast<std::size_t>(num_train_steps));
  s.alpha_bars.resize(static_cast<std::size_t>(num_train_steps) + 1);
  s.alpha_bars[0] = 1.0;
  for (int i = 0; i < num_train_steps; ++i) {
    const double frac =
        num_train_steps == 1 ? 0.0 : static_cast<double>(i) / (num_train_steps - 1);
    const double beta = beta_start + (beta_end - beta_start) * frac;
    s.betas[static_cast<std::size_t>(i)] = beta;
    s.alpha_bars[static_cast<std::size_t>(i) + 1] =
        s.alpha_bars[static_cast<std::size_t>(i)] * (1.0 - beta);
  }
  // Even spacing, last step at t = 1.
  const int stride = num_train_steps / num_inference_steps;
  s.inference_steps.resize(static_cast<std::size_t>(num_inference_steps));
  for (int k = 0; k < num_inference_steps; ++k) {
    s.inference_steps[static_cast<std::size_t>(k)] = 1 + (num_inference_steps - 1 - k) * stride;
  }
  return s;
}

namespace detail {
void check_step_order(int t, int t_prev, const Schedule& schedule) {
  if (!(t > t_prev && t_prev >= 0)) {
    throw DomainError("DDIM step requires t > t_prev >= 0 (got t=" + std::to_string(t) +
                      ", t_prev=" + std::to_string(t_prev) + ")");
  }
  if (t > schedule.num_train_steps) throw DomainError("timestep beyond schedule");
}
}  // namespace detail

}  // namespace xfedit
