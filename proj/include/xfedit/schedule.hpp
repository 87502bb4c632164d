#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "xfedit/tensor.hpp"

namespace xfedit {

/// Discrete noise schedule plus the descending timestep subsequence the
/// deterministic sampler walks.
///
/// `alpha_bars` has num_train_steps + 1 entries: index 0 is the clean-data
/// end (exactly 1) and index t is prod_{s<=t}(1 - beta_s). `betas[t-1]` is the
/// variance added at step t.
struct Schedule {
  int num_train_steps = 0;
  std::vector<double> betas;
  std::vector<double> alpha_bars;
  std::vector<int> inference_steps;  // strictly decreasing, last element is 1

  double alpha_bar(int t) const;
  int num_inference_steps() const { return static_cast<int>(inference_steps.size()); }
  /// Timestep the sampler steps to after inference_steps[k] (0 after the last).
  int previous_timestep(int k) const;
  /// Stable 64-bit digest of betas and the inference steps.
  std::uint64_t hash() const;
};

Schedule make_schedule(int num_train_steps, double beta_start, double beta_end,
                       int num_inference_steps);

/// x_prev = a * x_t + b * eps for the eta = 0 sampler.
struct DdimCoefficients {
  double x_scale;
  double eps_scale;
};

inline DdimCoefficients ddim_step_coefficients(double alpha_bar_t, double alpha_bar_prev) {
  const double a = std::sqrt(alpha_bar_prev) / std::sqrt(alpha_bar_t);
  return {a, std::sqrt(1.0 - alpha_bar_prev) - a * std::sqrt(1.0 - alpha_bar_t)};
}

namespace detail {
void check_step_order(int t, int t_prev, const Schedule& schedule);
}

/// Deterministic denoising step t -> t_prev.
template <typename Scalar>
VideoTensor<Scalar> ddim_step(const VideoTensor<Scalar>& x_t, const VideoTensor<Scalar>& eps,
                              int t, int t_prev, const Schedule& schedule) {
  require_same_shape(x_t, eps, "ddim_step");
  detail::check_step_order(t, t_prev, schedule);
  const auto c = ddim_step_coefficients(schedule.alpha_bar(t), schedule.alpha_bar(t_prev));
  return VideoTensor<Scalar>(
      (Scalar(c.x_scale) * x_t.data().array() + Scalar(c.eps_scale) * eps.data().array())
          .matrix(),
      x_t.frames(), x_t.height(), x_t.width());
}

/// Exact algebraic inverse of ddim_step under the same eps: t_prev -> t.
template <typename Scalar>
VideoTensor<Scalar> ddim_inverse_step(const VideoTensor<Scalar>& x_t_prev,
                                      const VideoTensor<Scalar>& eps, int t_prev, int t,
                                      const Schedule& schedule) {
  require_same_shape(x_t_prev, eps, "ddim_inverse_step");
  detail::check_step_order(t, t_prev, schedule);
  const auto c = ddim_step_coefficients(schedule.alpha_bar(t_prev), schedule.alpha_bar(t));
  return VideoTensor<Scalar>((Scalar(c.x_scale) * x_t_prev.data().array() +
                              Scalar(c.eps_scale) * eps.data().array())
                                 .matrix(),
                             x_t_prev.frames(), x_t_prev.height(), x_t_prev.width());
}

/// Sample of q(x_t | x_0).
template <typename Scalar>
VideoTensor<Scalar> add_noise(const VideoTensor<Scalar>& x_0, const VideoTensor<Scalar>& noise,
                              int t, const Schedule& schedule) {
  require_same_shape(x_0, noise, "add_noise");
  const double ab = schedule.alpha_bar(t);
  return VideoTensor<Scalar>((Scalar(std::sqrt(ab)) * x_0.data().array() +
                              Scalar(std::sqrt(1.0 - ab)) * noise.data().array())
                                 .matrix(),
                             x_0.frames(), x_0.height(), x_0.width());
}

}  // namespace xfedit
