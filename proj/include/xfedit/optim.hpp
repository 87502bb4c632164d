#pragma once

#include <cmath>
#include <vector>

#include "xfedit/tensor.hpp"

namespace xfedit {

/// Adam with bias correction over a list of dense tensors.
class Adam {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam() = default;
  explicit Adam(const std::vector<MatrixX<float>>& like) : Adam(like, Options{}) {}
  Adam(const std::vector<MatrixX<float>>& like, Options options) : options_(options) {
    for (const auto& t : like) {
      m_.push_back(MatrixX<float>::Zero(t.rows(), t.cols()));
      v_.push_back(MatrixX<float>::Zero(t.rows(), t.cols()));
    }
  }

  long steps() const { return step_; }

  /// The update a step with `grads` would apply (to be subtracted), without
  /// committing the moment estimates.
  std::vector<MatrixX<float>> propose(const std::vector<MatrixX<float>>& grads, double lr) const {
    std::vector<MatrixX<float>> updates;
    updates.reserve(grads.size());
    const long t = step_ + 1;
    const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < grads.size(); ++i) {
      const auto m = options_.beta1 * m_[i].array().cast<double>() +
                     (1.0 - options_.beta1) * grads[i].array().cast<double>();
      const auto v = options_.beta2 * v_[i].array().cast<double>() +
                     (1.0 - options_.beta2) * grads[i].array().cast<double>().square();
      updates.push_back(
          (lr * (m / c1) / ((v / c2).sqrt() + options_.eps)).cast<float>().matrix());
    }
    return updates;
  }

  /// Commit the moment estimates for `grads`.
  void commit(const std::vector<MatrixX<float>>& grads) {
    for (std::size_t i = 0; i < grads.size(); ++i) {
      m_[i] = (options_.beta1 * m_[i].array() + (1.0 - options_.beta1) * grads[i].array())
                  .matrix();
      v_[i] = (options_.beta2 * v_[i].array() +
               (1.0 - options_.beta2) * grads[i].array().square())
                  .matrix();
    }
    ++step_;
  }

  /// propose + commit + apply.
  void step(std::vector<MatrixX<float>>& params, const std::vector<MatrixX<float>>& grads,
            double lr) {
    const auto updates = propose(grads, lr);
    commit(grads);
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= updates[i];
  }

 private:
  Options options_;
  std::vector<MatrixX<float>> m_, v_;
  long step_ = 0;
};

}  // namespace xfedit
