#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "xfedit/tensor.hpp"
#include "xfedit/toyworld.hpp"
#include "xfedit/unet.hpp"

namespace xfedit {

/// Maps each frame of a [0, 1] video to a feature vector (D x F result).
class FrameEncoder {
 public:
  virtual ~FrameEncoder() = default;
  virtual MatrixX<double> encode(const Video& video) const = 0;
};

/// Fixed Gaussian projection of the flattened frame. Mostly for tests: it is
/// linear, so negated frames give negated features.
class LinearFrameEncoder final : public FrameEncoder {
 public:
  LinearFrameEncoder(Index channels, Index height, Index width, Index features = 64,
                     std::uint64_t seed = 0);
  MatrixX<double> encode(const Video& video) const override;

 private:
  MatrixX<double> projection_;  // features x (C * H * W)
  Index channels_, height_, width_;
};

/// Average-pooled deepest encoder activation of a trained ToyUNet at t = 1
/// with the empty prompt and per-frame attention.
class UNetFrameEncoder final : public FrameEncoder {
 public:
  UNetFrameEncoder(std::shared_ptr<const ToyUNet> model, TextEmbedding empty);
  MatrixX<double> encode(const Video& video) const override;

 private:
  std::shared_ptr<const ToyUNet> model_;
  TextEmbedding empty_;
};

/// Mean cosine similarity of consecutive frame features. Two zero feature
/// vectors count as identical; one zero vector scores 0.
double frame_consistency(const Video& video, const FrameEncoder& encoder);

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

struct ReconstructionMetrics {
  double mse = 0.0;
  double psnr = kInfinitePsnr;        // from the overall mse
  std::vector<double> psnr_per_frame;
  double psnr_mean = kInfinitePsnr;   // mean of psnr_per_frame
};

double psnr_from_mse(double mse);
ReconstructionMetrics reconstruction_metrics(const Video& original, const Video& reconstructed);

struct EditSuccess {
  double target_gain = 0.0;     // mean in-mask increase of the target channel
  double source_drop = 0.0;     // mean in-mask decrease of the source channel
  double background_mse = 0.0;  // mse over all channels outside the mask
};

struct EditThresholds {
  double min_target_gain = 0.0;
  double min_source_drop = 0.0;
  double max_background_mse = 0.0;

  bool passes(const EditSuccess& e) const {
    return e.target_gain >= min_target_gain && e.source_drop >= min_source_drop &&
           e.background_mse <= max_background_mse;
  }
};

/// Channel carrying a primary colour (red 0, green 1, blue 2). Throws
/// DomainError for yellow.
int color_channel(Color c);

/// `mask` is F x 1 x H x W with values in {0, 1}. Throws InputError for an
/// empty mask.
EditSuccess edit_success(const Video& original, const Video& edited, const Video& mask,
                         int source_channel, int target_channel);

struct MetricReport {
  std::optional<ReconstructionMetrics> reconstruction;
  std::optional<double> frame_consistency;
  std::optional<EditSuccess> edit;

  /// Sorted keys; infinite PSNR is written as the string "inf".
  nlohmann::json to_json() const;
};

}  // namespace xfedit
