#include "xfedit/metrics.hpp"

#include <cmath>
#include <random>

#include "xfedit/errors.hpp"

namespace xfedit {

LinearFrameEncoder::LinearFrameEncoder(Index channels, Index height, Index width, Index features,
                                       std::uint64_t seed)
    : projection_(features, channels * height * width),
      channels_(channels),
      height_(height),
      width_(width) {
  if (features < 1 || channels < 1 || height < 1 || width < 1)
    throw DomainError("LinearFrameEncoder: sizes must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (Index j = 0; j < projection_.cols(); ++j)
    for (Index i = 0; i < projection_.rows(); ++i) projection_(i, j) = nd(rng);
}

MatrixX<double> LinearFrameEncoder::encode(const Video& video) const {
  if (video.channels() != channels_ || video.height() != height_ || video.width() != width_)
    throw ShapeError("LinearFrameEncoder: unexpected frame shape " + video.shape_string());
  const Index per_frame = channels_ * height_ * width_;
  MatrixX<double> flat(per_frame, video.frames());
  for (Index f = 0; f < video.frames(); ++f) {
    const MatrixX<float> fr = video.frame(f);
    flat.col(f) = Eigen::Map<const Eigen::VectorXf>(fr.data(), per_frame).cast<double>();
  }
  return projection_ * flat;
}

UNetFrameEncoder::UNetFrameEncoder(std::shared_ptr<const ToyUNet> model, TextEmbedding empty)
    : model_(std::move(model)), empty_(std::move(empty)) {
  if (!model_) throw DomainError("UNetFrameEncoder: null model");
}

MatrixX<double> UNetFrameEncoder::encode(const Video& video) const {
  return model_->encoder_features(to_model_range(video), 1, empty_.tokens()).cast<double>();
}

double frame_consistency(const Video& video, const FrameEncoder& encoder) {
  if (video.frames() < 2) throw DomainError("frame_consistency: needs at least two frames");
  const MatrixX<double> feats = encoder.encode(video);
  if (feats.cols() != video.frames()) throw ShapeError("frame_consistency: encoder output");
  double total = 0.0;
  for (Index f = 0; f + 1 < feats.cols(); ++f) {
    const auto a = feats.col(f);
    const auto b = feats.col(f + 1);
    const double na = a.norm(), nb = b.norm();
    double cos;
    if (a == b)
      cos = 1.0;
    else if (na == 0.0 || nb == 0.0)
      cos = 0.0;
    else
      cos = std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
    total += cos;
  }
  return total / static_cast<double>(feats.cols() - 1);
}

double psnr_from_mse(double mse) {
  if (mse < 0.0 || !std::isfinite(mse)) throw DomainError("psnr_from_mse: bad mse");
  return mse == 0.0 ? kInfinitePsnr : 10.0 * std::log10(1.0 / mse);
}

ReconstructionMetrics reconstruction_metrics(const Video& original, const Video& reconstructed) {
  require_same_shape(original, reconstructed, "reconstruction_metrics");
  ReconstructionMetrics m;
  const MatrixX<double> diff =
      original.data().cast<double>() - reconstructed.data().cast<double>();
  m.mse = diff.squaredNorm() / static_cast<double>(diff.size());
  m.psnr = psnr_from_mse(m.mse);
  const Index pixels = original.height() * original.width();
  double sum = 0.0;
  for (Index f = 0; f < original.frames(); ++f) {
    const auto block = diff.middleCols(f * pixels, pixels);
    const double p = psnr_from_mse(block.squaredNorm() / static_cast<double>(block.size()));
    m.psnr_per_frame.push_back(p);
    sum += p;
  }
  m.psnr_mean = sum / static_cast<double>(original.frames());
  return m;
}

int color_channel(Color c) {
  switch (c) {
    case Color::Red: return 0;
    case Color::Green: return 1;
    case Color::Blue: return 2;
    case Color::Yellow: break;
  }
  throw DomainError("color_channel: " + to_string(c) + " has no single channel");
}

EditSuccess edit_success(const Video& original, const Video& edited, const Video& mask,
                         int source_channel, int target_channel) {
  require_same_shape(original, edited, "edit_success");
  if (mask.channels() != 1 || mask.frames() != original.frames() ||
      mask.height() != original.height() || mask.width() != original.width())
    throw ShapeError("edit_success: mask shape " + mask.shape_string());
  if (source_channel < 0 || source_channel >= original.channels() || target_channel < 0 ||
      target_channel >= original.channels())
    throw DomainError("edit_success: channel out of range");

  double inside = 0.0, gain = 0.0, drop = 0.0, bg = 0.0, outside = 0.0;
  for (Index f = 0; f < original.frames(); ++f)
    for (Index y = 0; y < original.height(); ++y)
      for (Index x = 0; x < original.width(); ++x) {
        if (mask(f, 0, y, x) > 0.5f) {
          inside += 1.0;
          gain += double(edited(f, target_channel, y, x)) - original(f, target_channel, y, x);
          drop += double(original(f, source_channel, y, x)) - edited(f, source_channel, y, x);
        } else {
          outside += 1.0;
          for (Index c = 0; c < original.channels(); ++c) {
            const double d = double(edited(f, c, y, x)) - original(f, c, y, x);
            bg += d * d;
          }
        }
      }
  if (inside == 0.0) throw InputError("edit_success: empty mask");
  EditSuccess e;
  e.target_gain = gain / inside;
  e.source_drop = drop / inside;
  e.background_mse = outside == 0.0 ? 0.0 : bg / (outside * static_cast<double>(original.channels()));
  return e;
}

namespace {
nlohmann::json psnr_json(double v) {
  return std::isinf(v) ? nlohmann::json("inf") : nlohmann::json(v);
}
}  // namespace

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  if (reconstruction) {
    nlohmann::json per = nlohmann::json::array();
    for (double p : reconstruction->psnr_per_frame) per.push_back(psnr_json(p));
    j["reconstruction"] = {{"mse", reconstruction->mse},
                           {"psnr", psnr_json(reconstruction->psnr)},
                           {"psnr_mean", psnr_json(reconstruction->psnr_mean)},
                           {"psnr_per_frame", per}};
  }
  if (frame_consistency) j["frame_consistency"] = *frame_consistency;
  if (edit)
    j["edit_success"] = {{"target_gain", edit->target_gain},
                         {"source_drop", edit->source_drop},
                         {"background_mse", edit->background_mse}};
  return j;
}

}  // namespace xfedit
