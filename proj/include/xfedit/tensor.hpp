#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <sstream>
#include <string>

#include "xfedit/errors.hpp"

namespace xfedit {

using Index = Eigen::Index;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// F x C x H x W block of frames.
///
/// Storage is a single column-major matrix with one row per channel and one
/// column per (frame, y, x) location, frame-major then row-major inside a
/// frame. The same type doubles as the feature-map type inside the network,
/// where "channels" are feature channels and each column is a spatial token.
template <typename Scalar>
class VideoTensor {
 public:
  VideoTensor() = default;
  VideoTensor(Index frames, Index channels, Index height, Index width)
      : data_(MatrixX<Scalar>::Zero(channels, frames * height * width)),
        frames_(frames),
        height_(height),
        width_(width) {}
  VideoTensor(MatrixX<Scalar> data, Index frames, Index height, Index width)
      : data_(std::move(data)), frames_(frames), height_(height), width_(width) {
    if (data_.cols() != frames * height * width) {
      throw ShapeError("VideoTensor: column count does not match frames*height*width");
    }
  }

  static VideoTensor Zero(Index frames, Index channels, Index height, Index width) {
    return VideoTensor(frames, channels, height, width);
  }
  static VideoTensor Constant(Index frames, Index channels, Index height, Index width,
                              Scalar value) {
    VideoTensor v(frames, channels, height, width);
    v.data_.setConstant(value);
    return v;
  }

  Index frames() const { return frames_; }
  Index channels() const { return data_.rows(); }
  Index height() const { return height_; }
  Index width() const { return width_; }
  Index pixels() const { return height_ * width_; }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  MatrixX<Scalar>& data() { return data_; }
  const MatrixX<Scalar>& data() const { return data_; }

  Scalar& operator()(Index f, Index c, Index y, Index x) {
    return data_(c, f * pixels() + y * width_ + x);
  }
  Scalar operator()(Index f, Index c, Index y, Index x) const {
    return data_(c, f * pixels() + y * width_ + x);
  }

  /// Columns belonging to frame f.
  auto frame(Index f) { return data_.middleCols(f * pixels(), pixels()); }
  auto frame(Index f) const { return data_.middleCols(f * pixels(), pixels()); }

  VideoTensor frame_copy(Index f) const {
    return VideoTensor(MatrixX<Scalar>(frame(f)), 1, height_, width_);
  }
  VideoTensor frames_copy(Index first, Index count) const {
    return VideoTensor(MatrixX<Scalar>(data_.middleCols(first * pixels(), count * pixels())),
                       count, height_, width_);
  }

  bool same_shape(const VideoTensor& other) const {
    return frames_ == other.frames_ && channels() == other.channels() &&
           height_ == other.height_ && width_ == other.width_;
  }

  bool all_finite() const { return data_.allFinite(); }

  template <typename Other>
  VideoTensor<Other> cast() const {
    return VideoTensor<Other>(data_.template cast<Other>(), frames_, height_, width_);
  }

  std::string shape_string() const {
    std::ostringstream os;
    os << frames_ << "x" << channels() << "x" << height_ << "x" << width_;
    return os.str();
  }

 private:
  MatrixX<Scalar> data_;
  Index frames_ = 0;
  Index height_ = 0;
  Index width_ = 0;
};

using Video = VideoTensor<float>;

template <typename Scalar>
void require_same_shape(const VideoTensor<Scalar>& a, const VideoTensor<Scalar>& b,
                        const char* where) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(where) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

/// Token sequence from a text encoder. Stored with one column per token
/// (D x L), so `tokens().col(l)` is the l-th token embedding.
template <typename Scalar>
class TextEmbeddingT {
 public:
  TextEmbeddingT() = default;
  explicit TextEmbeddingT(MatrixX<Scalar> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.cols() < 1) throw ShapeError("TextEmbedding: needs at least one token");
  }

  Index length() const { return tokens_.cols(); }
  Index width() const { return tokens_.rows(); }
  MatrixX<Scalar>& tokens() { return tokens_; }
  const MatrixX<Scalar>& tokens() const { return tokens_; }
  bool same_shape(const TextEmbeddingT& o) const {
    return length() == o.length() && width() == o.width();
  }
  bool operator==(const TextEmbeddingT& o) const {
    return same_shape(o) && tokens_ == o.tokens_;
  }

 private:
  MatrixX<Scalar> tokens_;
};

using TextEmbedding = TextEmbeddingT<float>;

template <typename Scalar>
Scalar max_abs_diff(const VideoTensor<Scalar>& a, const VideoTensor<Scalar>& b) {
  require_same_shape(a, b, "max_abs_diff");
  return (a.data() - b.data()).cwiseAbs().maxCoeff();
}

/// [0,1] pixel range to the [-1,1] range the denoiser works in.
template <typename Scalar>
VideoTensor<Scalar> to_model_range(const VideoTensor<Scalar>& v) {
  return VideoTensor<Scalar>((v.data().array() * Scalar(2) - Scalar(1)).matrix(), v.frames(),
                             v.height(), v.width());
}

template <typename Scalar>
VideoTensor<Scalar> to_unit_range(const VideoTensor<Scalar>& v) {
  return VideoTensor<Scalar>(((v.data().array() + Scalar(1)) * Scalar(0.5)).matrix(),
                             v.frames(), v.height(), v.width());
}

template <typename Scalar>
VideoTensor<Scalar> clamp_unit(const VideoTensor<Scalar>& v) {
  return VideoTensor<Scalar>(v.data().cwiseMax(Scalar(0)).cwiseMin(Scalar(1)), v.frames(),
                             v.height(), v.width());
}

}  // namespace xfedit
