#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "xfedit/schedule.hpp"
#include "xfedit/tensor.hpp"
#include "xfedit/unet.hpp"

namespace xfedit {

enum class ShapeKind { Square, Circle };
enum class Color { Red, Green, Blue, Yellow };
enum class Motion { Left, Right, Up, Down };
enum class Background { Black, White };

std::string to_string(ShapeKind v);
std::string to_string(Color v);
std::string to_string(Motion v);
std::string to_string(Background v);
std::array<float, 3> rgb(Color c);
std::array<float, 3> rgb(Background b);

/// One synthetic clip: a flat-coloured shape translating at constant speed.
struct SceneSpec {
  ShapeKind shape = ShapeKind::Square;
  Color color = Color::Red;
  Motion motion = Motion::Right;
  Background background = Background::Black;
  Index frames = 8;
  Index image_size = 32;
  Index object_size = 10;
  Index start_x = 4;  // top-left corner in frame 0
  Index start_y = 11;
  Index speed = 2;    // pixels per frame along `motion`
  float noise = 0.0f; // optional additive pixel noise (uses the render seed)

  /// Throws InputError when the shape would leave the canvas.
  void validate() const;
  /// "a red square moving right on black".
  std::string prompt() const;
  /// Top-left corner at frame f.
  std::pair<Index, Index> position(Index f) const;

  bool operator==(const SceneSpec&) const = default;
};

struct RenderedScene {
  Video video;  // F x 3 x H x W in [0, 1]
  Video mask;   // F x 1 x H x W, 1 inside the shape
  std::string prompt;
};

RenderedScene render_scene(const SceneSpec& spec, std::uint64_t seed = 0);

/// Random spec with the shape fully on screen for all frames.
SceneSpec sample_scene(std::mt19937_64& rng, Index frames, Index image_size);
std::vector<SceneSpec> sample_dataset(std::size_t count, std::uint64_t seed, Index frames,
                                      Index image_size);

/// Inverse of SceneSpec::prompt for the attribute words; geometry is centred
/// so the motion fits in `frames`.
SceneSpec scene_from_prompt(const std::string& prompt, Index frames, Index image_size);

/// Fixed-vocabulary text encoder: whitespace tokens looked up in a frozen
/// random table, padded to a fixed length with the empty token.
class ToyTextEncoder {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0x7e57e0c0deULL;

  explicit ToyTextEncoder(Index width = 32, Index length = 8, std::uint64_t seed = kDefaultSeed);

  TextEmbedding encode(const std::string& prompt) const;
  TextEmbedding empty() const { return encode(""); }
  std::vector<int> token_ids(const std::string& prompt) const;

  Index width() const { return table_.rows(); }
  Index length() const { return length_; }
  const std::vector<std::string>& vocabulary() const { return vocab_; }

 private:
  std::vector<std::string> vocab_;  // vocab_[0] is the empty token
  MatrixX<float> table_;            // width x vocab
  Index length_;
};

struct TrainConfig {
  int steps = 3000;
  int batch = 16;
  double lr = 2e-3;
  int warmup = 100;
  double cfg_dropout = 0.1;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;

  bool operator==(const TrainConfig&) const = default;
};

struct TrainResult {
  std::vector<float> loss_curve;
};

using TrainProgress = std::function<void(int step, float loss)>;

/// Noise-prediction training on single frames (SELF attention everywhere).
/// Throws NumericalError if the loss goes non-finite.
TrainResult train_toy(ToyUNet& model, const std::vector<SceneSpec>& dataset,
                      const ToyTextEncoder& encoder, const Schedule& schedule,
                      const TrainConfig& config, const TrainProgress& progress = {});

}  // namespace xfedit
