#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "xfedit/inversion.hpp"
#include "xfedit/tensor.hpp"
#include "xfedit/unet.hpp"

namespace xfedit::io {

namespace fs = std::filesystem;

enum class DType : std::uint8_t { F32 = 1, F64 = 2, I64 = 3, U8 = 4 };

std::size_t dtype_size(DType d);

/// One named array: row-major little-endian payload.
struct Array {
  DType dtype = DType::F32;
  std::vector<std::uint64_t> dims;
  std::vector<std::byte> payload;

  std::uint64_t element_count() const;
  bool operator==(const Array&) const = default;
};

/// Named arrays in one file (see docs/formats.md). Names are unique and
/// iteration order is sorted by name, so writing is canonical.
class ArrayFile {
 public:
  static constexpr char kMagic[8] = {'X', 'F', 'A', 'R', 'R', 'A', 'Y', '\0'};
  static constexpr std::uint32_t kVersion = 1;

  void put(const std::string& name, Array array);
  void put_matrix(const std::string& name, const MatrixX<float>& m);
  void put_video(const std::string& name, const Video& v);
  void put_doubles(const std::string& name, const std::vector<double>& values);
  void put_text(const std::string& name, const std::string& text);

  bool contains(const std::string& name) const { return arrays_.count(name) != 0; }
  const Array& get(const std::string& name) const;
  MatrixX<float> matrix(const std::string& name) const;
  Video video(const std::string& name) const;
  std::vector<double> doubles(const std::string& name) const;
  std::string text(const std::string& name) const;
  const std::map<std::string, Array>& arrays() const { return arrays_; }

  std::vector<std::byte> serialize() const;
  static ArrayFile deserialize(const std::vector<std::byte>& bytes);
  void save(const fs::path& path) const;
  static ArrayFile load(const fs::path& path);

  bool operator==(const ArrayFile&) const = default;

 private:
  std::map<std::string, Array> arrays_;
};

// Checkpoints --------------------------------------------------------------

constexpr int kCheckpointVersion = 1;

void save_checkpoint(const ToyUNet& model, const fs::path& path);
/// Throws IoError for a missing or corrupt file, ShapeError when the stored
/// weights do not fit the stored config.
std::shared_ptr<ToyUNet> load_checkpoint(const fs::path& path);
std::uint64_t file_hash(const fs::path& path);

// Inversion records --------------------------------------------------------

/// Directory with trajectory.xfa, embeddings.xfa and manifest.json.
void save_inversion(const InversionRecord& rec, const fs::path& dir);
InversionRecord load_inversion(const fs::path& dir);

// Frames -------------------------------------------------------------------

/// 8-bit RGB PNG per frame at dir/frames/%04d.png; values clamped to [0, 1].
void save_frames(const Video& video, const fs::path& dir);
/// Reads dir/frames/ (or dir itself when it has no frames/ subdirectory).
/// Frames must be numbered 0000.. without gaps and share one size.
Video load_frames(const fs::path& dir);
fs::path frame_path(const fs::path& dir, Index f);

/// 8-bit grayscale PNG of a row-major H x W image in [0, 1].
void write_gray_png(const fs::path& path, const MatrixX<float>& image);
/// 8-bit RGB PNG of a single-frame video.
void write_rgb_png(const fs::path& path, const Video& frame);
Video read_rgb_png(const fs::path& path);

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

}  // namespace xfedit::io
