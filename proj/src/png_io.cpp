#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <vector>

#include "xfedit/errors.hpp"
#include "xfedit/io.hpp"

namespace xfedit::io {

namespace {

std::uint8_t quantize(float v) {
  const float c = std::clamp(std::isfinite(v) ? v : 0.0f, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

void write_png(const fs::path& path, png_uint_32 w, png_uint_32 h, png_uint_32 format,
               const std::vector<std::uint8_t>& pixels) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = w;
  image.height = h;
  image.format = format;
  if (!png_image_write_to_file(&image, path.c_str(), 0, pixels.data(), 0, nullptr))
    throw IoError("cannot write " + path.string() + ": " + image.message);
}

bool is_frame_name(const fs::path& p) {
  const std::string stem = p.stem().string();
  return p.extension() == ".png" && !stem.empty() &&
         std::all_of(stem.begin(), stem.end(), [](char c) { return c >= '0' && c <= '9'; });
}

}  // namespace

fs::path frame_path(const fs::path& dir, Index f) {
  char name[32];
  std::snprintf(name, sizeof(name), "%04ld.png", static_cast<long>(f));
  return dir / "frames" / name;
}

void write_rgb_png(const fs::path& path, const Video& frame) {
  if (frame.frames() != 1 || frame.channels() != 3)
    throw ShapeError("write_rgb_png: expected one RGB frame, got " + frame.shape_string());
  std::vector<std::uint8_t> px;
  px.reserve(static_cast<std::size_t>(3 * frame.height() * frame.width()));
  for (Index y = 0; y < frame.height(); ++y)
    for (Index x = 0; x < frame.width(); ++x)
      for (Index c = 0; c < 3; ++c) px.push_back(quantize(frame(0, c, y, x)));
  write_png(path, static_cast<png_uint_32>(frame.width()), static_cast<png_uint_32>(frame.height()),
            PNG_FORMAT_RGB, px);
}

void write_gray_png(const fs::path& path, const MatrixX<float>& image) {
  std::vector<std::uint8_t> px;
  px.reserve(static_cast<std::size_t>(image.size()));
  for (Index y = 0; y < image.rows(); ++y)
    for (Index x = 0; x < image.cols(); ++x) px.push_back(quantize(image(y, x)));
  write_png(path, static_cast<png_uint_32>(image.cols()), static_cast<png_uint_32>(image.rows()),
            PNG_FORMAT_GRAY, px);
}

Video read_rgb_png(const fs::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw IoError("cannot read " + path.string() + ": " + image.message);
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, px.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError("cannot decode " + path.string() + ": " + image.message);
  }
  Video out(1, 3, image.height, image.width);
  std::size_t i = 0;
  for (Index y = 0; y < out.height(); ++y)
    for (Index x = 0; x < out.width(); ++x)
      for (Index c = 0; c < 3; ++c) out(0, c, y, x) = static_cast<float>(px[i++]) / 255.0f;
  return out;
}

void save_frames(const Video& video, const fs::path& dir) {
  fs::create_directories(dir / "frames");
  for (Index f = 0; f < video.frames(); ++f) write_rgb_png(frame_path(dir, f), video.frame_copy(f));
}

Video load_frames(const fs::path& dir) {
  const fs::path frames_dir = fs::is_directory(dir / "frames") ? dir / "frames" : dir;
  if (!fs::is_directory(frames_dir)) throw IoError("frame directory not found: " + dir.string());
  std::vector<std::pair<long, fs::path>> files;
  for (const auto& entry : fs::directory_iterator(frames_dir))
    if (entry.is_regular_file() && is_frame_name(entry.path()))
      files.emplace_back(std::stol(entry.path().stem().string()), entry.path());
  if (files.empty()) throw InputError("no frames in " + frames_dir.string());
  std::sort(files.begin(), files.end());
  for (std::size_t i = 0; i < files.size(); ++i)
    if (files[i].first != static_cast<long>(i))
      throw InputError("frame numbering in " + frames_dir.string() + " has a gap at " +
                       std::to_string(i));

  std::vector<Video> frames;
  for (const auto& [n, p] : files) {
    frames.push_back(read_rgb_png(p));
    if (!frames.back().same_shape(frames.front()))
      throw InputError("frame " + p.filename().string() + " differs in size from frame 0");
  }
  const Index pixels = frames.front().height() * frames.front().width();
  Video out(static_cast<Index>(frames.size()), 3, frames.front().height(), frames.front().width());
  for (std::size_t f = 0; f < frames.size(); ++f)
    out.data().middleCols(static_cast<Index>(f) * pixels, pixels) = frames[f].data();
  return out;
}

}  // namespace xfedit::io
