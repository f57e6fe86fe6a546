#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pfgan/diffmath/tensor.hpp"

// Binary greyscale images: "P5\n<width> <height>\n255\n" followed by
// width*height bytes, top row first.
namespace pfgan::eval {

struct GreyImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, top row first

  std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
};

inline std::uint8_t to_pixel(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// Time runs left to right; column 0 of `m` lands on the bottom row.
inline GreyImage time_major_image(const Tensor& m) {
  GreyImage img{m.rows(), m.cols(), {}};
  img.pixels.resize(img.width * img.height);
  for (std::size_t t = 0; t < m.rows(); ++t)
    for (std::size_t c = 0; c < m.cols(); ++c) img.pixels[(img.height - 1 - c) * img.width + t] = to_pixel(m(t, c));
  return img;
}

inline void write_pgm(const GreyImage& img, const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

inline GreyImage read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::string magic;
  GreyImage img;
  int maxval = 0;
  is >> magic >> img.width >> img.height >> maxval;
  if (!is || magic != "P5" || maxval != 255) throw IoError(path.string() + ": not an 8-bit P5 image");
  is.get();
  img.pixels.resize(img.width * img.height);
  if (!is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size())))
    throw IoError(path.string() + ": truncated image");
  return img;
}

// T x F frames: width T, height F, channel 0 at the bottom.
inline void emit_spectrogram_pgm(const Tensor& frames, const std::filesystem::path& path) {
  if (frames.rank() != 2 || frames.size() == 0) throw InputError("emit_spectrogram_pgm: empty frames");
  write_pgm(time_major_image(frames), path);
}

// T x S alignment: width T, height S, encoder step 0 at the bottom.
inline void emit_alignment_pgm(const Tensor& alignment, const std::filesystem::path& path) {
  if (alignment.rank() != 2 || alignment.size() == 0) throw InputError("emit_alignment_pgm: empty alignment");
  write_pgm(time_major_image(alignment), path);
}

}  // namespace pfgan::eval
