#pragma once
// Binary PGM (P5), PPM (P6) and F32G grid files.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "metaprompt/tensor.hpp"

namespace metaprompt {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Image8 {
  std::int64_t width = 0;
  std::int64_t height = 0;
  int channels = 1;  // 1 (PGM) or 3 (PPM, interleaved RGB)
  std::vector<std::uint8_t> pixels;
};

/// round(v·255) after clamping to [0,1].
std::uint8_t to_byte(float v);

/// H×W (or 1×H×W) map in [0,1] → grey image.
Image8 grey_from_map(const Tensor& map);
/// 3×H×W planar image in [0,1] → interleaved RGB.
Image8 rgb_from_planar(const Tensor& image);

void write_pgm(const std::filesystem::path& path, const Image8& image);
void write_ppm(const std::filesystem::path& path, const Image8& image);
/// Reads P5 or P6 with maxval 255.
Image8 read_pnm(const std::filesystem::path& path);

/// "F32G", u32 rank, rank × u32 dims, little-endian float32 payload.
void write_f32g(const std::filesystem::path& path, const Tensor& grid);
Tensor read_f32g(const std::filesystem::path& path);

}  // namespace metaprompt
