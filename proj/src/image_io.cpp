#include "metaprompt/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "metaprompt/binary_io.hpp"

namespace metaprompt {

std::uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

Image8 grey_from_map(const Tensor& map) {
  if (!(map.rank() == 2 || (map.rank() == 3 && map.dim(0) == 1))) {
    throw ShapeError("grey image: expected H×W or 1×H×W map, got " + shape_str(map.shape()));
  }
  Image8 img;
  img.height = map.dim(map.rank() - 2);
  img.width = map.dim(map.rank() - 1);
  img.channels = 1;
  img.pixels.reserve(map.data().size());
  for (float v : map.data()) img.pixels.push_back(to_byte(v));
  return img;
}

Image8 rgb_from_planar(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("rgb image: expected 3×H×W, got " + shape_str(image.shape()));
  }
  Image8 img;
  img.height = image.dim(1);
  img.width = image.dim(2);
  img.channels = 3;
  const std::int64_t plane = img.height * img.width;
  img.pixels.resize(static_cast<std::size_t>(3 * plane));
  const auto src = image.data();
  for (std::int64_t p = 0; p < plane; ++p) {
    for (int c = 0; c < 3; ++c) img.pixels[3 * p + c] = to_byte(src[c * plane + p]);
  }
  return img;
}

namespace {

void write_pnm(const std::filesystem::path& path, const Image8& image, int channels, const char* magic) {
  if (image.channels != channels ||
      static_cast<std::int64_t>(image.pixels.size()) != image.width * image.height * channels) {
    throw FormatError("pnm: pixel buffer does not match " + std::to_string(image.width) + "x" +
                      std::to_string(image.height) + "x" + std::to_string(channels));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << magic << '\n' << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw FormatError("write failed: " + path.string());
}

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok += static_cast<char>(ch);
  }
  return tok;
}

}  // namespace

void write_pgm(const std::filesystem::path& path, const Image8& image) { write_pnm(path, image, 1, "P5"); }

void write_ppm(const std::filesystem::path& path, const Image8& image) { write_pnm(path, image, 3, "P6"); }

Image8 read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  const std::string magic = header_token(in);
  Image8 img;
  if (magic == "P5") {
    img.channels = 1;
  } else if (magic == "P6") {
    img.channels = 3;
  } else {
    throw FormatError(path.string() + ": not a binary PGM/PPM file");
  }
  try {
    img.width = std::stoll(header_token(in));
    img.height = std::stoll(header_token(in));
    if (std::stoi(header_token(in)) != 255) throw FormatError(path.string() + ": maxval must be 255");
  } catch (const std::logic_error&) {
    throw FormatError(path.string() + ": malformed header");
  }
  img.pixels.resize(static_cast<std::size_t>(img.width * img.height * img.channels));
  if (!in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()))) {
    throw FormatError(path.string() + ": truncated pixel data");
  }
  return img;
}

void write_f32g(const std::filesystem::path& path, const Tensor& grid) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write("F32G", 4);
  binio::put_u32(out, static_cast<std::uint32_t>(grid.rank()));
  for (auto d : grid.shape()) binio::put_u32(out, static_cast<std::uint32_t>(d));
  binio::put_f32s(out, grid.data());
  if (!out) throw FormatError("write failed: " + path.string());
}

Tensor read_f32g(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != "F32G") throw FormatError(path.string() + ": bad F32G magic");
  std::uint32_t rank = 0;
  if (!binio::get_u32(in, rank) || rank == 0 || rank > 8) throw FormatError(path.string() + ": bad F32G rank");
  Shape shape(rank);
  for (auto& d : shape) {
    std::uint32_t v;
    if (!binio::get_u32(in, v) || v == 0) throw FormatError(path.string() + ": bad F32G dimensions");
    d = v;
  }
  std::vector<float> data(static_cast<std::size_t>(shape_numel(shape)));
  if (!binio::get_f32s(in, data)) throw FormatError(path.string() + ": truncated F32G payload");
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace metaprompt
