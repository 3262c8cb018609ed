#include "dil/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dil {

std::string encode_ppm(const Tensor& pixels) {
  if (pixels.rank() != 3 || pixels.dim(0) != 3) throw ShapeError("encode_ppm: expected [3, h, w], got " + shape_string(pixels.shape()));
  const std::size_t h = pixels.dim(1), w = pixels.dim(2);
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  const std::size_t header = out.size();
  out.resize(header + 3 * h * w);
  const auto v = pixels.data();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double q = std::round(std::clamp(v[(c * h + y) * w + x], 0.0, 1.0) * 255.0);
        out[header + (y * w + x) * 3 + c] = static_cast<char>(static_cast<unsigned char>(q));
      }
  return out;
}

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(const std::string& in, std::size_t& pos) {
  for (;;) {
    while (pos < in.size() && std::isspace(static_cast<unsigned char>(in[pos]))) ++pos;
    if (pos < in.size() && in[pos] == '#') {
      while (pos < in.size() && in[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  const std::size_t start = pos;
  while (pos < in.size() && !std::isspace(static_cast<unsigned char>(in[pos]))) ++pos;
  if (start == pos) throw std::runtime_error("ppm: truncated header");
  return in.substr(start, pos - start);
}

std::size_t header_number(const std::string& in, std::size_t& pos) {
  const std::string tok = header_token(in, pos);
  if (!std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
    throw std::runtime_error("ppm: bad header field '" + tok + "'");
  }
  return std::stoul(tok);
}

}  // namespace

Tensor decode_ppm(const std::string& bytes) {
  std::size_t pos = 0;
  if (header_token(bytes, pos) != "P6") throw std::runtime_error("ppm: only binary P6 is supported");
  const std::size_t w = header_number(bytes, pos), h = header_number(bytes, pos), maxval = header_number(bytes, pos);
  if (maxval != 255) throw std::runtime_error("ppm: maxval must be 255, got " + std::to_string(maxval));
  if (w == 0 || h == 0) throw std::runtime_error("ppm: empty image");
  ++pos;  // single whitespace byte after maxval
  if (bytes.size() - std::min(pos, bytes.size()) != 3 * h * w) throw std::runtime_error("ppm: pixel payload has the wrong size");
  std::vector<double> v(3 * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        v[(c * h + y) * w + x] = static_cast<unsigned char>(bytes[pos + (y * w + x) * 3 + c]) / 255.0;
  return Tensor({3, h, w}, std::move(v));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

void write_ppm(const Tensor& pixels, const std::filesystem::path& path) { write_file(path, encode_ppm(pixels)); }

Tensor read_ppm(const std::filesystem::path& path) { return decode_ppm(read_file(path)); }

}  // namespace dil
