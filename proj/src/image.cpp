#include "nlaic/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "nlaic/codec_net.hpp"

namespace nlaic {

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::span<const std::uint8_t> b, std::size_t& pos) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(b[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  std::string tok;
  while (pos < b.size() && !std::isspace(b[pos]) && b[pos] != '#') tok.push_back(char(b[pos++]));
  if (tok.empty()) throw FormatError("ppm: truncated header");
  return tok;
}

int header_int(std::span<const std::uint8_t> b, std::size_t& pos, const char* what) {
  const std::string tok = header_token(b, pos);
  if (tok.size() > 9 || !std::all_of(tok.begin(), tok.end(), ::isdigit))
    throw FormatError(std::string("ppm: bad ") + what + " '" + tok + "'");
  return std::stoi(tok);
}

}  // namespace

Image parse_ppm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  if (header_token(bytes, pos) != "P6") throw FormatError("ppm: only binary P6 is supported");
  Image img;
  img.width = header_int(bytes, pos, "width");
  img.height = header_int(bytes, pos, "height");
  const int maxval = header_int(bytes, pos, "maxval");
  if (maxval != 255) throw FormatError("ppm: maxval must be 255");
  if (img.width <= 0 || img.height <= 0) throw FormatError("ppm: empty image");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("ppm: truncated header");
  ++pos;
  const std::size_t n = std::size_t(img.width) * std::size_t(img.height) * 3;
  if (bytes.size() - pos < n) throw FormatError("ppm: truncated pixel data");
  img.rgb.assign(bytes.begin() + std::ptrdiff_t(pos), bytes.begin() + std::ptrdiff_t(pos + n));
  return img;
}

std::vector<std::uint8_t> serialize_ppm(const Image& img) {
  const std::string head =
      "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(head.begin(), head.end());
  out.insert(out.end(), img.rgb.begin(), img.rgb.end());
  return out;
}

Image read_ppm(const std::filesystem::path& path) { return parse_ppm(read_file(path)); }

void write_ppm(const std::filesystem::path& path, const Image& img) {
  write_file(path, serialize_ppm(img));
}

int round_up(int n, int m) { return std::max(m, (n + m - 1) / m * m); }

Image pad_edge(const Image& img, int m) {
  Image out;
  out.width = round_up(img.width, m);
  out.height = round_up(img.height, m);
  out.rgb.resize(std::size_t(out.width) * out.height * 3);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < 3; ++c)
        out.rgb[(std::size_t(y) * out.width + x) * 3 + c] =
            img.at(c, std::min(y, img.height - 1), std::min(x, img.width - 1));
  return out;
}

Image crop(const Image& img, int width, int height) {
  if (width > img.width || height > img.height || width <= 0 || height <= 0)
    throw ContractError("crop: target larger than image");
  Image out;
  out.width = width;
  out.height = height;
  out.rgb.resize(std::size_t(width) * height * 3);
  for (int y = 0; y < height; ++y)
    std::copy_n(img.rgb.begin() + std::ptrdiff_t(std::size_t(y) * img.width * 3), width * 3,
                out.rgb.begin() + std::ptrdiff_t(std::size_t(y) * width * 3));
  return out;
}

Tensor<float> image_to_tensor(const Image& img) {
  Tensor<float> t({3, img.height, img.width});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        t[(Index(c) * img.height + y) * img.width + x] = float(img.at(c, y, x)) / 255.0f;
  return t;
}

Tensor<double> image_to_tensor255(const Image& img) {
  Tensor<double> t({3, img.height, img.width});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        t[(Index(c) * img.height + y) * img.width + x] = img.at(c, y, x);
  return t;
}

Image tensor_to_image(const Tensor<float>& t) {
  if (t.rank() != 3 || t.dim(0) != 3) throw ShapeError("tensor_to_image expects [3,H,W]");
  Image img;
  img.height = int(t.dim(1));
  img.width = int(t.dim(2));
  img.rgb.resize(std::size_t(t.size()));
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        const double v = double(t[(Index(c) * img.height + y) * img.width + x]) * 255.0;
        img.rgb[(std::size_t(y) * img.width + x) * 3 + c] =
            std::uint8_t(std::round(std::clamp(v, 0.0, 255.0)));
      }
  return img;
}

}  // namespace nlaic
