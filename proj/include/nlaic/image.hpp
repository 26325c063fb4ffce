#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "nlaic/tensor.hpp"

namespace nlaic {

// 8-bit RGB, interleaved, row-major.
struct Image {
  int width = 0, height = 0;
  std::vector<std::uint8_t> rgb;

  std::uint8_t at(int c, int y, int x) const { return rgb[(std::size_t(y) * width + x) * 3 + c]; }
  bool operator==(const Image&) const = default;
};

// Binary PPM (P6, maxval 255). Throws FormatError on anything else.
Image parse_ppm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_ppm(const Image& img);
Image read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& img);

// Smallest multiple of `m` that is >= n (and >= m).
int round_up(int n, int m);
// Edge replication up to multiples of `m`.
Image pad_edge(const Image& img, int m = 64);
Image crop(const Image& img, int width, int height);

// [3,H,W] with values v/255.
Tensor<float> image_to_tensor(const Image& img);
// Scales by 255, clamps to [0,255] and rounds half away from zero.
Image tensor_to_image(const Tensor<float>& t);
// [3,H,W] on the 0..255 scale, for metrics.
Tensor<double> image_to_tensor255(const Image& img);

}  // namespace nlaic
