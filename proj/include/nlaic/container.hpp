#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "nlaic/codec_net.hpp"
#include "nlaic/image.hpp"
#include "nlaic/range_coder.hpp"

// "NLIC" bitstream container, little-endian:
//   magic[4] version:u16 flags:u16 model_hash[8]
//   orig_w:u32 orig_h:u32 padded_w:u32 padded_h:u32 N:u16
//   y_min:i16 y_max:i16 z_min:i16 z_max:i16
//   z_len:u32 z[z_len] y_len:u32 y[y_len] crc32:u32
// flags bit0: joint context model. The CRC covers every preceding byte.

namespace nlaic {

inline constexpr std::uint16_t kContainerVersion = 1;
inline constexpr int kPadMultiple = 64;
// Everything except the two payloads.
inline constexpr int kContainerFixedBytes = 54;

using ModelHash = std::array<std::uint8_t, 8>;

// FNV-1a 64 of the serialized checkpoint, little-endian.
ModelHash model_hash(std::span<const std::uint8_t> checkpoint_bytes);
std::string hex(const ModelHash& h);

struct Container {
  std::uint16_t version = kContainerVersion;
  std::uint16_t flags = 0;
  ModelHash hash{};
  std::uint32_t orig_w = 0, orig_h = 0, padded_w = 0, padded_h = 0;
  std::uint16_t N = 0;
  SymbolBounds y_bounds, z_bounds;
  std::vector<std::uint8_t> z_bytes, y_bytes;

  bool joint() const { return flags & 1u; }
};

std::vector<std::uint8_t> serialize_container(const Container& c);
// FormatError for bad magic or layout, VersionError, ChecksumError.
Container parse_container(std::span<const std::uint8_t> bytes);

// A checkpoint together with the digest of its serialized form.
struct LoadedModel {
  Checkpoint ckpt;
  ModelHash hash{};

  static LoadedModel from_bytes(std::span<const std::uint8_t> bytes);
  static LoadedModel load(const std::filesystem::path& path);
};

struct EncodeOutput {
  std::vector<std::uint8_t> bytes;
  double bits_est = 0;  // rate estimate for y and z
  double bpp_actual = 0, bpp_est = 0;  // per original pixel
  Tensor<float> y_hat, z_hat;
};

EncodeOutput encode_image(const LoadedModel& model, const Image& img);

struct DecodeOutput {
  Image image;
  Tensor<float> y_hat;
};

// Verifies the model hash before any entropy decoding (ModelMismatchError).
DecodeOutput decode_image(const LoadedModel& model, std::span<const std::uint8_t> bytes);

// Cached NLAM masks from an inference pass over the padded image. Empty for
// fully ablated models.
std::vector<std::pair<std::string, Tensor<float>>> nlam_masks(const LoadedModel& model,
                                                              const Image& img);

}  // namespace nlaic
