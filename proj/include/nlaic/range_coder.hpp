#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nlaic/codec_net.hpp"
#include "nlaic/entropy.hpp"

// Carry-propagating byte-oriented range coder over 16-bit CDF tables
// (LZMA-style low/range/cache state, renormalizing below 2^24), and the
// latent coders built on it.

namespace nlaic {

class RangeEncoder {
 public:
  // Codes `value`, which must lie in [cdf.n_min, cdf.n_max].
  void encode(const QuantizedCdf& cdf, int value);
  // Flushes the state; the encoder must not be used afterwards.
  std::vector<std::uint8_t> finish();

  std::uint32_t range() const { return range_; }

 private:
  void shift_low();

  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t cache_size_ = 1;
  std::vector<std::uint8_t> out_;
  bool finished_ = false;
};

class RangeDecoder {
 public:
  // Throws DecodeError if fewer than 5 bytes are available.
  explicit RangeDecoder(std::span<const std::uint8_t> bytes);
  int decode(const QuantizedCdf& cdf);
  std::size_t consumed() const { return pos_; }

 private:
  std::uint8_t next();

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
  std::uint32_t code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
};

std::vector<std::uint8_t> encode_symbols(std::span<const int> symbols,
                                         std::span<const QuantizedCdf> cdfs);
std::vector<int> decode_symbols(std::span<const std::uint8_t> bytes,
                                std::span<const QuantizedCdf> cdfs);

// --- latents ---------------------------------------------------------------

struct SymbolBounds {
  int n_min = 0, n_max = 0;
};

// Min/max of an integer-valued tensor, clamped to [-255, 255].
SymbolBounds latent_bounds(const Tensor<float>& t);

// z_hat [N,h,w] under the per-channel factorized prior.
std::vector<std::uint8_t> encode_z(const Tensor<float>& z_hat, const ScalarPrior& prior,
                                   SymbolBounds b);
Tensor<float> decode_z(std::span<const std::uint8_t> bytes, const Shape& shape,
                       const ScalarPrior& prior, SymbolBounds b);

// y_hat given per-element mu and sigma (baseline mode).
std::vector<std::uint8_t> encode_y_baseline(const Tensor<float>& y_hat, const Tensor<float>& mu,
                                            const Tensor<float>& sigma, SymbolBounds b);
Tensor<float> decode_y_baseline(std::span<const std::uint8_t> bytes, const Tensor<float>& mu,
                                const Tensor<float>& sigma, SymbolBounds b);

// Joint mode. Both directions walk (channel, row, col) raster order through
// the same routine, evaluating (mu, sigma) on a buffer holding only the
// positions coded so far.
std::vector<std::uint8_t> encode_y_joint(const Tensor<float>& y_hat, const SequentialContext& ctx,
                                         SymbolBounds b);
Tensor<float> decode_y_joint(std::span<const std::uint8_t> bytes, const SequentialContext& ctx,
                             SymbolBounds b);

}  // namespace nlaic
