#include "nlaic/range_coder.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace nlaic {

namespace {
constexpr std::uint32_t kTop = 1u << 24;
}

void RangeEncoder::shift_low() {
  if (std::uint32_t(low_) < 0xFF000000u || (low_ >> 32) != 0) {
    const auto carry = std::uint8_t(low_ >> 32);
    std::uint8_t temp = cache_;
    do {
      out_.push_back(std::uint8_t(temp + carry));
      temp = 0xFF;
    } while (--cache_size_ != 0);
    cache_ = std::uint8_t(std::uint32_t(low_) >> 24);
  }
  ++cache_size_;
  low_ = (low_ & 0x00FFFFFFu) << 8;
}

void RangeEncoder::encode(const QuantizedCdf& cdf, int value) {
  if (finished_) throw ContractError("encoder already finished");
  if (value < cdf.n_min || value > cdf.n_max())
    throw ContractError("symbol " + std::to_string(value) + " outside support [" +
                        std::to_string(cdf.n_min) + ", " + std::to_string(cdf.n_max()) + "]");
  const auto s = std::size_t(value - cdf.n_min);
  const std::uint32_t r = range_ >> kCdfPrecisionBits;
  low_ += std::uint64_t(r) * cdf.table[s];
  range_ = r * cdf.freq(s);
  while (range_ < kTop) {
    range_ <<= 8;
    shift_low();
  }
}

std::vector<std::uint8_t> RangeEncoder::finish() {
  if (!finished_)
    for (int i = 0; i < 5; ++i) shift_low();
  finished_ = true;
  return out_;
}

RangeDecoder::RangeDecoder(std::span<const std::uint8_t> bytes) : in_(bytes) {
  if (bytes.size() < 5) throw DecodeError("range-coded segment shorter than 5 bytes");
  for (int i = 0; i < 5; ++i) code_ = (code_ << 8) | next();
}

std::uint8_t RangeDecoder::next() {
  if (pos_ >= in_.size()) throw DecodeError("range-coded segment truncated");
  return in_[pos_++];
}

int RangeDecoder::decode(const QuantizedCdf& cdf) {
  const std::uint32_t r = range_ >> kCdfPrecisionBits;
  const std::uint32_t v = code_ / r;
  if (v >= kCdfTotal) throw DecodeError("range decoder out of sync (corrupt segment)");
  // First entry greater than v, minus one.
  const auto it = std::upper_bound(cdf.table.begin(), cdf.table.end(), v);
  const auto s = std::size_t(it - cdf.table.begin()) - 1;
  code_ -= r * cdf.table[s];
  range_ = r * cdf.freq(s);
  while (range_ < kTop) {
    code_ = (code_ << 8) | next();
    range_ <<= 8;
  }
  return cdf.n_min + int(s);
}

std::vector<std::uint8_t> encode_symbols(std::span<const int> symbols,
                                         std::span<const QuantizedCdf> cdfs) {
  if (symbols.size() != cdfs.size())
    throw ContractError("encode_symbols: symbol and cdf counts differ");
  if (symbols.empty()) return {};
  RangeEncoder enc;
  for (std::size_t i = 0; i < symbols.size(); ++i) enc.encode(cdfs[i], symbols[i]);
  return enc.finish();
}

std::vector<int> decode_symbols(std::span<const std::uint8_t> bytes,
                                std::span<const QuantizedCdf> cdfs) {
  std::vector<int> out;
  if (cdfs.empty()) return out;
  RangeDecoder dec(bytes);
  out.reserve(cdfs.size());
  for (const auto& c : cdfs) out.push_back(dec.decode(c));
  return out;
}

// ---------------------------------------------------------------------------

namespace {

int to_symbol(float v) {
  const double r = std::round(double(v));
  if (r != double(v)) throw ContractError("latent is not integer-valued");
  return int(r);
}

void check_bounds(SymbolBounds b) {
  if (b.n_min > b.n_max || b.n_min < -255 || b.n_max > 255)
    throw FormatError("invalid symbol bounds");
}

int clamp_symbol(float v, SymbolBounds b) { return std::clamp(to_symbol(v), b.n_min, b.n_max); }

}  // namespace

SymbolBounds latent_bounds(const Tensor<float>& t) {
  if (t.size() == 0) return {0, 0};
  int lo = 255, hi = -255;
  for (Index i = 0; i < t.size(); ++i) {
    const int s = std::clamp(to_symbol(t[i]), -255, 255);
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  return {lo, hi};
}

std::vector<std::uint8_t> encode_z(const Tensor<float>& z_hat, const ScalarPrior& prior,
                                   SymbolBounds b) {
  check_bounds(b);
  if (z_hat.rank() != 3 || z_hat.dim(0) != prior.channels())
    throw ShapeError("encode_z: z_hat must be [N,h,w] matching the prior");
  const Index per = z_hat.dim(1) * z_hat.dim(2);
  RangeEncoder enc;
  for (Index c = 0; c < z_hat.dim(0); ++c) {
    const QuantizedCdf cdf = build_factorized_cdf(prior, c, b.n_min, b.n_max);
    for (Index k = 0; k < per; ++k) enc.encode(cdf, clamp_symbol(z_hat[c * per + k], b));
  }
  return enc.finish();
}

Tensor<float> decode_z(std::span<const std::uint8_t> bytes, const Shape& shape,
                       const ScalarPrior& prior, SymbolBounds b) {
  check_bounds(b);
  if (shape.size() != 3 || shape[0] != prior.channels())
    throw ShapeError("decode_z: shape must be [N,h,w] matching the prior");
  Tensor<float> z(shape);
  const Index per = shape[1] * shape[2];
  if (z.size() == 0) return z;
  RangeDecoder dec(bytes);
  for (Index c = 0; c < shape[0]; ++c) {
    const QuantizedCdf cdf = build_factorized_cdf(prior, c, b.n_min, b.n_max);
    for (Index k = 0; k < per; ++k) z[c * per + k] = float(dec.decode(cdf));
  }
  return z;
}

std::vector<std::uint8_t> encode_y_baseline(const Tensor<float>& y_hat, const Tensor<float>& mu,
                                            const Tensor<float>& sigma, SymbolBounds b) {
  check_bounds(b);
  require_shape(mu, y_hat.shape(), "encode_y_baseline mu");
  require_shape(sigma, y_hat.shape(), "encode_y_baseline sigma");
  RangeEncoder enc;
  for (Index i = 0; i < y_hat.size(); ++i)
    enc.encode(build_gaussian_cdf(mu[i], sigma[i], b.n_min, b.n_max), clamp_symbol(y_hat[i], b));
  return enc.finish();
}

Tensor<float> decode_y_baseline(std::span<const std::uint8_t> bytes, const Tensor<float>& mu,
                                const Tensor<float>& sigma, SymbolBounds b) {
  check_bounds(b);
  require_shape(sigma, mu.shape(), "decode_y_baseline sigma");
  Tensor<float> y(mu.shape());
  if (y.size() == 0) return y;
  RangeDecoder dec(bytes);
  for (Index i = 0; i < y.size(); ++i)
    y[i] = float(dec.decode(build_gaussian_cdf(mu[i], sigma[i], b.n_min, b.n_max)));
  return y;
}

namespace {

// The one routine shared by joint encode and decode. `step(cdf, index)`
// returns the symbol at `index`; the buffer is filled as coding proceeds.
Tensor<float> joint_sequential_code(const SequentialContext& ctx, SymbolBounds b,
                                    const std::function<int(const QuantizedCdf&, Index)>& step) {
  check_bounds(b);
  const Index n = ctx.channels(), h = ctx.height(), w = ctx.width();
  Tensor<float> buf = Tensor<float>::zeros({n, h, w});
  const std::span<const float> view(buf.data(), std::size_t(buf.size()));
  for (Index c = 0; c < n; ++c)
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j) {
        const auto [mu, sigma] = ctx.at(view, c, i, j);
        const Index idx = (c * h + i) * w + j;
        buf[idx] = float(step(build_gaussian_cdf(mu, sigma, b.n_min, b.n_max), idx));
      }
  return buf;
}

}  // namespace

std::vector<std::uint8_t> encode_y_joint(const Tensor<float>& y_hat, const SequentialContext& ctx,
                                         SymbolBounds b) {
  require_shape(y_hat, {ctx.channels(), ctx.height(), ctx.width()}, "encode_y_joint y_hat");
  RangeEncoder enc;
  joint_sequential_code(ctx, b, [&](const QuantizedCdf& cdf, Index idx) {
    const int s = clamp_symbol(y_hat[idx], b);
    enc.encode(cdf, s);
    return s;
  });
  return enc.finish();
}

Tensor<float> decode_y_joint(std::span<const std::uint8_t> bytes, const SequentialContext& ctx,
                             SymbolBounds b) {
  if (ctx.channels() * ctx.height() * ctx.width() == 0)
    return Tensor<float>::zeros({ctx.channels(), ctx.height(), ctx.width()});
  RangeDecoder dec(bytes);
  return joint_sequential_code(ctx, b,
                               [&](const QuantizedCdf& cdf, Index) { return dec.decode(cdf); });
}

}  // namespace nlaic
