#include "nlaic/container.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstdio>

#include "nlaic/bytes.hpp"

namespace nlaic {

namespace {
constexpr char kMagic[4] = {'N', 'L', 'I', 'C'};
// magic .. z bounds, then two length fields and the CRC.
constexpr std::size_t kFixedBytes = 4 + 2 + 2 + 8 + 16 + 2 + 8 + 4 + 4 + 4;

std::uint32_t crc32_of(std::span<const std::uint8_t> b) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t done = 0;
  while (done < b.size()) {
    const std::size_t n = std::min<std::size_t>(b.size() - done, 1u << 30);
    crc = crc32(crc, b.data() + done, uInt(n));
    done += n;
  }
  return std::uint32_t(crc);
}
}  // namespace

ModelHash model_hash(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  ModelHash out;
  for (int i = 0; i < 8; ++i) out[std::size_t(i)] = std::uint8_t(h >> (8 * i));
  return out;
}

std::string hex(const ModelHash& h) {
  std::string s;
  char buf[3];
  for (auto b : h) {
    std::snprintf(buf, sizeof buf, "%02x", b);
    s += buf;
  }
  return s;
}

std::vector<std::uint8_t> serialize_container(const Container& c) {
  ByteWriter w;
  w.put_string(std::string(kMagic, 4));
  w.put<std::uint16_t>(c.version);
  w.put<std::uint16_t>(c.flags);
  w.put_bytes(c.hash);
  w.put<std::uint32_t>(c.orig_w);
  w.put<std::uint32_t>(c.orig_h);
  w.put<std::uint32_t>(c.padded_w);
  w.put<std::uint32_t>(c.padded_h);
  w.put<std::uint16_t>(c.N);
  w.put<std::int16_t>(std::int16_t(c.y_bounds.n_min));
  w.put<std::int16_t>(std::int16_t(c.y_bounds.n_max));
  w.put<std::int16_t>(std::int16_t(c.z_bounds.n_min));
  w.put<std::int16_t>(std::int16_t(c.z_bounds.n_max));
  w.put<std::uint32_t>(std::uint32_t(c.z_bytes.size()));
  w.put_bytes(c.z_bytes);
  w.put<std::uint32_t>(std::uint32_t(c.y_bytes.size()));
  w.put_bytes(c.y_bytes);
  w.put<std::uint32_t>(crc32_of(w.bytes()));
  return std::move(w.bytes());
}

Container parse_container(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin()))
    throw FormatError("not an NLIC container (bad magic)");
  if (bytes.size() < 6) throw FormatError("container truncated");
  ByteReader r(bytes.subspan(4));
  Container c;
  c.version = r.get<std::uint16_t>();
  if (c.version != kContainerVersion)
    throw VersionError("unsupported container version " + std::to_string(c.version));
  if (bytes.size() < kFixedBytes) throw FormatError("container truncated");
  const auto body = bytes.first(bytes.size() - 4);
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body.size(), 4);
  if (crc32_of(body) != stored) throw ChecksumError("container CRC mismatch (corrupt or truncated)");

  c.flags = r.get<std::uint16_t>();
  if (c.flags & ~1u) throw FormatError("unknown container flags");
  const auto h = r.get_bytes(8);
  std::copy(h.begin(), h.end(), c.hash.begin());
  c.orig_w = r.get<std::uint32_t>();
  c.orig_h = r.get<std::uint32_t>();
  c.padded_w = r.get<std::uint32_t>();
  c.padded_h = r.get<std::uint32_t>();
  c.N = r.get<std::uint16_t>();
  c.y_bounds = {r.get<std::int16_t>(), r.get<std::int16_t>()};
  c.z_bounds = {r.get<std::int16_t>(), r.get<std::int16_t>()};
  const auto zl = r.get<std::uint32_t>();
  if (zl > r.remaining()) throw FormatError("z segment length exceeds container");
  const auto z = r.get_bytes(zl);
  c.z_bytes.assign(z.begin(), z.end());
  const auto yl = r.get<std::uint32_t>();
  if (yl > r.remaining()) throw FormatError("y segment length exceeds container");
  const auto y = r.get_bytes(yl);
  c.y_bytes.assign(y.begin(), y.end());
  if (r.remaining() != 4) throw FormatError("trailing bytes in container");

  if (c.orig_w == 0 || c.orig_h == 0 || c.orig_w > (1u << 16) || c.orig_h > (1u << 16))
    throw FormatError("implausible image dimensions");
  if (c.padded_w != std::uint32_t(round_up(int(c.orig_w), kPadMultiple)) ||
      c.padded_h != std::uint32_t(round_up(int(c.orig_h), kPadMultiple)))
    throw FormatError("padded dimensions inconsistent with original dimensions");
  for (auto b : {c.y_bounds, c.z_bounds})
    if (b.n_min > b.n_max || b.n_min < -255 || b.n_max > 255) throw FormatError("invalid symbol bounds");
  return c;
}

LoadedModel LoadedModel::from_bytes(std::span<const std::uint8_t> bytes) {
  return {parse_checkpoint(bytes), model_hash(bytes)};
}

LoadedModel LoadedModel::load(const std::filesystem::path& path) {
  return from_bytes(read_file(path));
}

namespace {

Tensor<float> clamp_to(const Tensor<float>& t, SymbolBounds b) {
  Tensor<float> out = t;
  for (Index i = 0; i < out.size(); ++i)
    out[i] = std::clamp(out[i], float(b.n_min), float(b.n_max));
  return out;
}

}  // namespace

EncodeOutput encode_image(const LoadedModel& model, const Image& img) {
  const NetConfig& cfg = model.ckpt.config;
  const Image padded = pad_edge(img, kPadMultiple);
  Binding<float> p(model.ckpt.params);
  auto x = Var<float>::constant(image_to_tensor(padded));
  auto enc = encode_forward(p, cfg, x, QuantMode::Infer, nullptr);

  Container c;
  c.flags = cfg.context_mode == ContextMode::Joint ? 1 : 0;
  c.hash = model.hash;
  c.orig_w = std::uint32_t(img.width);
  c.orig_h = std::uint32_t(img.height);
  c.padded_w = std::uint32_t(padded.width);
  c.padded_h = std::uint32_t(padded.height);
  c.N = std::uint16_t(cfg.N);

  // Everything downstream sees the clamped latents the decoder will see.
  c.z_bounds = latent_bounds(enc.z_hat.value());
  const Tensor<float> z_hat = clamp_to(enc.z_hat.value(), c.z_bounds);
  c.y_bounds = latent_bounds(enc.y_hat.value());
  const Tensor<float> y_hat = clamp_to(enc.y_hat.value(), c.y_bounds);

  const ScalarPrior prior(model.ckpt.params, "prior");
  c.z_bytes = encode_z(z_hat, prior, c.z_bounds);
  auto hyper = hyper_decoder(p, cfg, Var<float>::constant(z_hat));
  auto yv = Var<float>::constant(y_hat);
  auto g = context_params(p, cfg, yv, hyper);
  if (cfg.context_mode == ContextMode::Joint) {
    const SequentialContext ctx(model.ckpt.params, cfg, hyper.value());
    c.y_bytes = encode_y_joint(y_hat, ctx, c.y_bounds);
  } else {
    c.y_bytes = encode_y_baseline(y_hat, g.mu.value(), g.sigma.value(), c.y_bounds);
  }

  EncodeOutput out;
  out.bytes = serialize_container(c);
  out.bits_est = double(rate_bits(gaussian_pmf(yv, g.mu, g.sigma)).value().item()) +
                 double(rate_bits(factorized_pmf(Var<float>::constant(z_hat),
                                                 PriorVars<float>::bind(p, "prior")))
                            .value()
                            .item());
  const double pixels = double(img.width) * double(img.height);
  out.bpp_actual = double(out.bytes.size()) * 8.0 / pixels;
  out.bpp_est = out.bits_est / pixels;
  out.y_hat = y_hat;
  out.z_hat = z_hat;
  return out;
}

DecodeOutput decode_image(const LoadedModel& model, std::span<const std::uint8_t> bytes) {
  const Container c = parse_container(bytes);
  const NetConfig& cfg = model.ckpt.config;
  if (c.hash != model.hash)
    throw ModelMismatchError("container was encoded with model " + hex(c.hash) +
                             ", checkpoint is " + hex(model.hash));
  if (c.joint() != (cfg.context_mode == ContextMode::Joint) || c.N != cfg.N)
    throw ModelMismatchError("container settings do not match the checkpoint");

  const Index n = cfg.N, hy = Index(c.padded_h) / 16, wy = Index(c.padded_w) / 16;
  const ScalarPrior prior(model.ckpt.params, "prior");
  const Tensor<float> z_hat =
      decode_z(c.z_bytes, {n, Index(c.padded_h) / 64, Index(c.padded_w) / 64}, prior, c.z_bounds);
  Binding<float> p(model.ckpt.params);
  auto hyper = hyper_decoder(p, cfg, Var<float>::constant(z_hat));
  Tensor<float> y_hat;
  if (c.joint()) {
    const SequentialContext ctx(model.ckpt.params, cfg, hyper.value());
    y_hat = decode_y_joint(c.y_bytes, ctx, c.y_bounds);
  } else {
    auto g = context_params(p, cfg, Var<float>::constant(Tensor<float>::zeros({n, hy, wy})), hyper);
    y_hat = decode_y_baseline(c.y_bytes, g.mu.value(), g.sigma.value(), c.y_bounds);
  }
  auto x_hat = decode_forward(p, cfg, Var<float>::constant(y_hat));
  DecodeOutput out;
  out.image = crop(tensor_to_image(x_hat.value()), int(c.orig_w), int(c.orig_h));
  out.y_hat = std::move(y_hat);
  return out;
}

std::vector<std::pair<std::string, Tensor<float>>> nlam_masks(const LoadedModel& model,
                                                              const Image& img) {
  const Image padded = pad_edge(img, kPadMultiple);
  Binding<float> p(model.ckpt.params);
  ForwardTrace<float> trace;
  forward_model(p, model.ckpt.config, Var<float>::constant(image_to_tensor(padded)),
                QuantMode::Infer, nullptr, &trace);
  return trace.masks;
}

}  // namespace nlaic
