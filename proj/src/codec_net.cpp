#include "nlaic/codec_net.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "nlaic/bytes.hpp"

namespace nlaic {

void NetConfig::validate() const {
  if (N < 4 || N % 2 != 0) throw ConfigError("N must be even and >= 4, got " + std::to_string(N));
  if (input_channels != 3) throw ConfigError("input_channels must be 3");
}

bool NetConfig::has_mask(const std::string& nlam) const {
  if (nlam == "main_enc.nlam1" || nlam == "main_dec.nlam2")
    return !(remove_first_mask || remove_main_masks || remove_all_masks);
  if (nlam == "main_enc.nlam2" || nlam == "main_dec.nlam1")
    return !(remove_main_masks || remove_all_masks);
  if (nlam == "hyper_enc.nlam" || nlam == "hyper_dec.nlam") return !remove_all_masks;
  throw ContractError("unknown NLAM " + nlam);
}

std::string LayerDef::label() const {
  const std::string k = std::to_string(kernel), c = std::to_string(channels);
  const std::string s = " s" + std::to_string(stride);
  switch (kind) {
    case LayerKind::Conv: return "Conv: " + k + "×" + k + "×" + c + s;
    case LayerKind::Deconv: return "Deconv: " + k + "×" + k + "×" + c + s;
    case LayerKind::ResBlocks: return "ResBlock(×3): " + k + "×" + k + "×" + c;
    case LayerKind::Nlam: return "NLAM";
    case LayerKind::Masked: return "Masked: " + k + "×" + k + "×" + k + "×" + c + s;
    case LayerKind::Pointwise: return "Conv: 1×1×1×" + c + s;
    case LayerKind::Relu: return "ReLU";
  }
  return {};
}

std::vector<ModuleDef> architecture(const NetConfig& cfg) {
  cfg.validate();
  const int n = cfg.N;
  using K = LayerKind;
  std::vector<ModuleDef> mods;
  mods.push_back({"main_enc",
                  {{K::Conv, "conv1", 5, 2, n},
                   {K::ResBlocks, "rb1", 3, 1, n},
                   {K::Conv, "conv2", 5, 2, n},
                   {K::Nlam, "nlam1", 0, 1, n},
                   {K::Conv, "conv3", 5, 2, n},
                   {K::ResBlocks, "rb2", 3, 1, n},
                   {K::Conv, "conv4", 5, 2, n},
                   {K::Nlam, "nlam2", 0, 1, n}}});
  mods.push_back({"main_dec",
                  {{K::Nlam, "nlam1", 0, 1, n},
                   {K::Deconv, "deconv1", 5, 2, n},
                   {K::ResBlocks, "rb1", 3, 1, n},
                   {K::Deconv, "deconv2", 5, 2, n},
                   {K::Nlam, "nlam2", 0, 1, n},
                   {K::Deconv, "deconv3", 5, 2, n},
                   {K::ResBlocks, "rb2", 3, 1, n},
                   {K::Deconv, "deconv4", 5, 2, cfg.input_channels}}});
  mods.push_back({"hyper_enc",
                  {{K::ResBlocks, "rb1", 3, 1, n},
                   {K::Conv, "conv1", 5, 2, n},
                   {K::ResBlocks, "rb2", 3, 1, n},
                   {K::Conv, "conv2", 5, 2, n},
                   {K::Nlam, "nlam", 0, 1, n}}});
  mods.push_back({"hyper_dec",
                  {{K::Nlam, "nlam", 0, 1, n},
                   {K::Deconv, "deconv1", 5, 2, n},
                   {K::ResBlocks, "rb1", 3, 1, n},
                   {K::Deconv, "deconv2", 5, 2, n},
                   {K::ResBlocks, "rb2", 3, 1, n},
                   {K::Conv, "conv", 5, 1, 2 * n}}});
  if (cfg.context_mode == ContextMode::Joint)
    mods.push_back({"context",
                    {{K::Masked, "masked", kContextKernel, 1, kContextFeatures},
                     {K::Pointwise, "fc1", 1, 1, 48},
                     {K::Relu, "relu1", 0, 1, 48},
                     {K::Pointwise, "fc2", 1, 1, 96},
                     {K::Relu, "relu2", 0, 1, 96},
                     {K::Pointwise, "fc3", 1, 1, 2}}});
  return mods;
}

namespace {

void add_module(ParamSet<float>& ps, const NetConfig& cfg, const ModuleDef& mod, int in_channels,
                Rng& rng) {
  int c = in_channels;
  for (const auto& l : mod.layers) {
    const std::string name = mod.prefix + "." + l.name;
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::Pointwise: add_conv(ps, name, c, l.channels, l.kernel, rng); break;
      case LayerKind::Deconv: add_deconv(ps, name, c, l.channels, l.kernel, rng); break;
      case LayerKind::ResBlocks: add_resblocks(ps, name, c, 3, rng); break;
      case LayerKind::Nlam: add_nlam(ps, name, c, cfg.has_mask(name), rng); break;
      case LayerKind::Masked: {
        const int k = l.kernel;
        // Only the causal taps carry fan-in.
        const Index live = Index(k) * k * k / 2;
        ps.add(name + ".w", init_weight({l.channels, c, k, k, k}, c * live, rng));
        ps.add(name + ".b", Tensor<float>::zeros({l.channels}));
        break;
      }
      case LayerKind::Relu: break;
    }
    if (l.kind != LayerKind::Relu) c = l.channels;
    // The pointwise stack sees hyper features next to the masked-conv output.
    if (l.kind == LayerKind::Masked) c = l.channels + 2;
  }
}

int module_input_channels(const NetConfig& cfg, const std::string& prefix) {
  if (prefix == "main_enc") return cfg.input_channels;
  if (prefix == "context") return 1;
  return cfg.N;
}

}  // namespace

ParamSet<float> init_params(const NetConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  ParamSet<float> ps;
  for (const auto& mod : architecture(cfg)) {
    if (mod.prefix == "context") continue;
    add_module(ps, cfg, mod, module_input_channels(cfg, mod.prefix), rng);
  }
  add_factorized_prior(ps, "prior", cfg.N, rng);
  if (cfg.context_mode == ContextMode::Joint) add_context_params(ps, cfg, rng);
  return ps;
}

void add_context_params(ParamSet<float>& ps, const NetConfig& cfg, Rng& rng) {
  NetConfig joint = cfg;
  joint.context_mode = ContextMode::Joint;
  for (const auto& mod : architecture(joint))
    if (mod.prefix == "context") add_module(ps, joint, mod, 1, rng);
  // Start as the hyperprior-only predictor: units 0..3 of fc1/fc2 relay
  // +-mu and +-s of the hyper features, fc3 recombines them, and all other
  // fc3 weights are zero until training finds use for the masked context.
  // The fc2 relays carry a +1 bias so they never sit on the ReLU kink; fc3
  // takes differences, which cancels it.
  auto& w1 = ps["context.fc1.w"];
  auto& w2 = ps["context.fc2.w"];
  auto& b1 = ps["context.fc1.b"];
  auto& b2 = ps["context.fc2.b"];
  auto& w3 = ps["context.fc3.w"];
  const Index in1 = w1.dim(1), in2 = w2.dim(1), in3 = w3.dim(1);
  for (Index u = 0; u < 4; ++u) {
    for (Index k = 0; k < in1; ++k) w1[u * in1 + k] = 0;
    for (Index k = 0; k < in2; ++k) w2[u * in2 + k] = 0;
    w1[u * in1 + u / 2] = u % 2 ? -1.0f : 1.0f;
    w2[u * in2 + u] = 1.0f;
    b1[u] = 0;
    b2[u] = 1.0f;
  }
  w3.vec().setZero();
  ps["context.fc3.b"].vec().setZero();
  for (Index o = 0; o < 2; ++o) {
    w3[o * in3 + 2 * o] = 1.0f;
    w3[o * in3 + 2 * o + 1] = -1.0f;
  }
}

void check_params(const ParamSet<float>& ps, const NetConfig& cfg) {
  Rng rng(0);
  const ParamSet<float> ref = init_params(cfg, 0);
  if (ref.names() != ps.names())
    throw ContractError("parameter names do not match the configured architecture");
  for (std::size_t i = 0; i < ref.size(); ++i)
    if (ref.at(i).shape() != ps.at(i).shape())
      throw ContractError("parameter " + ref.name(i) + " has shape " + to_string(ps.at(i).shape()) +
                          ", expected " + to_string(ref.at(i).shape()));
}

// ---------------------------------------------------------------------------

template <typename S>
Var<S> quantize(const Var<S>& t, QuantMode mode, Rng* rng) {
  if (mode == QuantMode::Infer) {
    Tensor<S> r(t.shape());
    for (Index i = 0; i < r.size(); ++i) r[i] = std::round(t.value()[i]);
    return Var<S>::constant(std::move(r));
  }
  if (!rng) throw ContractError("training quantization needs a generator");
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  Tensor<S> noise(t.shape());
  for (Index i = 0; i < noise.size(); ++i) {
    // Keep the float cast inside [-0.5, 0.5).
    S v = S(u(*rng));
    if (v >= S(0.5)) v = std::nextafter(S(0.5), S(0));
    noise[i] = v;
  }
  return t + Var<S>::constant(std::move(noise));
}

namespace {

const ModuleDef& find_module(const std::vector<ModuleDef>& mods, const std::string& prefix) {
  for (const auto& m : mods)
    if (m.prefix == prefix) return m;
  throw ContractError("module " + prefix + " not configured");
}

template <typename S>
Var<S> run_module(const Binding<S>& p, const ModuleDef& mod, Var<S> x, ForwardTrace<S>* trace) {
  for (const auto& l : mod.layers) {
    const std::string name = mod.prefix + "." + l.name;
    switch (l.kind) {
      case LayerKind::Conv: x = conv_layer(p, name, x, l.stride); break;
      case LayerKind::Deconv: x = deconv_layer(p, name, x, l.stride); break;
      case LayerKind::ResBlocks: x = resblocks_forward(p, name, x); break;
      case LayerKind::Nlam: x = nlam_forward(p, name, x, trace); break;
      default: throw ContractError("layer kind not valid in image module");
    }
  }
  return x;
}

template <typename S>
Var<S> run_named(const Binding<S>& p, const NetConfig& cfg, const std::string& prefix,
                 const Var<S>& x, ForwardTrace<S>* trace) {
  const auto mods = architecture(cfg);
  return run_module(p, find_module(mods, prefix), x, trace);
}

}  // namespace

template <typename S>
Var<S> main_encoder(const Binding<S>& p, const NetConfig& cfg, const Var<S>& x,
                    ForwardTrace<S>* trace) {
  // The encoder sees 8-bit pixel values so that latents clear the quantization
  // step from the first iteration; the decoder predicts on [0, 1].
  return run_named(p, cfg, "main_enc", scale(x, S(kEncoderInputScale)), trace);
}

template <typename S>
Var<S> decode_forward(const Binding<S>& p, const NetConfig& cfg, const Var<S>& y_hat,
                      ForwardTrace<S>* trace) {
  if (y_hat.shape().size() != 3 || y_hat.dim(0) != cfg.N)
    throw ShapeError("decode_forward expects [N,h,w] latents, got " + to_string(y_hat.shape()));
  return run_named(p, cfg, "main_dec", y_hat, trace);
}

template <typename S>
Var<S> hyper_encoder(const Binding<S>& p, const NetConfig& cfg, const Var<S>& y_hat,
                     ForwardTrace<S>* trace) {
  return run_named(p, cfg, "hyper_enc", y_hat, trace);
}

template <typename S>
Var<S> hyper_decoder(const Binding<S>& p, const NetConfig& cfg, const Var<S>& z_hat,
                     ForwardTrace<S>* trace) {
  return run_named(p, cfg, "hyper_dec", z_hat, trace);
}

template <typename S>
EncodeResult<S> encode_forward(const Binding<S>& p, const NetConfig& cfg, const Var<S>& x,
                               QuantMode mode, Rng* rng, ForwardTrace<S>* trace) {
  if (x.shape().size() != 3 || x.dim(0) != cfg.input_channels)
    throw ShapeError("encode_forward expects [3,H,W], got " + to_string(x.shape()));
  if (x.dim(1) % 64 != 0 || x.dim(2) % 64 != 0 || x.dim(1) == 0 || x.dim(2) == 0)
    throw ContractError("encode_forward: H and W must be positive multiples of 64, got " +
                        to_string(x.shape()));
  EncodeResult<S> r;
  r.y = main_encoder(p, cfg, x, trace);
  r.y_hat = quantize(r.y, mode, rng);
  r.z = hyper_encoder(p, cfg, r.y_hat, trace);
  r.z_hat = quantize(r.z, mode, rng);
  return r;
}

template <typename S>
GaussianParams<S> context_params(const Binding<S>& p, const NetConfig& cfg, const Var<S>& y_hat,
                                 const Var<S>& hyper_out) {
  const Index n = cfg.N;
  if (y_hat.shape().size() != 3 || y_hat.dim(0) != n)
    throw ShapeError("context_params: y_hat must be [N,h,w]");
  const Index h = y_hat.dim(1), w = y_hat.dim(2);
  if (hyper_out.shape() != Shape{2 * n, h, w})
    throw ShapeError("context_params: hyper output " + to_string(hyper_out.shape()) +
                     " does not match latents " + to_string(y_hat.shape()));
  Var<S> mu, s_raw;
  if (cfg.context_mode == ContextMode::Baseline) {
    mu = slice(hyper_out, 0, n);
    s_raw = slice(hyper_out, n, 2 * n);
  } else {
    const Index positions = n * h * w;
    auto volume = reshape(y_hat, Shape{1, n, h, w});
    auto ctx = conv3d_masked(volume, p["context.masked.w"], p["context.masked.b"], MaskType::A);
    auto hyper = reshape(hyper_out, Shape{2, n, h, w});
    auto feat = reshape(concat<S>({hyper, ctx}), Shape{2 + kContextFeatures, positions, 1});
    feat = relu(conv_layer(p, "context.fc1", feat, 1));
    feat = relu(conv_layer(p, "context.fc2", feat, 1));
    feat = conv_layer(p, "context.fc3", feat, 1);
    mu = reshape(slice(feat, 0, 1), Shape{n, h, w});
    s_raw = reshape(slice(feat, 1, 2), Shape{n, h, w});
  }
  return {mu, exp(clamp(s_raw, S(-kLogSigmaBound), S(kLogSigmaBound)))};
}

template <typename S>
ModelOutput<S> forward_model(const Binding<S>& p, const NetConfig& cfg, const Var<S>& x,
                             QuantMode mode, Rng* rng, ForwardTrace<S>* trace) {
  ModelOutput<S> out;
  out.latents = encode_forward(p, cfg, x, mode, rng, trace);
  auto hyper_out = hyper_decoder(p, cfg, out.latents.z_hat, trace);
  out.gaussian = context_params(p, cfg, out.latents.y_hat, hyper_out);
  out.x_hat = decode_forward(p, cfg, out.latents.y_hat, trace);
  out.rate_y = rate_bits(gaussian_pmf(out.latents.y_hat, out.gaussian.mu, out.gaussian.sigma));
  out.rate_z = rate_bits(factorized_pmf(out.latents.z_hat, PriorVars<S>::bind(p, "prior")));
  return out;
}

// ---------------------------------------------------------------------------

SequentialContext::SequentialContext(const ParamSet<float>& params, const NetConfig& cfg,
                                     const Tensor<float>& hyper_out) {
  if (cfg.context_mode != ContextMode::Joint)
    throw ContractError("sequential context requires the joint context model");
  n_ = cfg.N;
  if (hyper_out.rank() != 3 || hyper_out.dim(0) != 2 * n_)
    throw ShapeError("hyper output must be [2N,h,w]");
  h_ = hyper_out.dim(1);
  w_ = hyper_out.dim(2);
  hyper_.assign(hyper_out.data(), hyper_out.data() + hyper_out.size());

  const auto& mw = params["context.masked.w"];
  const int k = int(mw.dim(2));
  const int r = (k - 1) / 2;
  const Index feats = mw.dim(0);
  if (feats != kContextFeatures || mw.dim(1) != 1) throw ShapeError("unexpected masked conv shape");
  const Tensor<float> mask = causal_mask<float>(k, MaskType::A);
  std::vector<Index> live;
  for (Index t = 0; t < mask.size(); ++t)
    if (mask[t] != 0.0f) {
      live.push_back(t);
      const int a = int(t / (k * k)), b = int((t / k) % k), c = int(t % k);
      taps_.insert(taps_.end(), {a - r, b - r, c - r});
    }
  const Index taps = Index(k) * k * k;
  for (Index f = 0; f < feats; ++f)
    for (Index t : live) masked_w_.push_back(mw[f * taps + t]);
  const auto& mb = params["context.masked.b"];
  masked_b_.assign(mb.data(), mb.data() + mb.size());
  auto copy = [&](const std::string& name, std::vector<float>& dst) {
    const auto& t = params[name];
    dst.assign(t.data(), t.data() + t.size());
  };
  copy("context.fc1.w", w1_);
  copy("context.fc1.b", b1_);
  copy("context.fc2.w", w2_);
  copy("context.fc2.b", b2_);
  copy("context.fc3.w", w3_);
  copy("context.fc3.b", b3_);
}

std::pair<double, double> SequentialContext::at(std::span<const float> y, Index c, Index i,
                                                Index j) const {
  if (Index(y.size()) != n_ * h_ * w_) throw ShapeError("sequential context: y size mismatch");
  const std::size_t live = taps_.size() / 3;
  std::vector<double> feat(2 + kContextFeatures);
  feat[0] = hyper_[std::size_t((c * h_ + i) * w_ + j)];
  feat[1] = hyper_[std::size_t(((n_ + c) * h_ + i) * w_ + j)];
  for (int f = 0; f < kContextFeatures; ++f) {
    double acc = masked_b_[std::size_t(f)];
    for (std::size_t t = 0; t < live; ++t) {
      const Index cc = c + taps_[3 * t], ii = i + taps_[3 * t + 1], jj = j + taps_[3 * t + 2];
      if (cc < 0 || cc >= n_ || ii < 0 || ii >= h_ || jj < 0 || jj >= w_) continue;
      acc += double(masked_w_[std::size_t(f) * live + t]) * y[std::size_t((cc * h_ + ii) * w_ + jj)];
    }
    feat[std::size_t(2 + f)] = acc;
  }
  auto dense = [](const std::vector<double>& in, const std::vector<float>& w,
                  const std::vector<float>& b, bool relu) {
    const std::size_t outs = b.size(), ins = in.size();
    std::vector<double> out(outs);
    for (std::size_t o = 0; o < outs; ++o) {
      double acc = b[o];
      for (std::size_t q = 0; q < ins; ++q) acc += double(w[o * ins + q]) * in[q];
      out[o] = relu ? std::max(acc, 0.0) : acc;
    }
    return out;
  };
  auto h1 = dense(feat, w1_, b1_, true);
  auto h2 = dense(h1, w2_, b2_, true);
  auto o = dense(h2, w3_, b3_, false);
  const double s = std::clamp(o[1], -double(kLogSigmaBound), double(kLogSigmaBound));
  return {o[0], std::exp(s)};
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {
constexpr char kCheckpointMagic[4] = {'N', 'L', 'A', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::uint32_t ablation_bits(const NetConfig& c) {
  return (c.remove_first_mask ? 1u : 0u) | (c.remove_main_masks ? 2u : 0u) |
         (c.remove_all_masks ? 4u : 0u);
}
}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const NetConfig& cfg, const ParamSet<float>& params) {
  ByteWriter w;
  w.put_string(std::string(kCheckpointMagic, 4));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(std::uint32_t(cfg.N));
  w.put<std::uint32_t>(cfg.context_mode == ContextMode::Joint ? 1u : 0u);
  w.put<std::uint32_t>(ablation_bits(cfg));
  w.put<std::uint32_t>(std::uint32_t(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& name = params.name(i);
    const auto& t = params.at(i);
    w.put<std::uint32_t>(std::uint32_t(name.size()));
    w.put_string(name);
    w.put<std::uint32_t>(std::uint32_t(t.rank()));
    for (Index d : t.shape()) w.put<std::uint32_t>(std::uint32_t(d));
    for (Index k = 0; k < t.size(); ++k) w.put<float>(t[k]);
  }
  return std::move(w.bytes());
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.get_string(4) != std::string(kCheckpointMagic, 4)) throw FormatError("not a checkpoint (bad magic)");
  if (r.get<std::uint32_t>() != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
  Checkpoint ck;
  ck.config.N = int(r.get<std::uint32_t>());
  const auto mode = r.get<std::uint32_t>();
  if (mode > 1) throw FormatError("bad context mode in checkpoint");
  ck.config.context_mode = mode ? ContextMode::Joint : ContextMode::Baseline;
  const auto bits = r.get<std::uint32_t>();
  ck.config.remove_first_mask = bits & 1u;
  ck.config.remove_main_masks = bits & 2u;
  ck.config.remove_all_masks = bits & 4u;
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint32_t>();
    std::string name = r.get_string(len);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw FormatError("implausible tensor rank in checkpoint");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(Index(r.get<std::uint32_t>()));
    const Index n = numel(shape);
    if (std::size_t(n) * sizeof(float) > r.remaining()) throw FormatError("truncated checkpoint payload");
    Tensor<float> t(shape);
    for (Index k = 0; k < n; ++k) t[k] = r.get<float>();
    ck.params.add(name, std::move(t));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint");
  try {
    check_params(ck.params, ck.config);
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint does not match its config: ") + e.what());
  }
  return ck;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

void save_checkpoint(const std::filesystem::path& path, const NetConfig& cfg,
                     const ParamSet<float>& params) {
  write_file(path, serialize_checkpoint(cfg, params));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(read_file(path));
}

#define NLAIC_INSTANTIATE_NET(S)                                                            \
  template Var<S> quantize(const Var<S>&, QuantMode, Rng*);                                \
  template Var<S> main_encoder(const Binding<S>&, const NetConfig&, const Var<S>&,         \
                               ForwardTrace<S>*);                                          \
  template Var<S> decode_forward(const Binding<S>&, const NetConfig&, const Var<S>&,       \
                                 ForwardTrace<S>*);                                        \
  template Var<S> hyper_encoder(const Binding<S>&, const NetConfig&, const Var<S>&,        \
                                ForwardTrace<S>*);                                         \
  template Var<S> hyper_decoder(const Binding<S>&, const NetConfig&, const Var<S>&,        \
                                ForwardTrace<S>*);                                         \
  template EncodeResult<S> encode_forward(const Binding<S>&, const NetConfig&, const Var<S>&, \
                                          QuantMode, Rng*, ForwardTrace<S>*);              \
  template GaussianParams<S> context_params(const Binding<S>&, const NetConfig&,           \
                                            const Var<S>&, const Var<S>&);                 \
  template ModelOutput<S> forward_model(const Binding<S>&, const NetConfig&, const Var<S>&, \
                                        QuantMode, Rng*, ForwardTrace<S>*);

NLAIC_INSTANTIATE_NET(float)
NLAIC_INSTANTIATE_NET(double)

#undef NLAIC_INSTANTIATE_NET

}  // namespace nlaic
