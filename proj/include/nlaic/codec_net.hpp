#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nlaic/blocks.hpp"
#include "nlaic/entropy.hpp"
#include "nlaic/params.hpp"

// The five sub-networks: main encoder/decoder, hyper encoder/decoder and the
// conditional context model, plus the factorized prior for z.
//
//   x [3,H,W] --main_enc--> y [N,H/16,W/16] --Q--> y_hat
//   y_hat --hyper_enc--> z [N,H/64,W/64] --Q--> z_hat --hyper_dec--> [2N,H/16,W/16]
//   (hyper output, causal y_hat neighbours) --context--> (mu, sigma)
//   y_hat --main_dec--> x_hat [3,H,W]

namespace nlaic {

enum class ContextMode { Baseline, Joint };
enum class QuantMode { Train, Infer };

struct NetConfig {
  int N = 32;
  int input_channels = 3;
  bool remove_first_mask = false;
  bool remove_main_masks = false;
  bool remove_all_masks = false;
  ContextMode context_mode = ContextMode::Baseline;

  void validate() const;
  // Whether the named NLAM (e.g. "main_enc.nlam1") keeps its mask branch.
  bool has_mask(const std::string& nlam) const;
  bool operator==(const NetConfig&) const = default;
};

inline constexpr int kContextFeatures = 24;
inline constexpr int kContextKernel = 5;
inline constexpr float kLogSigmaBound = 10.0f;
// Images enter as [0,1]; main_encoder rescales to 0..255, x_hat stays on [0,1].
inline constexpr double kEncoderInputScale = 255.0;

enum class LayerKind { Conv, Deconv, ResBlocks, Nlam, Masked, Pointwise, Relu };

struct LayerDef {
  LayerKind kind;
  std::string name;  // dotted, relative to module
  int kernel = 0;
  int stride = 1;
  int channels = 0;  // output channels / features

  // Human-readable row in the style "Conv: 5x5x192 s2".
  std::string label() const;
};

struct ModuleDef {
  std::string prefix;  // main_enc, main_dec, hyper_enc, hyper_dec, context
  std::vector<LayerDef> layers;
};

// Layer sequences for the configured model; drives both init and forward.
std::vector<ModuleDef> architecture(const NetConfig& cfg);

// Fresh parameters for every module (context model only in joint mode).
ParamSet<float> init_params(const NetConfig& cfg, std::uint64_t seed);
// Adds freshly initialized context-model parameters.
void add_context_params(ParamSet<float>& ps, const NetConfig& cfg, Rng& rng);
// Throws ContractError if params do not match architecture(cfg) shapes.
void check_params(const ParamSet<float>& ps, const NetConfig& cfg);

// --- forward pieces ---------------------------------------------------------

// Train: adds U[-0.5, 0.5) noise from rng. Infer: round half away from zero.
template <typename S>
Var<S> quantize(const Var<S>& t, QuantMode mode, Rng* rng);

template <typename S>
Var<S> main_encoder(const Binding<S>& p, const NetConfig& cfg, const Var<S>& x,
                    ForwardTrace<S>* trace = nullptr);
template <typename S>
Var<S> decode_forward(const Binding<S>& p, const NetConfig& cfg, const Var<S>& y_hat,
                      ForwardTrace<S>* trace = nullptr);
template <typename S>
Var<S> hyper_encoder(const Binding<S>& p, const NetConfig& cfg, const Var<S>& y_hat,
                     ForwardTrace<S>* trace = nullptr);
template <typename S>
Var<S> hyper_decoder(const Binding<S>& p, const NetConfig& cfg, const Var<S>& z_hat,
                     ForwardTrace<S>* trace = nullptr);

template <typename S>
struct EncodeResult {
  Var<S> y, y_hat, z, z_hat;
};

// y = E_M(x), y_hat = Q(y), z = E_h(y_hat), z_hat = Q(z). H and W must be
// multiples of 64.
template <typename S>
EncodeResult<S> encode_forward(const Binding<S>& p, const NetConfig& cfg, const Var<S>& x,
                               QuantMode mode, Rng* rng, ForwardTrace<S>* trace = nullptr);

template <typename S>
struct GaussianParams {
  Var<S> mu, sigma;
};

// hyper_out is hyper_decoder(z_hat) with shape [2N,h,w].
template <typename S>
GaussianParams<S> context_params(const Binding<S>& p, const NetConfig& cfg, const Var<S>& y_hat,
                                 const Var<S>& hyper_out);

template <typename S>
struct ModelOutput {
  EncodeResult<S> latents;
  Var<S> x_hat;
  GaussianParams<S> gaussian;
  Var<S> rate_y, rate_z;  // bits
};

template <typename S>
ModelOutput<S> forward_model(const Binding<S>& p, const NetConfig& cfg, const Var<S>& x,
                             QuantMode mode, Rng* rng, ForwardTrace<S>* trace = nullptr);

// Per-position context evaluation for sequential coding. Reads only the
// causal taps of y_hat, so the encoder and decoder see identical arithmetic.
class SequentialContext {
 public:
  SequentialContext(const ParamSet<float>& params, const NetConfig& cfg,
                    const Tensor<float>& hyper_out);
  // (mu, sigma) at volume position (channel, row, col) given y_hat (row-major [N,h,w]).
  std::pair<double, double> at(std::span<const float> y_hat, Index channel, Index row,
                               Index col) const;
  Index channels() const { return n_; }
  Index height() const { return h_; }
  Index width() const { return w_; }

 private:
  Index n_, h_, w_;
  std::vector<float> hyper_;
  std::vector<float> masked_w_, masked_b_;
  std::vector<int> taps_;  // (dd,dh,dw) triples of live taps, raster order
  std::vector<float> w1_, b1_, w2_, b2_, w3_, b3_;
};

// --- checkpoints ----------------------------------------------------------

struct Checkpoint {
  NetConfig config;
  ParamSet<float> params;
};

std::vector<std::uint8_t> serialize_checkpoint(const NetConfig& cfg, const ParamSet<float>& params);
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const NetConfig& cfg,
                     const ParamSet<float>& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace nlaic
