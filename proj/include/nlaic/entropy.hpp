#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nlaic/blocks.hpp"
#include "nlaic/ops.hpp"
#include "nlaic/params.hpp"

// Probability models for the two latents:
//  - z_hat: per-channel learned monotone CDF c_i(x) = sigmoid(flow_i(x)), with
//    the flow a cascade of four positive-weight affine maps and tanh gates;
//    pmf(n) = c(n + 1/2) - c(n - 1/2).
//  - y_hat: Gaussian convolved with U(-1/2, 1/2),
//    pmf(n) = Phi((n + 1/2 - mu)/sigma) - Phi((n - 1/2 - mu)/sigma).
// Both feed -sum log2(pmf) rate estimates and 16-bit CDF tables for coding.

namespace nlaic {

inline constexpr std::array<int, 5> kPriorWidths{1, 3, 3, 3, 1};
inline constexpr int kPriorStages = 4;
inline constexpr double kPmfFloor = 1e-9;
inline constexpr int kCdfPrecisionBits = 16;
inline constexpr std::uint32_t kCdfTotal = 1u << kCdfPrecisionBits;

// Registers <prefix>.H{k} [C,out,in] (pre-softplus), <prefix>.b{k} [C,out]
// and <prefix>.a{k} [C,out] (pre-tanh, k < 3). init_scale sets the initial
// spread of the density.
void add_factorized_prior(ParamSet<float>& ps, const std::string& prefix, Index channels,
                          Rng& rng, double init_scale = 1.5);

template <typename S>
struct PriorVars {
  std::array<Var<S>, kPriorStages> H, b;
  std::array<Var<S>, kPriorStages - 1> a;

  static PriorVars bind(const Binding<S>& p, const std::string& prefix);
  Index channels() const { return H[0].dim(0); }
};

// Flow output (CDF logit) for every element of x; channel is the leading axis.
template <typename S>
Var<S> factorized_logits(const Var<S>& x, const PriorVars<S>& prior);

// c(z + 1/2) - c(z - 1/2), floored at `floor` (no gradient through the floor).
template <typename S>
Var<S> factorized_pmf(const Var<S>& z, const PriorVars<S>& prior, double floor = kPmfFloor);

template <typename S>
Var<S> gaussian_pmf(const Var<S>& y, const Var<S>& mu, const Var<S>& sigma,
                    double floor = kPmfFloor);

// -sum log2(pmf).
template <typename S>
Var<S> rate_bits(const Var<S>& pmf);

// Hinge keeping c(-bound) and 1 - c(bound) below sigmoid(-margin) per channel.
template <typename S>
Var<S> prior_tail_penalty(const PriorVars<S>& prior, double bound = 30.0, double margin = 15.0);

// --- plain evaluation for coding ------------------------------------------

double standard_normal_cdf(double x);
double gaussian_mass(double mu, double sigma, double n);

// Double-precision mirror of the factorized prior, read from a ParamSet.
class ScalarPrior {
 public:
  ScalarPrior(const ParamSet<float>& params, const std::string& prefix);
  double logit(Index channel, double x) const;
  double cdf(Index channel, double x) const;
  // Mass of integer n; tail mass outside [n_min, n_max] folded into the ends.
  double mass(Index channel, int n, int n_min, int n_max) const;
  Index channels() const { return channels_; }

 private:
  Index channels_ = 0;
  // softplus(H), b, tanh(a), flattened per stage in parameter order.
  std::array<std::vector<double>, kPriorStages> weight_, bias_;
  std::array<std::vector<double>, kPriorStages - 1> gate_;
};

struct QuantizedCdf {
  int n_min = 0;
  // table[0] = 0, table.back() = 2^16, strictly increasing.
  std::vector<std::uint32_t> table;

  int n_max() const { return n_min + int(table.size()) - 2; }
  std::size_t symbols() const { return table.size() - 1; }
  std::uint32_t freq(std::size_t s) const { return table[s + 1] - table[s]; }
};

// Deterministic quantization of a probability vector over n_min..n_min+len-1.
// Every symbol receives at least one count; the remainder goes to the most
// probable symbol.
QuantizedCdf quantize_pmf(std::span<const double> pmf, int n_min);

QuantizedCdf build_gaussian_cdf(double mu, double sigma, int n_min, int n_max);
QuantizedCdf build_factorized_cdf(const ScalarPrior& prior, Index channel, int n_min, int n_max);

}  // namespace nlaic
