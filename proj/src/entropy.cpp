#include "nlaic/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace nlaic {

namespace {

template <typename S>
S softplus(S x) {
  return x > S(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename S>
S stable_sigmoid(S x) {
  if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
  const S e = std::exp(x);
  return e / (S(1) + e);
}

// sigmoid'(x), symmetric in x.
template <typename S>
S sigmoid_slope(S x) {
  const S e = std::exp(-std::abs(x));
  return e / ((S(1) + e) * (S(1) + e));
}

constexpr int kMaxWidth = 3;

// Per-call transformed parameters, laid out [C, out, in] / [C, out].
template <typename S>
struct Flow {
  Index channels = 0;
  std::array<std::vector<S>, kPriorStages> weight, weight_slope, bias;
  std::array<std::vector<S>, kPriorStages - 1> gate;

  explicit Flow(const PriorVars<S>& p) {
    channels = p.H[0].dim(0);
    for (int k = 0; k < kPriorStages; ++k) {
      const int out = kPriorWidths[k + 1], in = kPriorWidths[k];
      require_shape(p.H[k].value(), {channels, out, in}, "prior weight");
      require_shape(p.b[k].value(), {channels, out}, "prior bias");
      const auto& h = p.H[k].value();
      weight[k].resize(std::size_t(h.size()));
      weight_slope[k].resize(std::size_t(h.size()));
      for (Index i = 0; i < h.size(); ++i) {
        weight[k][std::size_t(i)] = softplus(h[i]);
        weight_slope[k][std::size_t(i)] = stable_sigmoid(h[i]);
      }
      bias[k].assign(p.b[k].value().data(), p.b[k].value().data() + p.b[k].value().size());
      if (k < kPriorStages - 1) {
        require_shape(p.a[k].value(), {channels, out}, "prior gate");
        const auto& a = p.a[k].value();
        gate[k].resize(std::size_t(a.size()));
        for (Index i = 0; i < a.size(); ++i) gate[k][std::size_t(i)] = std::tanh(a[i]);
      }
    }
  }
};

template <typename S>
struct FlowState {
  S v[kPriorStages + 1][kMaxWidth];  // v[k] is the input to stage k
  S u[kPriorStages][kMaxWidth];      // pre-gate affine output
};

template <typename S>
S flow_forward(const Flow<S>& f, Index c, S x, FlowState<S>& st) {
  st.v[0][0] = x;
  for (int k = 0; k < kPriorStages; ++k) {
    const int out = kPriorWidths[k + 1], in = kPriorWidths[k];
    const S* w = f.weight[k].data() + c * out * in;
    const S* b = f.bias[k].data() + c * out;
    for (int o = 0; o < out; ++o) {
      S acc = b[o];
      for (int i = 0; i < in; ++i) acc += w[o * in + i] * st.v[k][i];
      st.u[k][o] = acc;
      if (k < kPriorStages - 1)
        st.v[k + 1][o] = acc + f.gate[k][std::size_t(c * out + o)] * std::tanh(acc);
      else
        st.v[k + 1][o] = acc;
    }
  }
  return st.v[kPriorStages][0];
}

// Gradient sinks laid out like the raw parameters.
template <typename S>
struct FlowGrads {
  std::array<std::vector<S>, kPriorStages> weight, bias;
  std::array<std::vector<S>, kPriorStages - 1> gate;

  explicit FlowGrads(const Flow<S>& f) {
    for (int k = 0; k < kPriorStages; ++k) {
      weight[k].assign(f.weight[k].size(), S(0));
      bias[k].assign(f.bias[k].size(), S(0));
      if (k < kPriorStages - 1) gate[k].assign(f.gate[k].size(), S(0));
    }
  }

  void flush(Node<S>& n) const {
    // inputs: 0 = x, then H0..H3, b0..b3, a0..a2
    for (int k = 0; k < kPriorStages; ++k) {
      if (n.input_wants(std::size_t(1 + k))) {
        auto& g = n.input(std::size_t(1 + k)).grad_buffer();
        for (std::size_t i = 0; i < weight[k].size(); ++i) g[Index(i)] += weight[k][i];
      }
      if (n.input_wants(std::size_t(5 + k))) {
        auto& g = n.input(std::size_t(5 + k)).grad_buffer();
        for (std::size_t i = 0; i < bias[k].size(); ++i) g[Index(i)] += bias[k][i];
      }
    }
    for (int k = 0; k < kPriorStages - 1; ++k)
      if (n.input_wants(std::size_t(9 + k))) {
        auto& g = n.input(std::size_t(9 + k)).grad_buffer();
        for (std::size_t i = 0; i < gate[k].size(); ++i) g[Index(i)] += gate[k][i];
      }
  }
};

// Accumulates d(logit)/d(params) * delta and returns d(logit)/dx * delta.
template <typename S>
S flow_backward(const Flow<S>& f, Index c, const FlowState<S>& st, S delta, FlowGrads<S>& g) {
  S dv[kMaxWidth] = {delta};
  for (int k = kPriorStages - 1; k >= 0; --k) {
    const int out = kPriorWidths[k + 1], in = kPriorWidths[k];
    S du[kMaxWidth];
    for (int o = 0; o < out; ++o) {
      if (k < kPriorStages - 1) {
        const std::size_t gi = std::size_t(c * out + o);
        const S t = std::tanh(st.u[k][o]);
        const S gate = f.gate[k][gi];
        du[o] = dv[o] * (S(1) + gate * (S(1) - t * t));
        g.gate[k][gi] += dv[o] * t * (S(1) - gate * gate);
      } else {
        du[o] = dv[o];
      }
      g.bias[k][std::size_t(c * out + o)] += du[o];
    }
    S dprev[kMaxWidth] = {};
    for (int o = 0; o < out; ++o)
      for (int i = 0; i < in; ++i) {
        const std::size_t wi = std::size_t((c * out + o) * in + i);
        g.weight[k][wi] += du[o] * st.v[k][i] * f.weight_slope[k][wi];
        dprev[i] += f.weight[k][wi] * du[o];
      }
    for (int i = 0; i < in; ++i) dv[i] = dprev[i];
  }
  return dv[0];
}

template <typename S>
std::vector<Var<S>> flow_inputs(const Var<S>& x, const PriorVars<S>& p) {
  std::vector<Var<S>> in{x};
  for (const auto& v : p.H) in.push_back(v);
  for (const auto& v : p.b) in.push_back(v);
  for (const auto& v : p.a) in.push_back(v);
  return in;
}

template <typename S>
Index channel_stride(const Var<S>& x, Index channels) {
  if (x.shape().empty() || x.dim(0) != channels)
    throw ShapeError("prior input leading axis must equal its channel count " +
                     std::to_string(channels) + ", got " + to_string(x.shape()));
  return x.value().size() / channels;
}

}  // namespace

void add_factorized_prior(ParamSet<float>& ps, const std::string& prefix, Index channels, Rng& rng,
                          double init_scale) {
  const double stage_scale = std::pow(init_scale, 1.0 / kPriorStages);
  std::uniform_real_distribution<double> bias_init(-0.5, 0.5);
  for (int k = 0; k < kPriorStages; ++k) {
    const int out = kPriorWidths[k + 1], in = kPriorWidths[k];
    // softplus(H) = 1 / (stage_scale * out)
    const float h = float(std::log(std::expm1(1.0 / stage_scale / out)));
    ps.add(prefix + ".H" + std::to_string(k), Tensor<float>({channels, out, in}, h));
    Tensor<float> b({channels, out});
    for (Index i = 0; i < b.size(); ++i) b[i] = float(bias_init(rng));
    ps.add(prefix + ".b" + std::to_string(k), std::move(b));
  }
  for (int k = 0; k < kPriorStages - 1; ++k)
    ps.add(prefix + ".a" + std::to_string(k), Tensor<float>::zeros({channels, kPriorWidths[k + 1]}));
}

template <typename S>
PriorVars<S> PriorVars<S>::bind(const Binding<S>& p, const std::string& prefix) {
  PriorVars v;
  for (int k = 0; k < kPriorStages; ++k) {
    v.H[std::size_t(k)] = p[prefix + ".H" + std::to_string(k)];
    v.b[std::size_t(k)] = p[prefix + ".b" + std::to_string(k)];
  }
  for (int k = 0; k < kPriorStages - 1; ++k) v.a[std::size_t(k)] = p[prefix + ".a" + std::to_string(k)];
  return v;
}

template <typename S>
Var<S> factorized_logits(const Var<S>& x, const PriorVars<S>& prior) {
  auto flow = std::make_shared<Flow<S>>(prior);
  const Index inner = channel_stride(x, flow->channels);
  Tensor<S> out(x.shape());
  FlowState<S> st;
  for (Index i = 0; i < out.size(); ++i) out[i] = flow_forward(*flow, i / inner, x.value()[i], st);
  return Tape<S>::record(std::move(out), flow_inputs(x, prior), [flow, inner](Node<S>& n) {
    FlowGrads<S> g(*flow);
    const auto& xv = n.input(0).value;
    FlowState<S> st;
    Tensor<S>* gx = n.input_wants(0) ? &n.input(0).grad_buffer() : nullptr;
    for (Index i = 0; i < xv.size(); ++i) {
      const Index c = i / inner;
      flow_forward(*flow, c, xv[i], st);
      const S dx = flow_backward(*flow, c, st, n.grad[i], g);
      if (gx) (*gx)[i] += dx;
    }
    g.flush(n);
  });
}

template <typename S>
Var<S> factorized_pmf(const Var<S>& z, const PriorVars<S>& prior, double floor) {
  auto flow = std::make_shared<Flow<S>>(prior);
  const Index inner = channel_stride(z, flow->channels);
  Tensor<S> out(z.shape());
  FlowState<S> su, sl;
  for (Index i = 0; i < out.size(); ++i) {
    const Index c = i / inner;
    const S lu = flow_forward(*flow, c, z.value()[i] + S(0.5), su);
    const S ll = flow_forward(*flow, c, z.value()[i] - S(0.5), sl);
    // Evaluate on the side of the sigmoid where it is not saturated.
    const S s = (lu + ll) > S(0) ? S(-1) : S(1);
    const S p = s * (stable_sigmoid(s * lu) - stable_sigmoid(s * ll));
    out[i] = std::max(p, S(floor));
  }
  return Tape<S>::record(std::move(out), flow_inputs(z, prior), [flow, inner, floor](Node<S>& n) {
    FlowGrads<S> g(*flow);
    const auto& zv = n.input(0).value;
    FlowState<S> su, sl;
    Tensor<S>* gz = n.input_wants(0) ? &n.input(0).grad_buffer() : nullptr;
    for (Index i = 0; i < zv.size(); ++i) {
      if (n.value[i] <= S(floor)) continue;
      const Index c = i / inner;
      const S lu = flow_forward(*flow, c, zv[i] + S(0.5), su);
      S dz = flow_backward(*flow, c, su, n.grad[i] * sigmoid_slope(lu), g);
      const S ll = flow_forward(*flow, c, zv[i] - S(0.5), sl);
      dz += flow_backward(*flow, c, sl, -n.grad[i] * sigmoid_slope(ll), g);
      if (gz) (*gz)[i] += dz;
    }
    g.flush(n);
  });
}

template <typename S>
Var<S> gaussian_pmf(const Var<S>& y, const Var<S>& mu, const Var<S>& sigma, double floor) {
  if (y.shape() != mu.shape() || y.shape() != sigma.shape())
    throw ShapeError("gaussian_pmf: y, mu, sigma shapes differ");
  const auto& sv = sigma.value().vec();
  if (sv.size() > 0 && !(sv.minCoeff() > S(0))) throw DomainError("gaussian_pmf: sigma must be > 0");
  constexpr S inv_sqrt2 = S(0.70710678118654752440);
  auto cdf = [](S t) { return S(0.5) * std::erfc(-t * inv_sqrt2); };
  Tensor<S> out(y.shape());
  for (Index i = 0; i < out.size(); ++i) {
    const S v = std::abs(y.value()[i] - mu.value()[i]);
    const S s = sv[i];
    const S p = cdf((S(0.5) - v) / s) - cdf((S(-0.5) - v) / s);
    out[i] = std::max(p, S(floor));
  }
  return Tape<S>::record(std::move(out), {y, mu, sigma}, [floor](Node<S>& n) {
    constexpr S inv_sqrt2pi = S(0.39894228040143267794);
    auto pdf = [](S t) { return inv_sqrt2pi * std::exp(S(-0.5) * t * t); };
    const auto& yv = n.input(0).value;
    const auto& mv = n.input(1).value;
    const auto& sv = n.input(2).value;
    Tensor<S>* gy = n.input_wants(0) ? &n.input(0).grad_buffer() : nullptr;
    Tensor<S>* gm = n.input_wants(1) ? &n.input(1).grad_buffer() : nullptr;
    Tensor<S>* gs = n.input_wants(2) ? &n.input(2).grad_buffer() : nullptr;
    for (Index i = 0; i < yv.size(); ++i) {
      if (n.value[i] <= S(floor)) continue;
      const S d = yv[i] - mv[i];
      const S v = std::abs(d);
      const S s = sv[i];
      const S a = (S(0.5) - v) / s, b = (S(-0.5) - v) / s;
      const S pa = pdf(a), pb = pdf(b);
      const S g = n.grad[i];
      const S dv = (pb - pa) / s;
      const S sign = d > S(0) ? S(1) : (d < S(0) ? S(-1) : S(0));
      if (gy) (*gy)[i] += g * dv * sign;
      if (gm) (*gm)[i] -= g * dv * sign;
      if (gs) (*gs)[i] += g * (b * pb - a * pa) / s;
    }
  });
}

template <typename S>
Var<S> rate_bits(const Var<S>& pmf) {
  return scale(sum(log(pmf)), S(-1.0 / std::numbers::ln2));
}

template <typename S>
Var<S> prior_tail_penalty(const PriorVars<S>& prior, double bound, double margin) {
  const Index c = prior.channels();
  auto lower = factorized_logits(Var<S>::constant(Tensor<S>({c, 1}, S(-bound))), prior);
  auto upper = factorized_logits(Var<S>::constant(Tensor<S>({c, 1}, S(bound))), prior);
  return sum(relu(add_scalar(lower, S(margin)))) + sum(relu(add_scalar(scale(upper, S(-1)), S(margin))));
}

// ---------------------------------------------------------------------------

double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0); }

double gaussian_mass(double mu, double sigma, double n) {
  const double v = std::abs(n - mu);
  return standard_normal_cdf((0.5 - v) / sigma) - standard_normal_cdf((-0.5 - v) / sigma);
}

ScalarPrior::ScalarPrior(const ParamSet<float>& params, const std::string& prefix) {
  channels_ = params[prefix + ".H0"].dim(0);
  for (int k = 0; k < kPriorStages; ++k) {
    const auto& h = params[prefix + ".H" + std::to_string(k)];
    require_shape(h, {channels_, kPriorWidths[k + 1], kPriorWidths[k]}, "prior weight");
    for (Index i = 0; i < h.size(); ++i) weight_[k].push_back(softplus(double(h[i])));
    const auto& b = params[prefix + ".b" + std::to_string(k)];
    require_shape(b, {channels_, kPriorWidths[k + 1]}, "prior bias");
    for (Index i = 0; i < b.size(); ++i) bias_[k].push_back(double(b[i]));
    if (k < kPriorStages - 1) {
      const auto& a = params[prefix + ".a" + std::to_string(k)];
      require_shape(a, {channels_, kPriorWidths[k + 1]}, "prior gate");
      for (Index i = 0; i < a.size(); ++i) gate_[k].push_back(std::tanh(double(a[i])));
    }
  }
}

double ScalarPrior::logit(Index c, double x) const {
  if (c < 0 || c >= channels_) throw ContractError("prior channel out of range");
  double v[kMaxWidth] = {x};
  for (int k = 0; k < kPriorStages; ++k) {
    const int out = kPriorWidths[k + 1], in = kPriorWidths[k];
    double next[kMaxWidth];
    for (int o = 0; o < out; ++o) {
      double acc = bias_[k][std::size_t(c * out + o)];
      for (int i = 0; i < in; ++i) acc += weight_[k][std::size_t((c * out + o) * in + i)] * v[i];
      next[o] = k < kPriorStages - 1 ? acc + gate_[k][std::size_t(c * out + o)] * std::tanh(acc) : acc;
    }
    for (int o = 0; o < out; ++o) v[o] = next[o];
  }
  return v[0];
}

double ScalarPrior::cdf(Index c, double x) const { return stable_sigmoid(logit(c, x)); }

double ScalarPrior::mass(Index c, int n, int n_min, int n_max) const {
  if (n_min == n_max) return 1.0;
  if (n == n_min) return stable_sigmoid(logit(c, n + 0.5));
  if (n == n_max) return stable_sigmoid(-logit(c, n - 0.5));
  const double lu = logit(c, n + 0.5), ll = logit(c, n - 0.5);
  const double s = (lu + ll) > 0 ? -1.0 : 1.0;
  return std::max(0.0, s * (stable_sigmoid(s * lu) - stable_sigmoid(s * ll)));
}

QuantizedCdf quantize_pmf(std::span<const double> pmf, int n_min) {
  const std::size_t m = pmf.size();
  if (m == 0) throw ContractError("quantize_pmf: empty support");
  if (m > kCdfTotal) throw ContractError("quantize_pmf: support exceeds CDF precision");
  const double spare = double(kCdfTotal - std::uint32_t(m));
  std::vector<std::uint32_t> freq(m);
  std::uint64_t used = 0;
  std::size_t best = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double p = std::clamp(pmf[i], 0.0, 1.0);
    freq[i] = 1u + std::uint32_t(std::floor(p * spare));
    used += freq[i];
    if (pmf[i] > pmf[best]) best = i;
  }
  if (used > kCdfTotal) throw ContractError("quantize_pmf: probabilities sum above one");
  freq[best] += std::uint32_t(kCdfTotal - used);
  QuantizedCdf q;
  q.n_min = n_min;
  q.table.resize(m + 1);
  q.table[0] = 0;
  for (std::size_t i = 0; i < m; ++i) q.table[i + 1] = q.table[i] + freq[i];
  return q;
}

QuantizedCdf build_gaussian_cdf(double mu, double sigma, int n_min, int n_max) {
  if (n_min > n_max) throw ContractError("build_gaussian_cdf: n_min > n_max");
  if (!(sigma > 0)) throw ContractError("build_gaussian_cdf: sigma must be > 0");
  std::vector<double> p(std::size_t(n_max - n_min + 1));
  if (p.size() == 1) {
    p[0] = 1.0;
  } else {
    for (int n = n_min; n <= n_max; ++n) {
      double m;
      if (n == n_min)
        m = standard_normal_cdf((n + 0.5 - mu) / sigma);
      else if (n == n_max)
        m = standard_normal_cdf((mu - n + 0.5) / sigma);
      else
        m = gaussian_mass(mu, sigma, n);
      p[std::size_t(n - n_min)] = m;
    }
  }
  return quantize_pmf(p, n_min);
}

QuantizedCdf build_factorized_cdf(const ScalarPrior& prior, Index channel, int n_min, int n_max) {
  if (n_min > n_max) throw ContractError("build_factorized_cdf: n_min > n_max");
  std::vector<double> p(std::size_t(n_max - n_min + 1));
  for (int n = n_min; n <= n_max; ++n) p[std::size_t(n - n_min)] = prior.mass(channel, n, n_min, n_max);
  return quantize_pmf(p, n_min);
}

#define NLAIC_INSTANTIATE_ENTROPY(S)                                               \
  template struct PriorVars<S>;                                                   \
  template Var<S> factorized_logits(const Var<S>&, const PriorVars<S>&);          \
  template Var<S> factorized_pmf(const Var<S>&, const PriorVars<S>&, double);     \
  template Var<S> gaussian_pmf(const Var<S>&, const Var<S>&, const Var<S>&, double); \
  template Var<S> rate_bits(const Var<S>&);                                       \
  template Var<S> prior_tail_penalty(const PriorVars<S>&, double, double);

NLAIC_INSTANTIATE_ENTROPY(float)
NLAIC_INSTANTIATE_ENTROPY(double)

#undef NLAIC_INSTANTIATE_ENTROPY

}  // namespace nlaic
