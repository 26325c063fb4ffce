#pragma once

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "nlaic/ops.hpp"
#include "nlaic/params.hpp"

// ResBlock, non-local module (NLM) and non-local attention module (NLAM).
//
// Parameters live in a flat ParamSet under a dotted prefix; forward functions
// look them up through a Binding so the same code runs in float (training,
// inference) and double (gradient checks).

namespace nlaic {

using Rng = std::mt19937_64;

// Values recorded during a forward pass for inspection.
template <typename S>
struct ForwardTrace {
  std::vector<std::pair<std::string, Tensor<S>>> masks;      // NLAM sigmoid masks
  std::vector<std::pair<std::string, Tensor<S>>> attention;  // NLM (HW x HW) softmax
};

// --- initialization -------------------------------------------------------

// Zero-mean uniform with scale 1/sqrt(fan_in).
inline Tensor<float> init_weight(Shape shape, Index fan_in, Rng& rng) {
  const float bound = 1.0f / std::sqrt(float(fan_in));
  return Tensor<float>::uniform(std::move(shape), -bound, bound, rng);
}

inline void add_conv(ParamSet<float>& ps, const std::string& name, Index cin, Index cout, int k,
                     Rng& rng) {
  ps.add(name + ".w", init_weight({cout, cin, k, k}, cin * k * k, rng));
  ps.add(name + ".b", Tensor<float>::zeros({cout}));
}

// Transposed-conv weights are stored [Cin, Cout, k, k].
inline void add_deconv(ParamSet<float>& ps, const std::string& name, Index cin, Index cout, int k,
                       Rng& rng) {
  ps.add(name + ".w", init_weight({cin, cout, k, k}, cin * k * k, rng));
  ps.add(name + ".b", Tensor<float>::zeros({cout}));
}

inline void add_resblock(ParamSet<float>& ps, const std::string& prefix, Index c, Rng& rng) {
  add_conv(ps, prefix + ".conv1", c, c, 3, rng);
  add_conv(ps, prefix + ".conv2", c, c, 3, rng);
}

inline void add_resblocks(ParamSet<float>& ps, const std::string& prefix, Index c, int count,
                          Rng& rng) {
  for (int i = 0; i < count; ++i) add_resblock(ps, prefix + "." + std::to_string(i), c, rng);
}

// theta, phi, g are C->C 1x1 maps without bias; w_z starts at zero so the
// module is an identity at initialization.
inline void add_nlm(ParamSet<float>& ps, const std::string& prefix, Index c, Rng& rng) {
  ps.add(prefix + ".w_theta", init_weight({c, c, 1, 1}, c, rng));
  ps.add(prefix + ".w_phi", init_weight({c, c, 1, 1}, c, rng));
  ps.add(prefix + ".w_g", init_weight({c, c, 1, 1}, c, rng));
  ps.add(prefix + ".w_z", Tensor<float>::zeros({c, c, 1, 1}));
}

inline void add_nlam(ParamSet<float>& ps, const std::string& prefix, Index c, bool with_mask,
                     Rng& rng) {
  add_resblocks(ps, prefix + ".main", c, 3, rng);
  if (!with_mask) return;
  add_nlm(ps, prefix + ".mask.nlm", c, rng);
  add_resblocks(ps, prefix + ".mask.rb", c, 3, rng);
  add_conv(ps, prefix + ".mask.conv", c, c, 1, rng);
}

// --- forward --------------------------------------------------------------

template <typename S>
Var<S> conv_layer(const Binding<S>& p, const std::string& name, const Var<S>& x, int stride) {
  const auto& w = p[name + ".w"];
  const int k = int(w.dim(2));
  return conv2d(x, w, p[name + ".b"], stride, (k - 1) / 2);
}

template <typename S>
Var<S> deconv_layer(const Binding<S>& p, const std::string& name, const Var<S>& x, int stride) {
  return deconv2d(x, p[name + ".w"], p[name + ".b"], stride);
}

// x + conv2(relu(conv1(x))): one ReLU, no normalization.
template <typename S>
Var<S> resblock_forward(const Binding<S>& p, const std::string& prefix, const Var<S>& x) {
  auto h = relu(conv_layer(p, prefix + ".conv1", x, 1));
  return x + conv_layer(p, prefix + ".conv2", h, 1);
}

template <typename S>
Var<S> resblocks_forward(const Binding<S>& p, const std::string& prefix, Var<S> x, int count = 3) {
  for (int i = 0; i < count; ++i) x = resblock_forward(p, prefix + "." + std::to_string(i), x);
  return x;
}

// Z = W_z * (g(X) softmax(theta(X)^T phi(X))^T) + X over flattened positions.
template <typename S>
Var<S> nlm_forward(const Binding<S>& p, const std::string& prefix, const Var<S>& x,
                   ForwardTrace<S>* trace = nullptr) {
  if (x.shape().size() != 3) throw ShapeError("nlm expects [C,H,W]");
  const Index c = x.dim(0), hw = x.dim(1) * x.dim(2);
  auto as_matrix = [&](const std::string& name) {
    const auto& w = p[prefix + "." + name];
    if (w.shape() != Shape{c, c, 1, 1})
      throw ShapeError("nlm " + name + " must be [C,C,1,1], got " + to_string(w.shape()));
    return reshape(w, Shape{c, c});
  };
  auto flat = reshape(x, Shape{c, hw});
  auto theta = matmul(as_matrix("w_theta"), flat);
  auto phi = matmul(as_matrix("w_phi"), flat);
  auto g = matmul(as_matrix("w_g"), flat);
  auto attn = softmax(matmul(transpose(theta), phi), 1);  // row i: weights over j
  if (trace) trace->attention.emplace_back(prefix, attn.value());
  auto y = matmul(g, transpose(attn));                     // [C, HW]
  auto z = matmul(as_matrix("w_z"), y) + flat;
  return reshape(z, x.shape());
}

// x + (main(x) - x) * sigmoid(mask(x)), where main is three ResBlocks and the
// gated term is the main branch's residual increment. Without a mask branch
// the module reduces to the plain ResBlock stack.
template <typename S>
Var<S> nlam_forward(const Binding<S>& p, const std::string& prefix, const Var<S>& x,
                    ForwardTrace<S>* trace = nullptr) {
  auto main = resblocks_forward(p, prefix + ".main", x);
  if (!p.contains(prefix + ".mask.nlm.w_theta")) return main;
  auto m = nlm_forward(p, prefix + ".mask.nlm", x, trace);
  m = resblocks_forward(p, prefix + ".mask.rb", m);
  m = sigmoid(conv_layer(p, prefix + ".mask.conv", m, 1));
  if (trace) trace->masks.emplace_back(prefix, m.value());
  return x + (main - x) * m;
}

}  // namespace nlaic
