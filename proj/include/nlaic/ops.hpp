#pragma once

#include <vector>

#include "nlaic/tape.hpp"
#include "nlaic/tensor.hpp"

// Differentiable primitives. Every op is a free function on Var<Scalar>;
// gradients flow only when an input was created by Tape::leaf.
//
// Layout is (channel, height, width) for images and
// (feature, depth, height, width) for volumes, always row-major.
// Elementwise binary ops require equal shapes, or one operand of rank 0.

namespace nlaic {

enum class MaskType { A, B };

// --- elementwise ----------------------------------------------------------
template <typename S> Var<S> add(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> sub(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> mul(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> div(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> scale(const Var<S>& a, S factor);
template <typename S> Var<S> add_scalar(const Var<S>& a, S offset);
template <typename S> Var<S> relu(const Var<S>& a);
template <typename S> Var<S> sigmoid(const Var<S>& a);
template <typename S> Var<S> exp(const Var<S>& a);
// Throws DomainError on any non-positive entry.
template <typename S> Var<S> log(const Var<S>& a);
template <typename S> Var<S> clamp(const Var<S>& a, S lo, S hi);
template <typename S> Var<S> square(const Var<S>& a);
// a^p for strictly positive a.
template <typename S> Var<S> pow_scalar(const Var<S>& a, S p);

// --- reductions / shape ---------------------------------------------------
template <typename S> Var<S> sum(const Var<S>& a);
template <typename S> Var<S> mean(const Var<S>& a);
// [C, ...] -> [C], mean over everything but the leading axis.
template <typename S> Var<S> channel_mean(const Var<S>& a);
template <typename S> Var<S> reshape(const Var<S>& a, Shape shape);
// Concatenate along axis 0; trailing dims must agree.
template <typename S> Var<S> concat(const std::vector<Var<S>>& parts);
// Rows [begin, end) along axis 0.
template <typename S> Var<S> slice(const Var<S>& a, Index begin, Index end);

// Max-subtracted softmax along `axis`.
template <typename S> Var<S> softmax(const Var<S>& a, Index axis);
// [m,k] x [k,n] -> [m,n].
template <typename S> Var<S> matmul(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> transpose(const Var<S>& a);

// --- convolutions ---------------------------------------------------------
// input [Cin,H,W], weight [Cout,Cin,k,k], bias [Cout]. Cross-correlation.
template <typename S>
Var<S> conv2d(const Var<S>& input, const Var<S>& weight, const Var<S>& bias, int stride,
              int padding);
// Adjoint of conv2d with padding (k-1)/2. input [Cin,h,w], weight [Cin,Cout,k,k],
// bias [Cout] -> [Cout, stride*h, stride*w].
template <typename S>
Var<S> deconv2d(const Var<S>& input, const Var<S>& weight, const Var<S>& bias, int stride);
// input [Fin,D,H,W], weight [Fout,Fin,k,k,k], bias [Fout]; stride 1, same padding.
// The causal mask is applied to the weight on every call.
template <typename S>
Var<S> conv3d_masked(const Var<S>& input, const Var<S>& weight, const Var<S>& bias,
                     MaskType type);

// 1 where a k*k*k tap may contribute under the given mask type.
template <typename S> Tensor<S> causal_mask(int k, MaskType type);

// --- image filters --------------------------------------------------------
// Separable normalized Gaussian over H and W of [C,H,W], symmetric edge padding.
template <typename S> Var<S> gaussian_blur(const Var<S>& a, int size, double sigma);
// 2x2 mean pooling with stride 2 over [C,H,W]; odd trailing row/col dropped.
template <typename S> Var<S> avg_pool2(const Var<S>& a);

// --- expression sugar -------------------------------------------------------
template <typename S> Var<S> operator+(const Var<S>& a, const Var<S>& b) { return add(a, b); }
template <typename S> Var<S> operator-(const Var<S>& a, const Var<S>& b) { return sub(a, b); }
template <typename S> Var<S> operator*(const Var<S>& a, const Var<S>& b) { return mul(a, b); }
template <typename S> Var<S> operator/(const Var<S>& a, const Var<S>& b) { return div(a, b); }

// Im2col helpers, exposed for reuse by sequential context evaluation and tests.
namespace detail {
template <typename S>
void im2col(const S* x, Index channels, Index height, Index width, int k, int stride, int pad,
            Index out_h, Index out_w, S* col);
template <typename S>
void col2im(const S* col, Index channels, Index height, Index width, int k, int stride, int pad,
            Index out_h, Index out_w, S* x);
}  // namespace detail

}  // namespace nlaic
