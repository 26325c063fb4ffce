#include "nlaic/ops.hpp"

#include <algorithm>
#include <cmath>

namespace nlaic {

namespace {

template <typename S>
using Vec = typename Tensor<S>::Vector;
template <typename S>
using RowMat = typename Tensor<S>::RowMatrix;
template <typename S>
using MapC = Eigen::Map<const RowMat<S>>;
template <typename S>
using Map = Eigen::Map<RowMat<S>>;

template <typename S>
Tensor<S> like(const Tensor<S>& t, Vec<S> data) {
  return Tensor<S>(t.shape(), std::move(data));
}

enum class Broadcast { None, LeftScalar, RightScalar };

template <typename S>
Broadcast broadcast_kind(const Var<S>& a, const Var<S>& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::None;
  if (a.shape().empty()) return Broadcast::LeftScalar;
  if (b.shape().empty()) return Broadcast::RightScalar;
  throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                   to_string(b.shape()));
}

// Reduce a full-size gradient onto an operand that may have been broadcast.
template <typename S>
void accumulate(Node<S>& target, const Vec<S>& g) {
  auto& buf = target.grad_buffer();
  if (buf.size() == g.size())
    buf.vec() += g;
  else
    buf[0] += g.sum();
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  const auto kind = broadcast_kind(a, b, "add");
  Tensor<S> out;
  if (kind == Broadcast::None)
    out = like(a.value(), a.value().vec() + b.value().vec());
  else if (kind == Broadcast::LeftScalar)
    out = like(b.value(), (b.value().vec().array() + a.value()[0]).matrix().eval());
  else
    out = like(a.value(), (a.value().vec().array() + b.value()[0]).matrix().eval());
  return Tape<S>::record(std::move(out), {a, b}, [](Node<S>& n) {
    for (std::size_t i = 0; i < 2; ++i)
      if (n.input_wants(i)) accumulate(n.input(i), n.grad.vec());
  });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  const auto kind = broadcast_kind(a, b, "sub");
  Tensor<S> out;
  if (kind == Broadcast::None)
    out = like(a.value(), a.value().vec() - b.value().vec());
  else if (kind == Broadcast::LeftScalar)
    out = like(b.value(), (a.value()[0] - b.value().vec().array()).matrix().eval());
  else
    out = like(a.value(), (a.value().vec().array() - b.value()[0]).matrix().eval());
  return Tape<S>::record(std::move(out), {a, b}, [](Node<S>& n) {
    if (n.input_wants(0)) accumulate(n.input(0), n.grad.vec());
    if (n.input_wants(1)) accumulate<S>(n.input(1), -n.grad.vec());
  });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  const auto kind = broadcast_kind(a, b, "mul");
  Tensor<S> out;
  if (kind == Broadcast::None)
    out = like(a.value(), a.value().vec().cwiseProduct(b.value().vec()));
  else if (kind == Broadcast::LeftScalar)
    out = like(b.value(), (b.value().vec() * a.value()[0]).eval());
  else
    out = like(a.value(), (a.value().vec() * b.value()[0]).eval());
  return Tape<S>::record(std::move(out), {a, b}, [kind](Node<S>& n) {
    const auto& g = n.grad.vec();
    const auto& av = n.input(0).value.vec();
    const auto& bv = n.input(1).value.vec();
    auto other = [&](const Vec<S>& v, bool scalar) -> Vec<S> {
      return scalar ? (g * v[0]).eval() : g.cwiseProduct(v).eval();
    };
    if (n.input_wants(0)) accumulate(n.input(0), other(bv, kind == Broadcast::RightScalar));
    if (n.input_wants(1)) accumulate(n.input(1), other(av, kind == Broadcast::LeftScalar));
  });
}

template <typename S>
Var<S> div(const Var<S>& a, const Var<S>& b) {
  const auto kind = broadcast_kind(a, b, "div");
  if (kind != Broadcast::None) {
    // Only tensor / scalar is needed in practice.
    if (kind == Broadcast::LeftScalar) throw ShapeError("div: scalar / tensor is not supported");
  }
  Tensor<S> out;
  if (kind == Broadcast::None)
    out = like(a.value(), a.value().vec().cwiseQuotient(b.value().vec()));
  else
    out = like(a.value(), (a.value().vec() / b.value()[0]).eval());
  return Tape<S>::record(std::move(out), {a, b}, [kind](Node<S>& n) {
    const auto& g = n.grad.vec();
    const auto& bv = n.input(1).value.vec();
    const auto& y = n.value.vec();
    if (kind == Broadcast::None) {
      if (n.input_wants(0)) accumulate<S>(n.input(0), g.cwiseQuotient(bv));
      if (n.input_wants(1))
        accumulate<S>(n.input(1), -(g.cwiseProduct(y)).cwiseQuotient(bv));
    } else {
      if (n.input_wants(0)) accumulate<S>(n.input(0), g / bv[0]);
      if (n.input_wants(1)) accumulate<S>(n.input(1), -(g.cwiseProduct(y)) / bv[0]);
    }
  });
}

template <typename S>
Var<S> scale(const Var<S>& a, S factor) {
  return Tape<S>::record(like(a.value(), (a.value().vec() * factor).eval()), {a},
                         [factor](Node<S>& n) {
                           n.input(0).grad_buffer().vec() += n.grad.vec() * factor;
                         });
}

template <typename S>
Var<S> add_scalar(const Var<S>& a, S offset) {
  return Tape<S>::record(like(a.value(), (a.value().vec().array() + offset).matrix().eval()),
                         {a}, [](Node<S>& n) { n.input(0).grad_buffer().vec() += n.grad.vec(); });
}

template <typename S>
Var<S> relu(const Var<S>& a) {
  auto out = like(a.value(), a.value().vec().cwiseMax(S(0)).eval());
  return Tape<S>::record(std::move(out), {a}, [](Node<S>& n) {
    const auto& x = n.input(0).value.vec();
    auto& gx = n.input(0).grad_buffer().vec();
    const auto& g = n.grad.vec();
    for (Index i = 0; i < g.size(); ++i)
      if (x[i] > S(0)) gx[i] += g[i];
  });
}

template <typename S>
Var<S> sigmoid(const Var<S>& a) {
  Vec<S> y = a.value().vec().unaryExpr([](S v) {
    // Split by sign so exp never overflows.
    if (v >= S(0)) return S(1) / (S(1) + std::exp(-v));
    const S e = std::exp(v);
    return e / (S(1) + e);
  });
  return Tape<S>::record(like(a.value(), std::move(y)), {a}, [](Node<S>& n) {
    const auto& y = n.value.vec().array();
    n.input(0).grad_buffer().vec().array() += n.grad.vec().array() * y * (S(1) - y);
  });
}

template <typename S>
Var<S> exp(const Var<S>& a) {
  auto out = like(a.value(), a.value().vec().array().exp().matrix().eval());
  return Tape<S>::record(std::move(out), {a}, [](Node<S>& n) {
    n.input(0).grad_buffer().vec() += n.grad.vec().cwiseProduct(n.value.vec());
  });
}

template <typename S>
Var<S> log(const Var<S>& a) {
  const auto& x = a.value().vec();
  if (x.size() > 0 && !(x.minCoeff() > S(0))) throw DomainError("log of non-positive value");
  auto out = like(a.value(), x.array().log().matrix().eval());
  return Tape<S>::record(std::move(out), {a}, [](Node<S>& n) {
    n.input(0).grad_buffer().vec() += n.grad.vec().cwiseQuotient(n.input(0).value.vec());
  });
}

template <typename S>
Var<S> clamp(const Var<S>& a, S lo, S hi) {
  if (lo > hi) throw ContractError("clamp: lo > hi");
  auto out = like(a.value(), a.value().vec().cwiseMax(lo).cwiseMin(hi).eval());
  return Tape<S>::record(std::move(out), {a}, [lo, hi](Node<S>& n) {
    const auto& x = n.input(0).value.vec();
    auto& gx = n.input(0).grad_buffer().vec();
    const auto& g = n.grad.vec();
    for (Index i = 0; i < g.size(); ++i)
      if (x[i] >= lo && x[i] <= hi) gx[i] += g[i];
  });
}

template <typename S>
Var<S> square(const Var<S>& a) {
  auto out = like(a.value(), a.value().vec().array().square().matrix().eval());
  return Tape<S>::record(std::move(out), {a}, [](Node<S>& n) {
    n.input(0).grad_buffer().vec() += S(2) * n.grad.vec().cwiseProduct(n.input(0).value.vec());
  });
}

template <typename S>
Var<S> pow_scalar(const Var<S>& a, S p) {
  const auto& x = a.value().vec();
  if (x.size() > 0 && !(x.minCoeff() > S(0))) throw DomainError("pow of non-positive value");
  auto out = like(a.value(), x.array().pow(p).matrix().eval());
  return Tape<S>::record(std::move(out), {a}, [p](Node<S>& n) {
    const auto& x = n.input(0).value.vec().array();
    n.input(0).grad_buffer().vec().array() += n.grad.vec().array() * p * x.pow(p - S(1));
  });
}

// ---------------------------------------------------------------------------
// reductions / shape

template <typename S>
Var<S> sum(const Var<S>& a) {
  return Tape<S>::record(Tensor<S>::scalar(a.value().vec().sum()), {a}, [](Node<S>& n) {
    n.input(0).grad_buffer().vec().array() += n.grad[0];
  });
}

template <typename S>
Var<S> mean(const Var<S>& a) {
  const Index count = a.value().size();
  if (count == 0) throw ContractError("mean of empty tensor");
  return Tape<S>::record(Tensor<S>::scalar(a.value().vec().sum() / S(count)), {a},
                         [count](Node<S>& n) {
                           n.input(0).grad_buffer().vec().array() += n.grad[0] / S(count);
                         });
}

template <typename S>
Var<S> channel_mean(const Var<S>& a) {
  if (a.shape().empty()) throw ShapeError("channel_mean needs rank >= 1");
  const Index c = a.dim(0);
  const Index inner = a.value().size() / std::max<Index>(c, 1);
  Tensor<S> out(Shape{c});
  auto m = a.value().matrix(c, inner);
  out.vec() = m.rowwise().mean();
  return Tape<S>::record(std::move(out), {a}, [c, inner](Node<S>& n) {
    auto gx = n.input(0).grad_buffer().matrix(c, inner);
    gx.colwise() += n.grad.vec() / S(inner);
  });
}

template <typename S>
Var<S> reshape(const Var<S>& a, Shape shape) {
  return Tape<S>::record(a.value().reshaped(std::move(shape)), {a}, [](Node<S>& n) {
    n.input(0).grad_buffer().vec() += n.grad.vec();
  });
}

template <typename S>
Var<S> concat(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ContractError("concat of nothing");
  Shape shape = parts[0].shape();
  if (shape.empty()) throw ShapeError("concat needs rank >= 1");
  Index rows = 0;
  for (const auto& p : parts) {
    Shape tail(p.shape().begin() + 1, p.shape().end());
    if (p.shape().size() != shape.size() || !std::equal(tail.begin(), tail.end(), shape.begin() + 1))
      throw ShapeError("concat: trailing dims differ, " + to_string(shape) + " vs " +
                       to_string(p.shape()));
    rows += p.dim(0);
  }
  shape[0] = rows;
  Tensor<S> out(shape);
  Index off = 0;
  for (const auto& p : parts) {
    out.vec().segment(off, p.value().size()) = p.value().vec();
    off += p.value().size();
  }
  return Tape<S>::record(std::move(out), parts, [](Node<S>& n) {
    Index off = 0;
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      const Index len = n.input(i).value.size();
      if (n.input_wants(i)) n.input(i).grad_buffer().vec() += n.grad.vec().segment(off, len);
      off += len;
    }
  });
}

template <typename S>
Var<S> slice(const Var<S>& a, Index begin, Index end) {
  if (a.shape().empty() || begin < 0 || end > a.dim(0) || begin >= end)
    throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of range for " + to_string(a.shape()));
  Shape shape = a.shape();
  const Index row = a.value().size() / shape[0];
  shape[0] = end - begin;
  Tensor<S> out(shape, a.value().vec().segment(begin * row, (end - begin) * row).eval());
  return Tape<S>::record(std::move(out), {a}, [begin, row](Node<S>& n) {
    n.input(0).grad_buffer().vec().segment(begin * row, n.grad.size()) += n.grad.vec();
  });
}

template <typename S>
Var<S> softmax(const Var<S>& a, Index axis) {
  const Shape& shape = a.shape();
  if (axis < 0 || axis >= Index(shape.size())) throw ShapeError("softmax axis out of range");
  Index outer = 1, inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= shape[i];
  for (Index i = axis + 1; i < Index(shape.size()); ++i) inner *= shape[i];
  const Index len = shape[axis];
  const auto& x = a.value();
  Tensor<S> y(shape);
  for (Index o = 0; o < outer; ++o)
    for (Index i = 0; i < inner; ++i) {
      const Index base = o * len * inner + i;
      S mx = x[base];
      for (Index j = 1; j < len; ++j) mx = std::max(mx, x[base + j * inner]);
      S total = 0;
      for (Index j = 0; j < len; ++j) {
        const S e = std::exp(x[base + j * inner] - mx);
        y[base + j * inner] = e;
        total += e;
      }
      for (Index j = 0; j < len; ++j) y[base + j * inner] /= total;
    }
  return Tape<S>::record(std::move(y), {a}, [outer, inner, len](Node<S>& n) {
    auto& gx = n.input(0).grad_buffer();
    for (Index o = 0; o < outer; ++o)
      for (Index i = 0; i < inner; ++i) {
        const Index base = o * len * inner + i;
        S dot = 0;
        for (Index j = 0; j < len; ++j) dot += n.grad[base + j * inner] * n.value[base + j * inner];
        for (Index j = 0; j < len; ++j) {
          const Index k = base + j * inner;
          gx[k] += n.value[k] * (n.grad[k] - dot);
        }
      }
  });
}

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2)
    throw ShapeError("matmul needs rank-2 operands");
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul inner dimension mismatch: " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  Tensor<S> out(Shape{m, n});
  out.matrix(m, n).noalias() = a.value().matrix(m, k) * b.value().matrix(k, n);
  return Tape<S>::record(std::move(out), {a, b}, [m, k, n](Node<S>& nd) {
    auto g = nd.grad.matrix(m, n);
    if (nd.input_wants(0))
      nd.input(0).grad_buffer().matrix(m, k).noalias() += g * nd.input(1).value.matrix(k, n).transpose();
    if (nd.input_wants(1))
      nd.input(1).grad_buffer().matrix(k, n).noalias() += nd.input(0).value.matrix(m, k).transpose() * g;
  });
}

template <typename S>
Var<S> transpose(const Var<S>& a) {
  if (a.shape().size() != 2) throw ShapeError("transpose needs a rank-2 operand");
  const Index m = a.dim(0), n = a.dim(1);
  Tensor<S> out(Shape{n, m});
  out.matrix(n, m) = a.value().matrix(m, n).transpose();
  return Tape<S>::record(std::move(out), {a}, [m, n](Node<S>& nd) {
    nd.input(0).grad_buffer().matrix(m, n) += nd.grad.matrix(n, m).transpose();
  });
}

// ---------------------------------------------------------------------------
// convolutions

namespace detail {

template <typename S>
void im2col(const S* x, Index channels, Index height, Index width, int k, int stride, int pad,
            Index out_h, Index out_w, S* col) {
  const Index plane = out_h * out_w;
  for (Index c = 0; c < channels; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        S* row = col + ((c * k + ki) * k + kj) * plane;
        for (Index oh = 0; oh < out_h; ++oh) {
          const Index ih = oh * stride - pad + ki;
          S* dst = row + oh * out_w;
          if (ih < 0 || ih >= height) {
            std::fill(dst, dst + out_w, S(0));
            continue;
          }
          const S* src = x + (c * height + ih) * width;
          for (Index ow = 0; ow < out_w; ++ow) {
            const Index iw = ow * stride - pad + kj;
            dst[ow] = (iw >= 0 && iw < width) ? src[iw] : S(0);
          }
        }
      }
}

template <typename S>
void col2im(const S* col, Index channels, Index height, Index width, int k, int stride, int pad,
            Index out_h, Index out_w, S* x) {
  const Index plane = out_h * out_w;
  for (Index c = 0; c < channels; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        const S* row = col + ((c * k + ki) * k + kj) * plane;
        for (Index oh = 0; oh < out_h; ++oh) {
          const Index ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= height) continue;
          S* dst = x + (c * height + ih) * width;
          const S* src = row + oh * out_w;
          for (Index ow = 0; ow < out_w; ++ow) {
            const Index iw = ow * stride - pad + kj;
            if (iw >= 0 && iw < width) dst[iw] += src[ow];
          }
        }
      }
}

}  // namespace detail

namespace {

void check_conv_config(int k, int stride) {
  if (k < 1 || k % 2 == 0) throw ConfigError("kernel size must be odd, got " + std::to_string(k));
  if (stride != 1 && stride != 2) throw ConfigError("stride must be 1 or 2");
}

template <typename S>
void check_bias(const Var<S>& bias, Index channels, const char* op) {
  if (bias.shape() != Shape{channels})
    throw ShapeError(std::string(op) + ": bias shape " + to_string(bias.shape()) + ", expected [" +
                     std::to_string(channels) + "]");
}

}  // namespace

template <typename S>
Var<S> conv2d(const Var<S>& input, const Var<S>& weight, const Var<S>& bias, int stride,
              int padding) {
  if (input.shape().size() != 3 || weight.shape().size() != 4)
    throw ShapeError("conv2d expects [C,H,W] input and [Cout,Cin,k,k] weight");
  const Index cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const Index cout = weight.dim(0);
  const int k = int(weight.dim(2));
  if (weight.dim(1) != cin)
    throw ShapeError("conv2d: input has " + std::to_string(cin) + " channels, weight expects " +
                     std::to_string(weight.dim(1)));
  if (weight.dim(3) != k) throw ShapeError("conv2d: non-square kernel");
  check_conv_config(k, stride);
  check_bias(bias, cout, "conv2d");
  if (h + 2 * padding < k || w + 2 * padding < k) throw ShapeError("conv2d: input smaller than kernel");
  const Index oh = (h + 2 * padding - k) / stride + 1;
  const Index ow = (w + 2 * padding - k) / stride + 1;
  const Index patch = cin * k * k, plane = oh * ow;

  RowMat<S> col(patch, plane);
  detail::im2col(input.value().data(), cin, h, w, k, stride, padding, oh, ow, col.data());
  Tensor<S> out(Shape{cout, oh, ow});
  auto om = out.matrix(cout, plane);
  om.noalias() = weight.value().matrix(cout, patch) * col;
  om.colwise() += bias.value().vec();

  return Tape<S>::record(
      std::move(out), {input, weight, bias},
      [=](Node<S>& n) {
        auto g = n.grad.matrix(cout, plane);
        const auto& x = n.input(0).value;
        const auto wm = n.input(1).value.matrix(cout, patch);
        if (n.input_wants(1)) {
          RowMat<S> c(patch, plane);
          detail::im2col(x.data(), cin, h, w, k, stride, padding, oh, ow, c.data());
          n.input(1).grad_buffer().matrix(cout, patch).noalias() += g * c.transpose();
        }
        if (n.input_wants(2)) n.input(2).grad_buffer().vec() += g.rowwise().sum();
        if (n.input_wants(0)) {
          RowMat<S> dcol(patch, plane);
          dcol.noalias() = wm.transpose() * g;
          detail::col2im(dcol.data(), cin, h, w, k, stride, padding, oh, ow,
                         n.input(0).grad_buffer().data());
        }
      });
}

template <typename S>
Var<S> deconv2d(const Var<S>& input, const Var<S>& weight, const Var<S>& bias, int stride) {
  if (input.shape().size() != 3 || weight.shape().size() != 4)
    throw ShapeError("deconv2d expects [Cin,h,w] input and [Cin,Cout,k,k] weight");
  const Index cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const Index cout = weight.dim(1);
  const int k = int(weight.dim(2));
  if (weight.dim(0) != cin)
    throw ShapeError("deconv2d: input has " + std::to_string(cin) + " channels, weight expects " +
                     std::to_string(weight.dim(0)));
  if (weight.dim(3) != k) throw ShapeError("deconv2d: non-square kernel");
  check_conv_config(k, stride);
  check_bias(bias, cout, "deconv2d");
  const int pad = (k - 1) / 2;
  const Index out_h = stride * h, out_w = stride * w;
  const Index patch = cout * k * k, plane = h * w;

  RowMat<S> col(patch, plane);
  col.noalias() = weight.value().matrix(cin, patch).transpose() * input.value().matrix(cin, plane);
  Tensor<S> out(Shape{cout, out_h, out_w});
  detail::col2im(col.data(), cout, out_h, out_w, k, stride, pad, h, w, out.data());
  out.matrix(cout, out_h * out_w).colwise() += bias.value().vec();

  return Tape<S>::record(
      std::move(out), {input, weight, bias},
      [=](Node<S>& n) {
        RowMat<S> gcol(patch, plane);
        detail::im2col(n.grad.data(), cout, out_h, out_w, k, stride, pad, h, w, gcol.data());
        if (n.input_wants(0))
          n.input(0).grad_buffer().matrix(cin, plane).noalias() +=
              n.input(1).value.matrix(cin, patch) * gcol;
        if (n.input_wants(1))
          n.input(1).grad_buffer().matrix(cin, patch).noalias() +=
              n.input(0).value.matrix(cin, plane) * gcol.transpose();
        if (n.input_wants(2))
          n.input(2).grad_buffer().vec() += n.grad.matrix(cout, out_h * out_w).rowwise().sum();
      });
}

template <typename S>
Tensor<S> causal_mask(int k, MaskType type) {
  if (k < 1 || k % 2 == 0) throw ConfigError("masked kernel size must be odd, got " + std::to_string(k));
  const int r = (k - 1) / 2;
  Tensor<S> mask(Shape{k, k, k});
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b)
      for (int c = 0; c < k; ++c) {
        const int dd = a - r, dh = b - r, dw = c - r;
        const bool before = dd < 0 || (dd == 0 && (dh < 0 || (dh == 0 && dw < 0)));
        const bool center = dd == 0 && dh == 0 && dw == 0;
        mask.at({a, b, c}) = (before || (center && type == MaskType::B)) ? S(1) : S(0);
      }
  return mask;
}

namespace {

template <typename S>
void im2col3d(const S* x, Index feats, Index d, Index h, Index w, int k, S* col) {
  const int r = (k - 1) / 2;
  const Index vol = d * h * w;
  for (Index f = 0; f < feats; ++f)
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b)
        for (int c = 0; c < k; ++c) {
          S* row = col + (((f * k + a) * k + b) * k + c) * vol;
          for (Index z = 0; z < d; ++z) {
            const Index iz = z + a - r;
            for (Index y = 0; y < h; ++y) {
              const Index iy = y + b - r;
              S* dst = row + (z * h + y) * w;
              if (iz < 0 || iz >= d || iy < 0 || iy >= h) {
                std::fill(dst, dst + w, S(0));
                continue;
              }
              const S* src = x + ((f * d + iz) * h + iy) * w;
              for (Index xx = 0; xx < w; ++xx) {
                const Index ix = xx + c - r;
                dst[xx] = (ix >= 0 && ix < w) ? src[ix] : S(0);
              }
            }
          }
        }
}

template <typename S>
void col2im3d(const S* col, Index feats, Index d, Index h, Index w, int k, S* x) {
  const int r = (k - 1) / 2;
  const Index vol = d * h * w;
  for (Index f = 0; f < feats; ++f)
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b)
        for (int c = 0; c < k; ++c) {
          const S* row = col + (((f * k + a) * k + b) * k + c) * vol;
          for (Index z = 0; z < d; ++z) {
            const Index iz = z + a - r;
            if (iz < 0 || iz >= d) continue;
            for (Index y = 0; y < h; ++y) {
              const Index iy = y + b - r;
              if (iy < 0 || iy >= h) continue;
              S* dst = x + ((f * d + iz) * h + iy) * w;
              const S* src = row + (z * h + y) * w;
              for (Index xx = 0; xx < w; ++xx) {
                const Index ix = xx + c - r;
                if (ix >= 0 && ix < w) dst[ix] += src[xx];
              }
            }
          }
        }
}

}  // namespace

template <typename S>
Var<S> conv3d_masked(const Var<S>& input, const Var<S>& weight, const Var<S>& bias,
                     MaskType type) {
  if (input.shape().size() != 4 || weight.shape().size() != 5)
    throw ShapeError("conv3d_masked expects [F,D,H,W] input and [Fout,Fin,k,k,k] weight");
  const int k = int(weight.dim(2));
  if (k % 2 == 0) throw ConfigError("masked kernel size must be odd, got " + std::to_string(k));
  if (weight.dim(3) != k || weight.dim(4) != k) throw ShapeError("conv3d_masked: non-cubic kernel");
  const Index fin = input.dim(0), d = input.dim(1), h = input.dim(2), w = input.dim(3);
  const Index fout = weight.dim(0);
  if (weight.dim(1) != fin)
    throw ShapeError("conv3d_masked: input has " + std::to_string(fin) +
                     " features, weight expects " + std::to_string(weight.dim(1)));
  check_bias(bias, fout, "conv3d_masked");
  const Index taps = Index(k) * k * k, patch = fin * taps, vol = d * h * w;

  // Mask replicated across [Fout, Fin].
  const Tensor<S> tap_mask = causal_mask<S>(k, type);
  RowMat<S> mask(fout, patch);
  for (Index o = 0; o < fout; ++o)
    for (Index f = 0; f < fin; ++f) mask.row(o).segment(f * taps, taps) = tap_mask.vec().transpose();
  RowMat<S> wm = weight.value().matrix(fout, patch).cwiseProduct(mask);

  RowMat<S> col(patch, vol);
  im2col3d(input.value().data(), fin, d, h, w, k, col.data());
  Tensor<S> out(Shape{fout, d, h, w});
  auto om = out.matrix(fout, vol);
  om.noalias() = wm * col;
  om.colwise() += bias.value().vec();

  return Tape<S>::record(
      std::move(out), {input, weight, bias},
      [=, wm = std::move(wm), mask = std::move(mask)](Node<S>& n) {
        auto g = n.grad.matrix(fout, vol);
        if (n.input_wants(1)) {
          RowMat<S> c(patch, vol);
          im2col3d(n.input(0).value.data(), fin, d, h, w, k, c.data());
          RowMat<S> gw = (g * c.transpose()).cwiseProduct(mask);
          n.input(1).grad_buffer().matrix(fout, patch) += gw;
        }
        if (n.input_wants(2)) n.input(2).grad_buffer().vec() += g.rowwise().sum();
        if (n.input_wants(0)) {
          RowMat<S> dcol = wm.transpose() * g;
          col2im3d(dcol.data(), fin, d, h, w, k, n.input(0).grad_buffer().data());
        }
      });
}

// ---------------------------------------------------------------------------
// image filters

namespace {

// Symmetric ("half-sample") reflection: -1 -> 0, -2 -> 1, n -> n-1.
Index reflect(Index i, Index n) {
  if (n == 1) return 0;
  const Index period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

std::vector<double> gaussian_taps(int size, double sigma) {
  std::vector<double> taps(static_cast<std::size_t>(size));
  const int r = size / 2;
  double total = 0;
  for (int i = 0; i < size; ++i) {
    taps[std::size_t(i)] = std::exp(-double((i - r) * (i - r)) / (2 * sigma * sigma));
    total += taps[std::size_t(i)];
  }
  for (auto& t : taps) t /= total;
  return taps;
}

// One separable pass along rows (horizontal) or columns. adjoint=true scatters.
template <typename S>
void blur_pass(const S* src, S* dst, Index c, Index h, Index w, const std::vector<S>& taps,
               bool horizontal, bool adjoint) {
  const int r = int(taps.size()) / 2;
  for (Index ch = 0; ch < c; ++ch) {
    const S* in = src + ch * h * w;
    S* out = dst + ch * h * w;
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        const Index o = y * w + x;
        S acc = 0;
        for (int t = -r; t <= r; ++t) {
          const Index i = horizontal ? y * w + reflect(x + t, w) : reflect(y + t, h) * w + x;
          if (adjoint)
            out[i] += taps[std::size_t(t + r)] * in[o];
          else
            acc += taps[std::size_t(t + r)] * in[i];
        }
        if (!adjoint) out[o] = acc;
      }
  }
}

}  // namespace

template <typename S>
Var<S> gaussian_blur(const Var<S>& a, int size, double sigma) {
  if (a.shape().size() != 3) throw ShapeError("gaussian_blur expects [C,H,W]");
  if (size < 1 || size % 2 == 0) throw ConfigError("gaussian window must be odd");
  const Index c = a.dim(0), h = a.dim(1), w = a.dim(2);
  std::vector<S> taps;
  for (double t : gaussian_taps(size, sigma)) taps.push_back(S(t));
  Tensor<S> tmp(a.shape()), out(a.shape());
  blur_pass(a.value().data(), tmp.data(), c, h, w, taps, true, false);
  blur_pass(tmp.data(), out.data(), c, h, w, taps, false, false);
  return Tape<S>::record(std::move(out), {a}, [c, h, w, taps](Node<S>& n) {
    Tensor<S> tmp(n.value.shape());
    blur_pass(n.grad.data(), tmp.data(), c, h, w, taps, false, true);
    blur_pass(tmp.data(), n.input(0).grad_buffer().data(), c, h, w, taps, true, true);
  });
}

template <typename S>
Var<S> avg_pool2(const Var<S>& a) {
  if (a.shape().size() != 3) throw ShapeError("avg_pool2 expects [C,H,W]");
  const Index c = a.dim(0), h = a.dim(1), w = a.dim(2);
  const Index oh = h / 2, ow = w / 2;
  if (oh == 0 || ow == 0) throw ShapeError("avg_pool2: input too small");
  Tensor<S> out(Shape{c, oh, ow});
  const auto& x = a.value();
  for (Index ch = 0; ch < c; ++ch)
    for (Index y = 0; y < oh; ++y)
      for (Index xx = 0; xx < ow; ++xx) {
        const Index base = (ch * h + 2 * y) * w + 2 * xx;
        out[(ch * oh + y) * ow + xx] =
            (x[base] + x[base + 1] + x[base + w] + x[base + w + 1]) * S(0.25);
      }
  return Tape<S>::record(std::move(out), {a}, [c, h, w, oh, ow](Node<S>& n) {
    auto& gx = n.input(0).grad_buffer();
    for (Index ch = 0; ch < c; ++ch)
      for (Index y = 0; y < oh; ++y)
        for (Index xx = 0; xx < ow; ++xx) {
          const S g = n.grad[(ch * oh + y) * ow + xx] * S(0.25);
          const Index base = (ch * h + 2 * y) * w + 2 * xx;
          gx[base] += g;
          gx[base + 1] += g;
          gx[base + w] += g;
          gx[base + w + 1] += g;
        }
  });
}

// ---------------------------------------------------------------------------

#define NLAIC_INSTANTIATE_OPS(S)                                                             \
  template Var<S> add(const Var<S>&, const Var<S>&);                                        \
  template Var<S> sub(const Var<S>&, const Var<S>&);                                        \
  template Var<S> mul(const Var<S>&, const Var<S>&);                                        \
  template Var<S> div(const Var<S>&, const Var<S>&);                                        \
  template Var<S> scale(const Var<S>&, S);                                                  \
  template Var<S> add_scalar(const Var<S>&, S);                                             \
  template Var<S> relu(const Var<S>&);                                                      \
  template Var<S> sigmoid(const Var<S>&);                                                   \
  template Var<S> exp(const Var<S>&);                                                       \
  template Var<S> log(const Var<S>&);                                                       \
  template Var<S> clamp(const Var<S>&, S, S);                                               \
  template Var<S> square(const Var<S>&);                                                    \
  template Var<S> pow_scalar(const Var<S>&, S);                                             \
  template Var<S> sum(const Var<S>&);                                                       \
  template Var<S> mean(const Var<S>&);                                                      \
  template Var<S> channel_mean(const Var<S>&);                                              \
  template Var<S> reshape(const Var<S>&, Shape);                                            \
  template Var<S> concat(const std::vector<Var<S>>&);                                       \
  template Var<S> slice(const Var<S>&, Index, Index);                                       \
  template Var<S> softmax(const Var<S>&, Index);                                            \
  template Var<S> matmul(const Var<S>&, const Var<S>&);                                     \
  template Var<S> transpose(const Var<S>&);                                                 \
  template Var<S> conv2d(const Var<S>&, const Var<S>&, const Var<S>&, int, int);            \
  template Var<S> deconv2d(const Var<S>&, const Var<S>&, const Var<S>&, int);               \
  template Var<S> conv3d_masked(const Var<S>&, const Var<S>&, const Var<S>&, MaskType);     \
  template Tensor<S> causal_mask<S>(int, MaskType);                                         \
  template Var<S> gaussian_blur(const Var<S>&, int, double);                                \
  template Var<S> avg_pool2(const Var<S>&);                                                 \
  template void detail::im2col(const S*, Index, Index, Index, int, int, int, Index, Index, S*); \
  template void detail::col2im(const S*, Index, Index, Index, int, int, int, Index, Index, S*);

NLAIC_INSTANTIATE_OPS(float)
NLAIC_INSTANTIATE_OPS(double)

#undef NLAIC_INSTANTIATE_OPS

}  // namespace nlaic
