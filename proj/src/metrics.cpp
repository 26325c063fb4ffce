#include "nlaic/metrics.hpp"

#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace nlaic {

std::string Psnr::str() const {
  if (lossless) return "lossless";
  std::ostringstream os;
  os.precision(4);
  os << std::fixed << db;
  return os.str();
}

double mse(const Tensor<double>& a, const Tensor<double>& b) {
  require_shape(b, a.shape(), "mse");
  if (a.size() == 0) throw ContractError("mse of empty tensors");
  return (a.vec() - b.vec()).squaredNorm() / double(a.size());
}

Psnr psnr_from_mse(double m) {
  if (m < 0 || !std::isfinite(m)) throw DomainError("psnr: invalid mse");
  if (m == 0) return {std::numeric_limits<double>::infinity(), true};
  return {10.0 * std::log10(255.0 * 255.0 / m), false};
}

Psnr psnr(const Tensor<double>& a, const Tensor<double>& b) { return psnr_from_mse(mse(a, b)); }

int default_ms_ssim_scales(Index height, Index width) {
  const Index m = std::min(height, width);
  int scales = 0;
  while (scales < 5 && m >= Index(kSsimWindow) << scales) ++scales;
  return scales;
}

template <typename S>
Var<S> ms_ssim(const Var<S>& x, const Var<S>& y, int scales, double data_range) {
  if (x.shape() != y.shape() || x.shape().size() != 3)
    throw ShapeError("ms_ssim expects equal [C,H,W] shapes, got " + to_string(x.shape()) + " and " +
                     to_string(y.shape()));
  const Index h = x.dim(1), w = x.dim(2);
  if (scales <= 0) scales = default_ms_ssim_scales(h, w);
  if (scales > 5) throw ContractError("ms_ssim supports at most 5 scales");
  if (std::min(h, w) < (Index(kSsimWindow) << (scales - 1)) || scales <= 0)
    throw ContractError("image " + to_string(x.shape()) + " too small for " +
                        std::to_string(std::max(scales, 1)) + " MS-SSIM scales");
  const S c1 = S(std::pow(0.01 * data_range, 2)), c2 = S(std::pow(0.03 * data_range, 2));
  double wsum = 0;
  for (int s = 0; s < scales; ++s) wsum += kMsSsimWeights[std::size_t(s)];

  auto blur = [](const Var<S>& v) { return gaussian_blur(v, kSsimWindow, kSsimSigma); };
  // cs can go negative for anticorrelated content; the floor keeps pow defined.
  const S floor = S(1e-6);
  Var<S> a = x, b = y, product;
  for (int s = 0; s < scales; ++s) {
    auto mu_a = blur(a), mu_b = blur(b);
    auto mu_aa = mu_a * mu_a, mu_bb = mu_b * mu_b, mu_ab = mu_a * mu_b;
    auto s_aa = blur(a * a) - mu_aa;
    auto s_bb = blur(b * b) - mu_bb;
    auto s_ab = blur(a * b) - mu_ab;
    auto cs_map = add_scalar(scale(s_ab, S(2)), c2) / add_scalar(s_aa + s_bb, c2);
    Var<S> term;
    if (s + 1 < scales) {
      term = channel_mean(cs_map);
    } else {
      auto l_map = add_scalar(scale(mu_ab, S(2)), c1) / add_scalar(mu_aa + mu_bb, c1);
      term = channel_mean(l_map * cs_map);
    }
    const S weight = S(kMsSsimWeights[std::size_t(s)] / wsum);
    auto factor = pow_scalar(clamp(term, floor, S(1e6)), weight);
    product = s == 0 ? factor : product * factor;
    if (s + 1 < scales) {
      a = avg_pool2(a);
      b = avg_pool2(b);
    }
  }
  return mean(product);
}

double ms_ssim(const Tensor<double>& x, const Tensor<double>& y, int scales, double data_range) {
  return ms_ssim(Var<double>::constant(x), Var<double>::constant(y), scales, data_range)
      .value()
      .item();
}

double ms_ssim_db(double d) {
  if (!(d < 1.0)) return kMsSsimDbCap;
  return std::min(kMsSsimDbCap, -10.0 * std::log10(1.0 - d));
}

template Var<float> ms_ssim(const Var<float>&, const Var<float>&, int, double);
template Var<double> ms_ssim(const Var<double>&, const Var<double>&, int, double);

// ---------------------------------------------------------------------------

namespace {

struct Fit {
  Eigen::Vector4d coef;  // c0 + c1 d + c2 d^2 + c3 d^3
  double lo, hi;
};

Fit fit_log_rate(const RDCurve& curve, DistortionAxis axis) {
  const auto& pts = curve.points;
  if (pts.size() < 4)
    throw ContractError("bd_rate: curve '" + curve.label + "' needs at least 4 points");
  std::vector<RDPoint> sorted = pts;
  std::sort(sorted.begin(), sorted.end(), [](auto& p, auto& q) { return p.bpp < q.bpp; });
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (!(sorted[i].bpp > sorted[i - 1].bpp))
      throw ContractError("bd_rate: curve '" + curve.label + "' has repeated bpp values");
  const Index n = Index(sorted.size());
  Eigen::MatrixXd A(n, 4);
  Eigen::VectorXd r(n);
  Fit f{{}, std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (Index i = 0; i < n; ++i) {
    const auto& p = sorted[std::size_t(i)];
    if (!(p.bpp > 0)) throw ContractError("bd_rate: bpp must be positive");
    const double d = axis == DistortionAxis::PsnrDb ? p.psnr_db : p.ms_ssim_db;
    if (!std::isfinite(d)) throw ContractError("bd_rate: non-finite distortion value");
    A.row(i) << 1.0, d, d * d, d * d * d;
    r(i) = std::log(p.bpp);
    f.lo = std::min(f.lo, d);
    f.hi = std::max(f.hi, d);
  }
  f.coef = A.colPivHouseholderQr().solve(r);
  return f;
}

double integrate(const Eigen::Vector4d& c, double lo, double hi) {
  auto prim = [&](double d) {
    return c(0) * d + c(1) * d * d / 2 + c(2) * d * d * d / 3 + c(3) * d * d * d * d / 4;
  };
  return prim(hi) - prim(lo);
}

}  // namespace

double bd_rate(const RDCurve& anchor, const RDCurve& test, DistortionAxis axis) {
  const Fit fa = fit_log_rate(anchor, axis), ft = fit_log_rate(test, axis);
  const double lo = std::max(fa.lo, ft.lo), hi = std::min(fa.hi, ft.hi);
  if (!(hi > lo)) throw ContractError("bd_rate: curves have no distortion overlap");
  const double avg = (integrate(ft.coef, lo, hi) - integrate(fa.coef, lo, hi)) / (hi - lo);
  return (std::exp(avg) - 1.0) * 100.0;
}

std::vector<RDCurve> parse_rd_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<RDCurve> curves;
  int lineno = 0;
  bool header = false;
  auto fail = [&](const std::string& msg) {
    throw FormatError("rd csv line " + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.push_back("");
    if (!header) {
      if (cells != std::vector<std::string>{"label", "bpp", "psnr_db", "ms_ssim"})
        fail("expected header 'label,bpp,psnr_db,ms_ssim'");
      header = true;
      continue;
    }
    if (cells.size() != 4) fail("expected 4 fields, got " + std::to_string(cells.size()));
    if (cells[0].empty()) fail("empty label");
    double v[3];
    for (int k = 0; k < 3; ++k) {
      const std::string& s = cells[std::size_t(k + 1)];
      std::size_t used = 0;
      try {
        v[k] = std::stod(s, &used);
      } catch (const std::exception&) {
        fail("field " + std::to_string(k + 2) + " is not a number: '" + s + "'");
      }
      if (used != s.size() || !std::isfinite(v[k]))
        fail("field " + std::to_string(k + 2) + " is not a finite number: '" + s + "'");
    }
    if (!(v[0] > 0)) fail("bpp must be positive");
    if (v[2] < 0 || v[2] > 1) fail("ms_ssim must lie in [0, 1]");
    auto it = std::find_if(curves.begin(), curves.end(),
                           [&](const RDCurve& c) { return c.label == cells[0]; });
    if (it == curves.end()) {
      curves.push_back({cells[0], {}});
      it = curves.end() - 1;
    }
    RDPoint p;
    p.bpp = p.bpp_est = v[0];
    p.psnr_db = v[1];
    p.mse = 255.0 * 255.0 / std::pow(10.0, v[1] / 10.0);
    p.ms_ssim = v[2];
    p.ms_ssim_db = ms_ssim_db(v[2]);
    it->points.push_back(p);
  }
  if (!header) throw FormatError("rd csv: missing header");
  return curves;
}

std::vector<RDCurve> read_rd_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_rd_csv(ss.str());
}

}  // namespace nlaic
