#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "nlaic/ops.hpp"

namespace nlaic {

// --- PSNR --------------------------------------------------------------------

struct Psnr {
  double db = 0;  // +inf when lossless
  bool lossless = false;
  std::string str() const;
};

// Mean squared error between equal-shape tensors.
double mse(const Tensor<double>& a, const Tensor<double>& b);
// 10 log10(255^2 / mse) for 8-bit-range data.
Psnr psnr_from_mse(double mse);
Psnr psnr(const Tensor<double>& a, const Tensor<double>& b);

// --- MS-SSIM -----------------------------------------------------------------

inline constexpr std::array<double, 5> kMsSsimWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kMsSsimDbCap = 80.0;

// Largest scale count (<= 5) with min(H,W) >= 11 * 2^(scales-1).
int default_ms_ssim_scales(Index height, Index width);

// Differentiable MS-SSIM of two [C,H,W] images with values in [0, data_range].
// Computed per channel and averaged. scales <= 0 picks the default.
template <typename S>
Var<S> ms_ssim(const Var<S>& x, const Var<S>& y, int scales = 0, double data_range = 1.0);

double ms_ssim(const Tensor<double>& x, const Tensor<double>& y, int scales = 0,
               double data_range = 1.0);

// -10 log10(1 - d), capped at kMsSsimDbCap.
double ms_ssim_db(double d);

// --- RD curves and BD-rate ---------------------------------------------------

struct RDPoint {
  double bpp = 0;         // actual when coded, else estimated
  double bpp_est = 0;
  double mse = 0;         // 8-bit scale
  double psnr_db = 0;
  double ms_ssim = 0;
  double ms_ssim_db = 0;
};

struct RDCurve {
  std::string label;
  std::vector<RDPoint> points;
};

enum class DistortionAxis { PsnrDb, MsSsimDb };

// Average rate difference of test vs anchor in percent (negative = savings),
// from cubic fits of ln(bpp) against distortion over the shared interval.
double bd_rate(const RDCurve& anchor, const RDCurve& test,
               DistortionAxis axis = DistortionAxis::PsnrDb);

// CSV "label,bpp,psnr_db,ms_ssim" (header required). Curves keep file order.
std::vector<RDCurve> parse_rd_csv(const std::string& text);
std::vector<RDCurve> read_rd_csv(const std::string& path);

}  // namespace nlaic
