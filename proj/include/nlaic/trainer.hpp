#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nlaic/codec_net.hpp"
#include "nlaic/metrics.hpp"

namespace nlaic {

enum class LossKind { Mse, MsSsim };

struct TrainConfig {
  double lambda = 1000.0;
  LossKind loss = LossKind::Mse;
  double lr_main = 5e-4;
  double lr_context_clip = 1e-5;
  int context_clip_epoch = 30;  // context lr drops to lr_context_clip from this epoch on
  int batch_size = 4;
  int patch_size = 64;
  int epochs = 1;
  int max_steps = 0;  // 0: no limit
  std::uint64_t seed = 1;
  double grad_clip = 5.0;
  double tail_weight = 1.0;  // weight of the prior tail penalty
  bool freeze_pretrained = false;  // train only context.* (refinement variant)
  bool freeze_autoencoder = false;  // keep main_enc/main_dec fixed, train the entropy side
  std::string out_dir;  // if set: rd_log.csv and per-epoch checkpoints

  void validate() const;
};

// lambda * d + (R_y + R_z) / pixels, d = MSE on [0,1] or 1 - MS-SSIM.
template <typename S>
Var<S> rdo_loss(const Var<S>& x, const Var<S>& x_hat, const Var<S>& rate_y, const Var<S>& rate_z,
                double lambda, LossKind kind);

// Adam with (0.9, 0.999) moments. Parameters without any gradient are left
// untouched and keep their moment state.
class Adam {
 public:
  explicit Adam(const ParamSet<float>& params, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  // grads[i] empty (size 0) means no gradient for parameter i.
  void step(ParamSet<float>& params, const std::vector<Tensor<float>>& grads,
            const std::function<double(const std::string&)>& lr);
  long steps() const { return t_; }

 private:
  double b1_, b2_, eps_;
  long t_ = 0;
  std::vector<Tensor<float>> m_, v_;
  std::vector<long> count_;
};

// Scales grads in place so the global L2 norm is at most max_norm; returns
// the norm before clipping.
double clip_global_norm(std::vector<Tensor<float>>& grads, double max_norm);

struct EpochLog {
  int epoch = 0;
  long step = 0;
  double lambda = 0, loss = 0;
  RDPoint rd;
};

inline constexpr const char* kRdLogHeader = "epoch,step,lambda,loss,bpp_est,mse,psnr_db,ms_ssim,ms_ssim_db";
std::string rd_log_row(const EpochLog& e);

struct TrainResult {
  std::vector<double> step_loss;  // rdo loss (without tail penalty) per step
  std::vector<EpochLog> epochs;
};

// Trains `params` in place over `dataset` (each [3,P,P] in [0,1]).
// Throws NumericError naming the first non-finite tensor.
TrainResult train_loop(ParamSet<float>& params, const NetConfig& net,
                       const std::vector<Tensor<float>>& dataset, const TrainConfig& cfg);

struct EvalResult {
  RDPoint rd;
  double loss = 0;
};

// Inference-mode estimate over images; distortion measured on the 8-bit
// reconstruction.
EvalResult evaluate(const ParamSet<float>& params, const NetConfig& net,
                    const std::vector<Tensor<float>>& images, double lambda, LossKind kind);

// Joint model initialized from a baseline checkpoint plus fresh context params.
// Throws ContractError if the baseline is not baseline-mode or N differs.
Checkpoint refine_joint(const Checkpoint& baseline, const NetConfig& target,
                        const std::vector<Tensor<float>>& dataset, const TrainConfig& cfg,
                        TrainResult* result = nullptr);

// Procedural textures (gratings, gradients, shapes, mild noise) in [0,1].
std::vector<Tensor<float>> synthetic_dataset(int count, int size, std::uint64_t seed);
// Random size x size crops from every PPM in a folder, `per_image` each.
std::vector<Tensor<float>> folder_dataset(const std::string& dir, int size, int per_image,
                                          std::uint64_t seed);

}  // namespace nlaic
