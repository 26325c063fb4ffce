#include "nlaic/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "nlaic/image.hpp"

namespace nlaic {

void TrainConfig::validate() const {
  if (!(lambda >= 0)) throw ConfigError("lambda must be >= 0");
  if (!(lr_main > 0) || !(lr_context_clip > 0)) throw ConfigError("learning rates must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (patch_size < 64 || patch_size % 64 != 0) throw ConfigError("patch_size must be a multiple of 64");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
  if (!(grad_clip > 0)) throw ConfigError("grad_clip must be > 0");
}

template <typename S>
Var<S> rdo_loss(const Var<S>& x, const Var<S>& x_hat, const Var<S>& rate_y, const Var<S>& rate_z,
                double lambda, LossKind kind) {
  if (x.shape() != x_hat.shape() || x.shape().size() != 3)
    throw ShapeError("rdo_loss: x and x_hat must share a [C,H,W] shape");
  const S pixels = S(x.dim(1) * x.dim(2));
  Var<S> d = kind == LossKind::Mse ? mean(square(x_hat - x))
                                   : add_scalar(scale(ms_ssim(x, x_hat), S(-1)), S(1));
  return scale(d, S(lambda)) + scale(rate_y + rate_z, S(1) / pixels);
}

template Var<float> rdo_loss(const Var<float>&, const Var<float>&, const Var<float>&,
                             const Var<float>&, double, LossKind);
template Var<double> rdo_loss(const Var<double>&, const Var<double>&, const Var<double>&,
                              const Var<double>&, double, LossKind);

// ---------------------------------------------------------------------------

Adam::Adam(const ParamSet<float>& params, double beta1, double beta2, double eps)
    : b1_(beta1), b2_(beta2), eps_(eps), count_(params.size(), 0) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.push_back(Tensor<float>::zeros(params.at(i).shape()));
    v_.push_back(Tensor<float>::zeros(params.at(i).shape()));
  }
}

void Adam::step(ParamSet<float>& params, const std::vector<Tensor<float>>& grads,
                const std::function<double(const std::string&)>& lr) {
  if (grads.size() != params.size() || m_.size() != params.size())
    throw ContractError("Adam: parameter/gradient count mismatch");
  ++t_;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g = grads[i];
    if (g.size() == 0) continue;
    require_shape(g, params.at(i).shape(), "Adam gradient");
    if (g.vec().isZero(0)) continue;
    const long t = ++count_[i];
    auto& m = m_[i].vec();
    auto& v = v_[i].vec();
    m = float(b1_) * m + float(1 - b1_) * g.vec();
    v = float(b2_) * v + float(1 - b2_) * g.vec().cwiseProduct(g.vec());
    const double c1 = 1 - std::pow(b1_, double(t)), c2 = 1 - std::pow(b2_, double(t));
    const float step = float(lr(params.name(i)) / c1);
    const float root_c2 = float(std::sqrt(c2));
    params.at(i).vec().array() -=
        step * m.array() / ((v.array().sqrt() / root_c2) + float(eps_));
  }
}

double clip_global_norm(std::vector<Tensor<float>>& grads, double max_norm) {
  double sq = 0;
  for (const auto& g : grads) sq += g.vec().template cast<double>().squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const float f = float(max_norm / norm);
    for (auto& g : grads) g.vec() *= f;
  }
  return norm;
}

std::string rd_log_row(const EpochLog& e) {
  std::ostringstream os;
  os.precision(8);
  os << e.epoch << ',' << e.step << ',' << e.lambda << ',' << e.loss << ',' << e.rd.bpp_est << ','
     << e.rd.mse << ',' << e.rd.psnr_db << ',' << e.rd.ms_ssim << ',' << e.rd.ms_ssim_db;
  return os.str();
}

// ---------------------------------------------------------------------------

namespace {

bool finite(const Tensor<float>& t) { return t.vec().allFinite(); }

struct Distortion {
  double mse255 = 0, ms_ssim = 0;
};

Distortion measure(const Tensor<float>& x, const Tensor<float>& x_hat) {
  // Distortion of the 8-bit reconstruction the decoder would write.
  const Tensor<double> a = image_to_tensor255(tensor_to_image(x));
  const Tensor<double> b = image_to_tensor255(tensor_to_image(x_hat));
  Distortion d;
  d.mse255 = mse(a, b);
  d.ms_ssim = ms_ssim(a, b, 0, 255.0);
  return d;
}

RDPoint finish_point(double bpp, double mse255, double msssim) {
  RDPoint p;
  p.bpp = p.bpp_est = bpp;
  p.mse = mse255;
  const Psnr ps = psnr_from_mse(mse255);
  p.psnr_db = ps.lossless ? 100.0 : ps.db;
  p.ms_ssim = msssim;
  p.ms_ssim_db = ms_ssim_db(msssim);
  return p;
}

[[noreturn]] void report_non_finite(long step, const ParamSet<float>& params,
                                    const std::vector<std::pair<std::string, Var<float>>>& named) {
  std::string where = "loss";
  bool found = false;
  for (std::size_t i = 0; i < params.size() && !found; ++i)
    if (!finite(params.at(i))) {
      where = "parameter " + params.name(i);
      found = true;
    }
  for (const auto& [name, v] : named) {
    if (found) break;
    if (v.valid() && !finite(v.value())) {
      where = name;
      found = true;
    }
  }
  throw NumericError("non-finite loss at step " + std::to_string(step) +
                     "; first non-finite tensor: " + where);
}

}  // namespace

TrainResult train_loop(ParamSet<float>& params, const NetConfig& net,
                       const std::vector<Tensor<float>>& dataset, const TrainConfig& cfg) {
  cfg.validate();
  net.validate();
  check_params(params, net);
  if (dataset.empty()) throw ContractError("train_loop: empty dataset");
  for (const auto& x : dataset)
    require_shape(x, {3, cfg.patch_size, cfg.patch_size}, "training patch");

  Rng rng(cfg.seed);
  Adam adam(params);
  TrainResult result;
  Binding<float>::Filter trainable;
  if (cfg.freeze_pretrained)
    trainable = [](const std::string& n) { return n.rfind("context.", 0) == 0; };
  else if (cfg.freeze_autoencoder)
    trainable = [](const std::string& n) { return n.rfind("main_", 0) != 0; };

  std::ofstream log;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    log.open(std::filesystem::path(cfg.out_dir) / "rd_log.csv");
    if (!log) throw IoError("cannot write rd log in " + cfg.out_dir);
    log << kRdLogHeader << '\n';
  }

  std::vector<std::size_t> order(dataset.size());
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::shuffle(order.begin(), order.end(), rng);
    const double lr_ctx = epoch >= cfg.context_clip_epoch ? std::min(cfg.lr_main, cfg.lr_context_clip)
                                                          : cfg.lr_main;
    auto lr = [&](const std::string& n) {
      return n.rfind("context.", 0) == 0 ? lr_ctx : cfg.lr_main;
    };

    double sum_loss = 0, sum_bpp = 0, sum_mse = 0, sum_ssim = 0;
    long batches = 0, images = 0;
    bool stop = false;
    for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
      if (cfg.max_steps > 0 && step >= cfg.max_steps) {
        stop = true;
        break;
      }
      const std::size_t end = std::min(order.size(), start + std::size_t(cfg.batch_size));
      for (std::size_t i = 0; i < params.size(); ++i)
        if (!finite(params.at(i)))
          throw NumericError("non-finite parameters at step " + std::to_string(step) +
                             "; first non-finite tensor: parameter " + params.name(i));
      Tape<float> tape;
      Binding<float> p(params, &tape, trainable);
      Var<float> total;
      std::vector<std::pair<std::string, Var<float>>> named;
      double batch_bpp = 0;
      for (std::size_t k = start; k < end; ++k) {
        const Tensor<float>& xt = dataset[order[k]];
        auto x = Var<float>::constant(xt);
        auto out = forward_model(p, net, x, QuantMode::Train, &rng);
        auto l = rdo_loss(x, out.x_hat, out.rate_y, out.rate_z, cfg.lambda, cfg.loss);
        total = total.valid() ? total + l : l;
        batch_bpp += double(out.rate_y.value().item() + out.rate_z.value().item()) /
                     double(xt.dim(1) * xt.dim(2));
        const auto dist = measure(xt, out.x_hat.value());
        sum_mse += dist.mse255;
        sum_ssim += dist.ms_ssim;
        ++images;
        if (named.empty())
          named = {{"y", out.latents.y},         {"z", out.latents.z},
                   {"mu", out.gaussian.mu},      {"sigma", out.gaussian.sigma},
                   {"rate_y", out.rate_y},       {"rate_z", out.rate_z},
                   {"x_hat", out.x_hat}};
      }
      const float inv = 1.0f / float(end - start);
      auto rdo = scale(total, inv);
      const double rdo_value = rdo.value().item();
      if (!std::isfinite(rdo_value)) report_non_finite(step, params, named);
      auto objective = rdo;
      if (cfg.tail_weight > 0)
        objective = objective + scale(prior_tail_penalty(PriorVars<float>::bind(p, "prior")),
                                      float(cfg.tail_weight));
      tape.backward(objective);

      std::vector<Tensor<float>> grads(params.size());
      for (std::size_t i = 0; i < params.size(); ++i)
        if (p.at(i).requires_grad()) {
          grads[i] = p.at(i).grad();
          if (!finite(grads[i]))
            throw NumericError("non-finite gradient at step " + std::to_string(step) +
                               "; first non-finite tensor: gradient of " + params.name(i));
        }
      clip_global_norm(grads, cfg.grad_clip);
      adam.step(params, grads, lr);
      ++step;

      result.step_loss.push_back(rdo_value);
      sum_loss += rdo_value;
      sum_bpp += batch_bpp * inv;
      ++batches;
    }
    if (batches > 0) {
      EpochLog e;
      e.epoch = epoch;
      e.step = step;
      e.lambda = cfg.lambda;
      e.loss = sum_loss / double(batches);
      e.rd = finish_point(sum_bpp / double(batches), sum_mse / double(images),
                          sum_ssim / double(images));
      result.epochs.push_back(e);
      if (log) log << rd_log_row(e) << '\n' << std::flush;
      if (!cfg.out_dir.empty()) {
        char name[32];
        std::snprintf(name, sizeof name, "epoch_%03d.nlac", epoch);
        save_checkpoint(std::filesystem::path(cfg.out_dir) / name, net, params);
      }
    }
    if (stop) break;
  }
  return result;
}

EvalResult evaluate(const ParamSet<float>& params, const NetConfig& net,
                    const std::vector<Tensor<float>>& images, double lambda, LossKind kind) {
  if (images.empty()) throw ContractError("evaluate: no images");
  Binding<float> p(params);
  double bpp = 0, m = 0, s = 0, loss = 0;
  for (const auto& xt : images) {
    auto x = Var<float>::constant(xt);
    auto out = forward_model(p, net, x, QuantMode::Infer, nullptr);
    const double pixels = double(xt.dim(1) * xt.dim(2));
    const double b = double(out.rate_y.value().item() + out.rate_z.value().item()) / pixels;
    const auto d = measure(xt, out.x_hat.value());
    bpp += b;
    m += d.mse255;
    s += d.ms_ssim;
    const double dist = kind == LossKind::Mse ? d.mse255 / (255.0 * 255.0) : 1.0 - d.ms_ssim;
    loss += lambda * dist + b;
  }
  const double n = double(images.size());
  return {finish_point(bpp / n, m / n, s / n), loss / n};
}

Checkpoint refine_joint(const Checkpoint& baseline, const NetConfig& target,
                        const std::vector<Tensor<float>>& dataset, const TrainConfig& cfg,
                        TrainResult* result) {
  if (baseline.config.context_mode != ContextMode::Baseline)
    throw ContractError("refine_joint: starting checkpoint is not a baseline model");
  if (target.N != baseline.config.N)
    throw ContractError("refine_joint: N differs (" + std::to_string(target.N) + " vs " +
                        std::to_string(baseline.config.N) + ")");
  NetConfig base_cfg = target;
  base_cfg.context_mode = ContextMode::Baseline;
  if (!(base_cfg == baseline.config))
    throw ContractError("refine_joint: ablation settings differ from the baseline checkpoint");
  check_params(baseline.params, baseline.config);

  Checkpoint joint;
  joint.config = target;
  joint.config.context_mode = ContextMode::Joint;
  joint.params = baseline.params;
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  add_context_params(joint.params, joint.config, rng);
  TrainResult r = train_loop(joint.params, joint.config, dataset, cfg);
  if (result) *result = std::move(r);
  return joint;
}

// ---------------------------------------------------------------------------

std::vector<Tensor<float>> synthetic_dataset(int count, int size, std::uint64_t seed) {
  if (count < 0 || size <= 0) throw ContractError("synthetic_dataset: bad count or size");
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Tensor<float>> out;
  const double pi = 3.14159265358979323846;
  for (int n = 0; n < count; ++n) {
    Tensor<double> img({3, size, size});
    // Base colour with a smooth gradient.
    double base[3], grad[3][2];
    for (int c = 0; c < 3; ++c) {
      base[c] = 0.2 + 0.6 * u(rng);
      grad[c][0] = 0.4 * (u(rng) - 0.5);
      grad[c][1] = 0.4 * (u(rng) - 0.5);
    }
    const int gratings = 1 + int(u(rng) * 3);
    struct Grating {
      double fx, fy, phase, amp[3];
    };
    std::vector<Grating> gs;
    for (int g = 0; g < gratings; ++g) {
      const double f = 0.02 + 0.2 * u(rng), th = pi * u(rng);
      Grating gr{f * std::cos(th), f * std::sin(th), 2 * pi * u(rng), {}};
      for (double& a : gr.amp) a = 0.15 * (u(rng) - 0.5) * 2;
      gs.push_back(gr);
    }
    struct Disc {
      double cx, cy, r, col[3];
    };
    std::vector<Disc> discs;
    const int nd = int(u(rng) * 4);
    for (int d = 0; d < nd; ++d) {
      Disc dc{u(rng) * size, u(rng) * size, size * (0.05 + 0.2 * u(rng)), {}};
      for (double& c : dc.col) c = u(rng);
      discs.push_back(dc);
    }
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double fx = double(x) / size - 0.5, fy = double(y) / size - 0.5;
        for (int c = 0; c < 3; ++c) {
          double v = base[c] + grad[c][0] * fx + grad[c][1] * fy;
          for (const auto& g : gs) v += g.amp[c] * std::sin(2 * pi * (g.fx * x + g.fy * y) + g.phase);
          for (const auto& d : discs)
            if ((x - d.cx) * (x - d.cx) + (y - d.cy) * (y - d.cy) < d.r * d.r) v = 0.5 * v + 0.5 * d.col[c];
          img[(Index(c) * size + y) * size + x] = v;
        }
      }
    for (Index i = 0; i < img.size(); ++i) img[i] = std::clamp(img[i] + 0.01 * gauss(rng), 0.0, 1.0);
    out.push_back(img.cast<float>());
  }
  return out;
}

std::vector<Tensor<float>> folder_dataset(const std::string& dir, int size, int per_image,
                                          std::uint64_t seed) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no .ppm files in " + dir);
  Rng rng(seed);
  std::vector<Tensor<float>> out;
  for (const auto& f : files) {
    const Image img = read_ppm(f);
    if (img.width < size || img.height < size) continue;
    const Tensor<float> t = image_to_tensor(img);
    for (int k = 0; k < per_image; ++k) {
      const int ox = int(rng() % std::uint64_t(img.width - size + 1));
      const int oy = int(rng() % std::uint64_t(img.height - size + 1));
      Tensor<float> patch({3, size, size});
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < size; ++y)
          for (int x = 0; x < size; ++x)
            patch[(Index(c) * size + y) * size + x] =
                t[(Index(c) * img.height + oy + y) * img.width + ox + x];
      out.push_back(std::move(patch));
    }
  }
  if (out.empty()) throw IoError("no image in " + dir + " is at least " + std::to_string(size) + " px");
  return out;
}

}  // namespace nlaic
