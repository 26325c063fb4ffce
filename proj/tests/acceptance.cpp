// Acceptance run: one PASS/FAIL line per criterion, details indented below it.
// Exit status is 0 when every failure is one listed in kKnownUnattainable.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "nlaic/container.hpp"
#include "nlaic/metrics.hpp"
#include "nlaic/trainer.hpp"
#include "test_util.hpp"

using namespace nlaic;
using nlaic::testing::check_gradients;
using nlaic::testing::check_param_gradients;
using nlaic::testing::GradReport;
using nlaic::testing::probe_sum;
using nlaic::testing::random_tensor;
using V = Var<double>;
using Vs = std::vector<V>;

namespace {

// Tolerances.
constexpr double kGradTol = 1e-5;
constexpr double kGradSeconds = 600;
constexpr double kAttnRowTol = 1e-6;
constexpr double kNlmOracleTol = 1e-6;
constexpr int kCausalTrials = 1000;
constexpr double kPmfSumTol = 1e-6;
constexpr int kMonotoneProbes = 10000;
constexpr int kFuzzSymbols = 100000;
constexpr double kRateSlack = 1.02;
constexpr double kRateOverheadBits = 256;
constexpr Index kMinRateSymbols = 10000;
constexpr double kLossDrop = 0.20;
constexpr double kTrainSeconds = 1800;
constexpr double kJointBppSlack = 1.02;
constexpr double kAblationSlack = 0.99;
constexpr double kMsSsimSelfTol = 1e-9;
constexpr double kBdShiftTol = 0.1;
constexpr double kPsnrTarget = 24.07, kPsnrTol = 0.01;

// Toy-scale training protocol.
constexpr int kN = 16;
constexpr int kTrainImages = 512;
constexpr int kSteps = 600;
constexpr int kRefineSteps = 300;
constexpr double kLambdas[3] = {8, 32, 128};
constexpr double kTrendLambda = 128;
constexpr std::uint64_t kSeeds[3] = {1, 2, 3};

// The stated PSNR value disagrees with its own closed form, see criterion 10.
const std::set<int> kKnownUnattainable = {10};

struct Verdict {
  bool pass = true;
  std::vector<std::string> lines;
  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    lines.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
  }
  void info(const std::string& what) { lines.push_back("info " + what); }
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// --- 1 -------------------------------------------------------------------

ParamSet<double> randomized(const ParamSet<float>& ps, std::uint64_t seed) {
  ParamSet<double> out = ps.cast<double>();
  for (std::size_t i = 0; i < out.size(); ++i)
    out.at(i) = random_tensor(out.at(i).shape(), seed + i, -0.5, 0.5);
  return out;
}

Verdict gradient_integrity() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  auto record = [&](const std::string& name, const GradReport& r) {
    v.check(r.max_err <= kGradTol, fmt("%-28s max rel err %.2e over %zu probes", name.c_str(), r.max_err,
                                       r.probes) +
                                       (r.max_err <= kGradTol ? "" : " at " + r.where));
  };
  using nlaic::testing::Fn;
  const auto a = random_tensor({3, 4}, 1), b = random_tensor({3, 4}, 2, 0.5, 2.0);
  const auto s = random_tensor({}, 3, 0.5, 1.5), pos = random_tensor({2, 5}, 5, 0.2, 3.0);
  const auto u = random_tensor({2, 5}, 4), r3 = random_tensor({3, 2, 4}, 6);
  const std::vector<std::tuple<std::string, Fn, std::vector<Tensor<double>>>> ops = {
      {"add", [](const Vs& x) { return probe_sum(x[0] + x[1]); }, {a, b}},
      {"sub", [](const Vs& x) { return probe_sum(x[0] - x[1]); }, {a, b}},
      {"mul", [](const Vs& x) { return probe_sum(x[0] * x[1]); }, {a, b}},
      {"div", [](const Vs& x) { return probe_sum(x[0] / x[1]); }, {a, b}},
      {"mul scalar", [](const Vs& x) { return probe_sum(x[0] * x[1]); }, {a, s}},
      {"div scalar", [](const Vs& x) { return probe_sum(x[0] / x[1]); }, {a, s}},
      {"scale", [](const Vs& x) { return probe_sum(scale(x[0], 2.5)); }, {a}},
      {"add_scalar", [](const Vs& x) { return probe_sum(add_scalar(x[0], -1.0)); }, {a}},
      {"relu", [](const Vs& x) { return probe_sum(relu(x[0])); }, {u}},
      {"sigmoid", [](const Vs& x) { return probe_sum(sigmoid(x[0])); }, {u}},
      {"exp", [](const Vs& x) { return probe_sum(exp(x[0])); }, {u}},
      {"log", [](const Vs& x) { return probe_sum(log(x[0])); }, {pos}},
      {"clamp", [](const Vs& x) { return probe_sum(clamp(x[0], -0.5, 0.5)); }, {u}},
      {"square", [](const Vs& x) { return probe_sum(square(x[0])); }, {u}},
      {"pow_scalar", [](const Vs& x) { return probe_sum(pow_scalar(x[0], 0.37)); }, {pos}},
      {"sum", [](const Vs& x) { return sum(x[0]); }, {r3}},
      {"mean", [](const Vs& x) { return mean(x[0]); }, {r3}},
      {"channel_mean", [](const Vs& x) { return probe_sum(channel_mean(x[0])); }, {r3}},
      {"reshape", [](const Vs& x) { return probe_sum(reshape(x[0], {6, 4})); }, {r3}},
      {"concat", [](const Vs& x) { return probe_sum(concat<double>({x[0], x[1]})); },
       {r3, random_tensor({2, 2, 4}, 7)}},
      {"slice", [](const Vs& x) { return probe_sum(slice(x[0], 1, 3)); }, {r3}},
      {"softmax rows", [](const Vs& x) { return probe_sum(softmax(x[0], 1)); }, {random_tensor({4, 5}, 8)}},
      {"softmax cols", [](const Vs& x) { return probe_sum(softmax(x[0], 0)); }, {random_tensor({4, 5}, 9)}},
      {"matmul", [](const Vs& x) { return probe_sum(matmul(x[0], x[1])); },
       {random_tensor({3, 4}, 10), random_tensor({4, 2}, 11)}},
      {"transpose", [](const Vs& x) { return probe_sum(transpose(x[0])); }, {random_tensor({3, 4}, 12)}},
      {"conv2d s2", [](const Vs& x) { return probe_sum(conv2d(x[0], x[1], x[2], 2, 2)); },
       {random_tensor({2, 6, 6}, 13), random_tensor({3, 2, 5, 5}, 14), random_tensor({3}, 15)}},
      {"conv2d s1", [](const Vs& x) { return probe_sum(conv2d(x[0], x[1], x[2], 1, 1)); },
       {random_tensor({2, 5, 4}, 16), random_tensor({2, 2, 3, 3}, 17), random_tensor({2}, 18)}},
      {"deconv2d", [](const Vs& x) { return probe_sum(deconv2d(x[0], x[1], x[2], 2)); },
       {random_tensor({2, 3, 3}, 19), random_tensor({2, 3, 5, 5}, 20), random_tensor({3}, 21)}},
      {"conv3d_masked A", [](const Vs& x) { return probe_sum(conv3d_masked(x[0], x[1], x[2], MaskType::A)); },
       {random_tensor({1, 3, 4, 4}, 22), random_tensor({2, 1, 3, 3, 3}, 23), random_tensor({2}, 24)}},
      {"conv3d_masked B", [](const Vs& x) { return probe_sum(conv3d_masked(x[0], x[1], x[2], MaskType::B)); },
       {random_tensor({2, 2, 3, 3}, 25), random_tensor({2, 2, 3, 3, 3}, 26), random_tensor({2}, 27)}},
      {"gaussian_blur", [](const Vs& x) { return probe_sum(gaussian_blur(x[0], 11, 1.5)); },
       {random_tensor({2, 12, 9}, 28)}},
      {"avg_pool2", [](const Vs& x) { return probe_sum(avg_pool2(x[0])); }, {random_tensor({2, 5, 6}, 30)}},
      {"gaussian_pmf rate", [](const Vs& x) { return rate_bits(gaussian_pmf(x[0], x[1], x[2])); },
       {random_tensor({2, 3, 3}, 31, -3, 3), random_tensor({2, 3, 3}, 32, -2, 2),
        random_tensor({2, 3, 3}, 33, 0.3, 3.0)}},
  };
  for (const auto& [name, f, in] : ops) record(name, check_gradients(f, in));

  {
    auto x = random_tensor({2, 44, 44}, 34, 0, 1);
    x = gaussian_blur(V::constant(x), 7, 2.0).value();
    for (Index i = 0; i < x.size(); ++i) x[i] = 0.2 + 0.6 * x[i];
    auto y = x;
    y.vec() += random_tensor(x.shape(), 35, -0.05, 0.05).vec();
    record("ms_ssim", check_gradients([](const Vs& w) { return ms_ssim(w[0], w[1], 3); }, {x, y}, 40));
  }
  {
    Rng rng(36);
    ParamSet<float> ps;
    add_factorized_prior(ps, "prior", 2, rng);
    auto pd = ps.cast<double>();
    for (std::size_t i = 0; i < pd.size(); ++i) pd.at(i).vec() += random_tensor(pd.at(i).shape(), 37 + i, -0.3, 0.3).vec();
    auto z = random_tensor({2, 3, 2}, 38, -3, 3);
    for (Index i = 0; i < z.size(); ++i) z[i] = std::round(z[i]);
    record("factorized_pmf rate", check_param_gradients(
                                      [](const Binding<double>& p, const Vs& in) {
                                        return rate_bits(factorized_pmf(in[0], PriorVars<double>::bind(p, "prior")));
                                      },
                                      pd, {z}));
    for (int k = 0; k < kPriorStages; ++k) pd["prior.H" + std::to_string(k)].vec().array() -= 3.0;
    record("prior tail penalty", check_param_gradients(
                                     [](const Binding<double>& p, const Vs&) {
                                       return prior_tail_penalty(PriorVars<double>::bind(p, "prior"));
                                     },
                                     pd, {}));
  }
  {
    Rng rng(40);
    ParamSet<float> rb, nlm, nlam;
    add_resblock(rb, "rb", 3, rng);
    add_nlm(nlm, "nlm", 4, rng);
    add_nlam(nlam, "nlam", 4, true, rng);
    record("ResBlock", check_param_gradients(
                           [](const Binding<double>& p, const Vs& in) { return probe_sum(resblock_forward(p, "rb", in[0])); },
                           rb.cast<double>(), {random_tensor({3, 5, 5}, 41)}));
    record("NLM", check_param_gradients(
                      [](const Binding<double>& p, const Vs& in) { return probe_sum(nlm_forward(p, "nlm", in[0])); },
                      randomized(nlm, 42), {random_tensor({4, 3, 3}, 43)}));
    record("NLAM", check_param_gradients(
                       [](const Binding<double>& p, const Vs& in) { return probe_sum(nlam_forward(p, "nlam", in[0])); },
                       randomized(nlam, 44), {random_tensor({4, 6, 6}, 45)}, 24));
  }
  for (auto [mode, kind, label] : {std::tuple{ContextMode::Baseline, LossKind::Mse, "full loss 64x64 baseline mse"},
                                   std::tuple{ContextMode::Joint, LossKind::Mse, "full loss 64x64 joint mse"},
                                   std::tuple{ContextMode::Baseline, LossKind::MsSsim, "full loss 64x64 ms-ssim"}}) {
    NetConfig cfg;
    cfg.N = 4;
    cfg.context_mode = mode;
    ParamSet<double> ps = init_params(cfg, 11).cast<double>();
    for (std::size_t i = 0; i < ps.size(); ++i)
      if (ps.name(i).find(".w_z") != std::string::npos || ps.name(i).rfind("context.", 0) == 0)
        ps.at(i) = random_tensor(ps.at(i).shape(), 50 + i, -0.3, 0.3);
    const auto x = random_tensor({3, 64, 64}, 12, 0, 1);
    record(label, check_param_gradients(
                      [&, cfg, kind = kind](const Binding<double>& p, const Vs& in) {
                        Rng rng(13);
                        auto out = forward_model(p, cfg, in[0], QuantMode::Train, &rng);
                        return rdo_loss(in[0], out.x_hat, out.rate_y, out.rate_z, 50.0, kind);
                      },
                      ps, {x}, 2));
  }
  const double secs = seconds_since(t0);
  v.check(secs <= kGradSeconds, fmt("runtime %.1f s (limit %.0f s)", secs, kGradSeconds));
  return v;
}

// --- 2 -------------------------------------------------------------------

Verdict nlm_contracts() {
  Verdict v;
  Rng rng(60);
  ParamSet<float> base;
  add_nlm(base, "nlm", 3, rng);
  double worst_row = 0;
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    const auto ps = randomized(base, 61 + trial);
    Binding<double> p(ps);
    ForwardTrace<double> trace;
    nlm_forward(p, "nlm", V::constant(random_tensor({3, 4, 5}, 90 + trial, -3, 3)), &trace);
    const auto& att = trace.attention.at(0).second;
    for (Index i = 0; i < att.dim(0); ++i) {
      double s = 0;
      for (Index j = 0; j < att.dim(1); ++j) s += att.at({i, j});
      worst_row = std::max(worst_row, std::abs(s - 1));
    }
  }
  v.check(worst_row <= kAttnRowTol, fmt("attention rows sum to 1, worst deviation %.2e over 20 inputs", worst_row));

  bool identity = true;
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    auto ps = randomized(base, 120 + trial);
    ps["nlm.w_z"].vec().setZero();
    Binding<double> p(ps);
    const auto x = random_tensor({3, 4, 4}, 140 + trial, -2, 2);
    identity = identity && nlm_forward(p, "nlm", V::constant(x)).value() == x;
  }
  v.check(identity, "W_z = 0 returns the input bit for bit (20 inputs)");

  // Direct summation on C = 2 channels over a 2x2 grid.
  double worst = 0;
  ParamSet<float> two;
  add_nlm(two, "nlm", 2, rng);
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    const Index c = 2, hw = 4;
    const auto ps = randomized(two, 160 + trial);
    const auto x = random_tensor({c, 2, 2}, 180 + trial, -2, 2);
    Binding<double> p(ps);
    const auto z = nlm_forward(p, "nlm", V::constant(x)).value();
    auto w = [&](const char* n, Index r, Index k) { return ps[std::string("nlm.") + n].at({r, k, 0, 0}); };
    auto feat = [&](const char* n, Index at, Index ch) {
      double s = 0;
      for (Index k = 0; k < c; ++k) s += w(n, ch, k) * x[k * hw + at];
      return s;
    };
    for (Index i = 0; i < hw; ++i) {
      double f[4], norm = 0;
      for (Index j = 0; j < hw; ++j) {
        double dot = 0;
        for (Index ch = 0; ch < c; ++ch) dot += feat("w_theta", i, ch) * feat("w_phi", j, ch);
        norm += f[j] = std::exp(dot);
      }
      for (Index ch = 0; ch < c; ++ch) {
        double out = x[ch * hw + i];
        for (Index k = 0; k < c; ++k) {
          double y = 0;
          for (Index j = 0; j < hw; ++j) y += f[j] / norm * feat("w_g", j, k);
          out += w("w_z", ch, k) * y;
        }
        worst = std::max(worst, std::abs(out - z[ch * hw + i]));
      }
    }
  }
  v.check(worst <= kNlmOracleTol, fmt("scalar oracle on 2x2x2 inputs, max abs diff %.2e over 20 draws", worst));
  return v;
}

// --- 3 -------------------------------------------------------------------

Verdict masked_causality() {
  Verdict v;
  NetConfig cfg;
  cfg.N = 8;
  cfg.context_mode = ContextMode::Joint;
  auto ps = init_params(cfg, 3);
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (ps.name(i).rfind("context.", 0) == 0)
      ps.at(i) = random_tensor(ps.at(i).shape(), 200 + i, -0.5, 0.5).cast<float>();
  const Index n = cfg.N, h = 6, w = 5, positions = n * h * w;
  auto y = random_tensor({n, h, w}, 7, -6, 6);
  for (Index i = 0; i < y.size(); ++i) y[i] = std::round(y[i]);
  const Tensor<float> y0 = y.cast<float>();
  const Tensor<float> hyper = random_tensor({2 * n, h, w}, 8, -1, 1).cast<float>();
  Binding<float> p(ps);
  auto conv = [&](const Tensor<float>& t) {
    return conv3d_masked(Var<float>::constant(t.reshaped({1, n, h, w})), p["context.masked.w"],
                         p["context.masked.b"], MaskType::A)
        .value();
  };
  auto gauss = [&](const Tensor<float>& t) {
    return context_params(p, cfg, Var<float>::constant(t), Var<float>::constant(hyper));
  };
  const auto c0 = conv(y0);
  const auto g0 = gauss(y0);
  const SequentialContext seq(ps, cfg, hyper);
  const Index out_ch = c0.size() / positions;

  std::mt19937_64 rng(9);
  long conv_bad = 0, gauss_bad = 0, seq_bad = 0, changed_later = 0;
  for (int trial = 0; trial < kCausalTrials; ++trial) {
    const Index q = Index(rng() % std::uint64_t(positions));
    Tensor<float> y1 = y0;
    y1[q] += float(1 + rng() % 5) * (rng() % 2 ? 1.0f : -1.0f);
    const auto c1 = conv(y1);
    const auto g1 = gauss(y1);
    for (Index at = 0; at <= q; ++at) {
      for (Index o = 0; o < out_ch; ++o) conv_bad += c1[o * positions + at] != c0[o * positions + at];
      gauss_bad += g1.mu.value()[at] != g0.mu.value()[at] || g1.sigma.value()[at] != g0.sigma.value()[at];
    }
    for (Index at = q + 1; at < positions; ++at)
      for (Index o = 0; o < out_ch; ++o) changed_later += c1[o * positions + at] != c0[o * positions + at];
    const Index at = Index(rng() % std::uint64_t(q + 1));
    const std::span<const float> s0(y0.data(), std::size_t(positions)), s1(y1.data(), std::size_t(positions));
    seq_bad += seq.at(s0, at / (h * w), (at / w) % h, at % w) != seq.at(s1, at / (h * w), (at / w) % h, at % w);
  }
  v.check(conv_bad == 0, fmt("%d trials: masked conv outputs at positions <= perturbed, %ld differing values",
                             kCausalTrials, conv_bad));
  v.check(gauss_bad == 0, fmt("%d trials: batched (mu, sigma) at positions <= perturbed, %ld differing", kCausalTrials,
                              gauss_bad));
  v.check(seq_bad == 0, fmt("%d trials: sequential decoder context, %ld differing", kCausalTrials, seq_bad));
  v.check(changed_later > 0, "perturbations do reach later positions");
  return v;
}

// --- 4 -------------------------------------------------------------------

Verdict entropy_soundness(const ParamSet<float>* trained) {
  Verdict v;
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> mu_d(-20, 20), ls_d(std::log(0.11), std::log(30.0));
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const double mu = mu_d(rng), sigma = std::exp(ls_d(rng));
    const int lo = int(std::floor(mu - 8 * sigma)), hi = int(std::ceil(mu + 8 * sigma));
    const Index count = hi - lo + 1;
    Tensor<double> y({count});
    for (Index i = 0; i < count; ++i) y[i] = double(lo + i);
    const auto pmf = gaussian_pmf(V::constant(y), V::constant(Tensor<double>({count}, mu)),
                                  V::constant(Tensor<double>({count}, sigma)))
                         .value();
    worst = std::max(worst, std::abs(pmf.vec().sum() - 1));
  }
  v.check(worst <= kPmfSumTol, fmt("Gaussian*uniform PMF over +-8 sigma, worst |sum - 1| %.2e (1000 draws)", worst));

  auto monotone = [&](const ParamSet<float>& ps, Index channels, const std::string& label) {
    const ScalarPrior prior(ps, "prior");
    std::uniform_real_distribution<double> u(-12, 12);
    long bad = 0, ties = 0;
    Index ch_probes = 0;
    for (Index c = 0; c < channels; ++c) {
      std::vector<double> xs(kMonotoneProbes);
      for (auto& x : xs) x = u(rng);
      std::sort(xs.begin(), xs.end());
      xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
      ch_probes = Index(xs.size());
      // cdf = sigmoid(logit): strict order of the logit is strict order of the
      // CDF; the double CDF itself can tie within one ulp of 1.
      for (std::size_t i = 1; i < xs.size(); ++i) {
        bad += !(prior.logit(c, xs[i]) > prior.logit(c, xs[i - 1])) || prior.cdf(c, xs[i]) < prior.cdf(c, xs[i - 1]);
        ties += prior.cdf(c, xs[i]) == prior.cdf(c, xs[i - 1]);
      }
    }
    v.check(bad == 0, fmt("factorized CDF monotone, %s: %ld violations on %ld probes x %ld channels", label.c_str(), bad,
                          long(ch_probes), long(channels)));
    if (ties) v.info(fmt("%s: %ld adjacent probes share a double CDF value (tail within 1e-10 of 0 or 1)", label.c_str(), ties));
  };
  NetConfig cfg;
  cfg.N = kN;
  auto fresh = init_params(cfg, 4);
  for (std::size_t i = 0; i < fresh.size(); ++i)
    if (fresh.name(i).rfind("prior.", 0) == 0)
      fresh.at(i).vec() += random_tensor(fresh.at(i).shape(), 300 + i, -1, 1).cast<float>().vec();
  monotone(fresh, kN, "jittered init");
  if (trained) monotone(*trained, kN, "trained toy model");
  return v;
}

// --- training shared by 5-9 and 11 -----------------------------------------

struct Run {
  NetConfig net;
  ParamSet<float> params;
  TrainResult train;
  EvalResult val;
  double seconds = 0;
};

struct Lab {
  std::vector<Tensor<float>> data = synthetic_dataset(kTrainImages, 64, 11);
  std::vector<Tensor<float>> val = synthetic_dataset(8, 64, 99);
  std::map<std::string, Run> runs;

  TrainConfig train_config(double lambda, std::uint64_t seed, int steps) const {
    TrainConfig t;
    t.lambda = lambda;
    t.max_steps = steps;
    t.epochs = 1000;
    t.context_clip_epoch = 1000;
    t.seed = seed;
    return t;
  }

  const Run& scratch(double lambda, std::uint64_t seed, bool ablated = false) {
    const std::string key = fmt("scratch λ=%g seed=%llu%s", lambda, (unsigned long long)seed, ablated ? " ablated" : "");
    if (auto it = runs.find(key); it != runs.end()) return it->second;
    Run r;
    r.net.N = kN;
    r.net.remove_all_masks = ablated;
    r.params = init_params(r.net, seed);
    const auto t0 = std::chrono::steady_clock::now();
    r.train = train_loop(r.params, r.net, data, train_config(lambda, seed, kSteps));
    r.seconds = seconds_since(t0);
    r.val = evaluate(r.params, r.net, val, lambda, LossKind::Mse);
    std::cout << fmt("     # trained %s: %d steps in %.1f s, val bpp %.4f psnr %.3f loss %.4f\n", key.c_str(),
                     kSteps, r.seconds, r.val.rd.bpp, r.val.rd.psnr_db, r.val.loss)
              << std::flush;
    return runs[key] = std::move(r);
  }

  // Both arms continue a shared pretrained baseline with the autoencoder fixed.
  std::pair<const Run*, const Run*> entropy_arms() {
    if (!runs.count("arm baseline")) {
      const Run& pre = scratch(kTrendLambda, kSeeds[0]);
      TrainConfig t = train_config(kTrendLambda, 101, kRefineSteps);
      t.freeze_autoencoder = true;
      Run b;
      b.net = pre.net;
      b.params = pre.params;
      auto t0 = std::chrono::steady_clock::now();
      b.train = train_loop(b.params, b.net, data, t);
      b.seconds = seconds_since(t0);
      b.val = evaluate(b.params, b.net, val, kTrendLambda, LossKind::Mse);
      Run j;
      NetConfig jn = pre.net;
      jn.context_mode = ContextMode::Joint;
      t0 = std::chrono::steady_clock::now();
      auto ck = refine_joint(Checkpoint{pre.net, pre.params}, jn, data, t, &j.train);
      j.seconds = seconds_since(t0);
      j.net = ck.config;
      j.params = std::move(ck.params);
      j.val = evaluate(j.params, j.net, val, kTrendLambda, LossKind::Mse);
      runs["arm baseline"] = std::move(b);
      runs["arm joint"] = std::move(j);
    }
    return {&runs["arm baseline"], &runs["arm joint"]};
  }

  const Run& joint_scratch() {
    if (auto it = runs.find("joint scratch"); it != runs.end()) return it->second;
    Run r;
    r.net.N = kN;
    r.net.context_mode = ContextMode::Joint;
    r.params = init_params(r.net, kSeeds[0]);
    r.train = train_loop(r.params, r.net, data, train_config(kTrendLambda, kSeeds[0], kSteps));
    r.val = evaluate(r.params, r.net, val, kTrendLambda, LossKind::Mse);
    return runs["joint scratch"] = std::move(r);
  }
};

LoadedModel as_model(const Run& r) { return LoadedModel::from_bytes(serialize_checkpoint(r.net, r.params)); }

Image big_image() { return tensor_to_image(synthetic_dataset(1, 448, 77)[0]); }

// --- 5 -------------------------------------------------------------------

Verdict lossless_coding(Lab& lab) {
  Verdict v;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<QuantizedCdf> cdfs;
  std::vector<int> symbols;
  for (int i = 0; i < kFuzzSymbols; ++i) {
    const int count = 1 + int(rng() % 60);
    std::vector<double> pmf(static_cast<std::size_t>(count));
    double total = 0;
    for (auto& q : pmf) total += (q = std::pow(u(rng), 4.0) + 1e-12);
    for (auto& q : pmf) q /= total;
    cdfs.push_back(quantize_pmf(pmf, -int(rng() % 30)));
    const auto& c = cdfs.back();
    const std::uint32_t r = std::uint32_t(rng() % kCdfTotal);
    std::size_t s = 0;
    while (c.table[s + 1] <= r) ++s;
    symbols.push_back(c.n_min + int(s));
  }
  const auto bytes = encode_symbols(symbols, cdfs);
  v.check(decode_symbols(bytes, cdfs) == symbols,
          fmt("range coder roundtrip of %d fuzzed symbols (%zu bytes)", kFuzzSymbols, bytes.size()));

  const auto [base, joint] = lab.entropy_arms();
  (void)base;
  const auto model = as_model(*joint);
  for (const auto& [label, img] : {std::pair{"64x64", tensor_to_image(lab.val[0])},
                                   std::pair{"70x50 (padded)", crop(tensor_to_image(synthetic_dataset(1, 128, 78)[0]), 70, 50)},
                                   std::pair{"448x448", big_image()}}) {
    const auto enc = encode_image(model, img);
    const auto dec = decode_image(model, enc.bytes);
    v.check(dec.y_hat == enc.y_hat && dec.image.width == img.width && dec.image.height == img.height,
            fmt("trained joint model, %s: sequential decode recovers all %ld latents of y_hat", label,
                long(enc.y_hat.size())));
  }
  return v;
}

// --- 6 -------------------------------------------------------------------

Verdict rate_tightness(Lab& lab) {
  Verdict v;
  const auto [base, joint] = lab.entropy_arms();
  const Image img = big_image();
  for (const auto& [label, run] : {std::pair{"baseline", base}, std::pair{"joint", joint}}) {
    const auto model = as_model(*run);
    const auto enc = encode_image(model, img);
    const double actual = 8.0 * double(enc.bytes.size());
    const double bound = enc.bits_est * kRateSlack + kRateOverheadBits;
    v.check(enc.y_hat.size() >= kMinRateSymbols && actual <= bound,
            fmt("%s, %ld y symbols: container %.0f bits (incl. %d header bits), estimate %.1f, bound %.1f, "
                "actual/estimate %.4f",
                label, long(enc.y_hat.size()), actual, 8 * kContainerFixedBytes, enc.bits_est, bound,
                actual / enc.bits_est));
  }
  return v;
}

// --- 7 -------------------------------------------------------------------

Verdict training_sanity(Lab& lab) {
  Verdict v;
  const Run& trend = lab.scratch(kTrendLambda, kSeeds[0]);
  const auto& l = trend.train.step_loss;
  auto window = [&](std::size_t a) {
    double s = 0;
    for (std::size_t i = a; i < a + 20; ++i) s += l[i];
    return s / 20;
  };
  const double start = window(0), end = window(180), drop = 1 - end / start;
  v.check(drop >= kLossDrop,
          fmt("first 200 steps at λ=%g: 20-step mean loss %.3f -> %.3f, drop %.1f%%", kTrendLambda, start, end, 100 * drop));
  double secs = 0;
  std::vector<const Run*> sweep;
  for (double lambda : kLambdas) {
    sweep.push_back(&lab.scratch(lambda, kSeeds[0]));
    secs += sweep.back()->seconds;
  }
  bool monotone = true;
  for (std::size_t i = 0; i < 3; ++i) {
    v.info(fmt("λ=%-4g val bpp %.4f psnr %.3f dB", kLambdas[i], sweep[i]->val.rd.bpp, sweep[i]->val.rd.psnr_db));
    if (i > 0)
      monotone = monotone && sweep[i]->val.rd.bpp > sweep[i - 1]->val.rd.bpp &&
                 sweep[i]->val.rd.psnr_db > sweep[i - 1]->val.rd.psnr_db;
  }
  v.check(monotone, "λ sweep strictly monotone: higher λ gives higher bpp and higher PSNR");
  v.check(secs <= kTrainSeconds, fmt("sweep training time %.1f s (limit %.0f s)", secs, kTrainSeconds));
  return v;
}

// --- 8 -------------------------------------------------------------------

Verdict joint_vs_baseline(Lab& lab) {
  Verdict v;
  const auto [base, joint] = lab.entropy_arms();
  const auto& b = base->val.rd;
  const auto& j = joint->val.rd;
  v.info(fmt("shared baseline: %d steps at λ=%g; each arm then %d steps with the autoencoder fixed", kSteps,
             kTrendLambda, kRefineSteps));
  v.check(j.bpp <= b.bpp * kJointBppSlack && j.psnr_db >= b.psnr_db,
          fmt("joint bpp %.4f vs baseline %.4f (ratio %.4f), psnr %.4f vs %.4f", j.bpp, b.bpp, j.bpp / b.bpp,
              j.psnr_db, b.psnr_db));
  const Run& js = lab.joint_scratch();
  const Run& bs = lab.scratch(kTrendLambda, kSeeds[0]);
  v.info(fmt("from scratch, %d steps each: joint bpp %.4f psnr %.3f, baseline bpp %.4f psnr %.3f", kSteps,
             js.val.rd.bpp, js.val.rd.psnr_db, bs.val.rd.bpp, bs.val.rd.psnr_db));
  return v;
}

// --- 9 -------------------------------------------------------------------

Verdict ablation_direction(Lab& lab) {
  Verdict v;
  double full = 0, ablated = 0;
  for (std::uint64_t seed : kSeeds) {
    const double f = lab.scratch(kTrendLambda, seed).val.loss, a = lab.scratch(kTrendLambda, seed, true).val.loss;
    v.info(fmt("seed %llu: full %.4f, remove_all_masks %.4f", (unsigned long long)seed, f, a));
    full += f / 3;
    ablated += a / 3;
  }
  v.check(ablated >= full * kAblationSlack,
          fmt("mean validation loss over 3 seeds: remove_all_masks %.4f vs full %.4f (ratio %.4f)", ablated, full,
              ablated / full));
  return v;
}

// --- 10 ------------------------------------------------------------------

Verdict metrics(bool& only_known) {
  Verdict v;
  double worst = 0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto x = random_tensor({3, 64, 64}, seed, 0, 1);
    worst = std::max(worst, std::abs(ms_ssim(x, x) - 1));
  }
  const bool ssim_ok = worst <= kMsSsimSelfTol;
  v.check(ssim_ok, fmt("ms_ssim(x, x) = 1, worst deviation %.2e", worst));

  RDCurve anchor{"anchor", {}};
  for (auto [b, d] : {std::pair{0.12, 26.1}, {0.25, 28.9}, {0.5, 31.6}, {0.9, 34.2}, {1.5, 36.8}}) {
    RDPoint p;
    p.bpp = b;
    p.psnr_db = d;
    anchor.points.push_back(p);
  }
  RDCurve shifted = anchor;
  for (auto& p : shifted.points) p.bpp *= 1.10;
  const double id = bd_rate(anchor, anchor), shift = bd_rate(anchor, shifted);
  const bool bd_ok = id == 0.0 && std::abs(shift - 10.0) <= kBdShiftTol;
  v.check(id == 0.0, fmt("bd_rate identity %.3g", id));
  v.check(std::abs(shift - 10.0) <= kBdShiftTol, fmt("+10%% rate shift gives %+.6f%%", shift));

  const Tensor<double> a({3, 8, 8}, 100.0), b({3, 8, 8}, 116.0);
  const double db = psnr(a, b).db;
  const bool psnr_ok = std::abs(db - kPsnrTarget) <= kPsnrTol;
  v.check(psnr_ok, fmt("all-pixels-off-by-16: %.4f dB, target %.2f +- %.2f", db, kPsnrTarget, kPsnrTol));
  if (!psnr_ok)
    v.info(fmt("10 log10(255^2 / 256) = %.6f; a %.2f dB result would need mse %.2f, i.e. a different formula",
               10 * std::log10(255.0 * 255.0 / 256.0), kPsnrTarget, 255.0 * 255.0 / std::pow(10.0, kPsnrTarget / 10)));
  only_known = ssim_ok && bd_ok;
  return v;
}

// --- 11 ------------------------------------------------------------------

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + NLAIC_CLI + "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  if (status == -1 || !WIFEXITED(status)) return -1;
  return WEXITSTATUS(status);
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

Verdict cli(Lab& lab) {
  Verdict v;
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "nlaic_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto q = [&](const char* name) { return "\"" + (dir / name).string() + "\""; };
  const auto [base, joint] = lab.entropy_arms();
  save_checkpoint(dir / "model.nlac", joint->net, joint->params);
  save_checkpoint(dir / "other.nlac", base->net, base->params);
  write_ppm(dir / "in.ppm", tensor_to_image(lab.val[2]));

  const int e1 = run_cli("encode --checkpoint " + q("model.nlac") + " " + q("in.ppm") + " " + q("a.nlic"));
  const int e2 = run_cli("encode --checkpoint " + q("model.nlac") + " " + q("in.ppm") + " " + q("b.nlic"));
  const auto a = slurp(dir / "a.nlic");
  v.check(e1 == 0 && e2 == 0 && !a.empty() && a == slurp(dir / "b.nlic"),
          fmt("two encodes of a 64x64 PPM are byte-identical (%zu bytes)", a.size()));
  const int d = run_cli("decode --checkpoint " + q("model.nlac") + " " + q("a.nlic") + " " + q("out.ppm"));
  bool decoded = false;
  if (d == 0) {
    const Image img = read_ppm(dir / "out.ppm");
    const auto direct = decode_image(LoadedModel::load(dir / "model.nlac"), a).image;
    decoded = img == direct && img.width == 64 && img.height == 64;
  }
  v.check(decoded, "decode exits 0 and matches the library decoder");

  const int wrong = run_cli("decode --checkpoint " + q("other.nlac") + " " + q("a.nlic") + " " + q("wrong.ppm"));
  v.check(wrong == 4 && !fs::exists(dir / "wrong.ppm"),
          fmt("decode with a different checkpoint exits %d (model mismatch is 4), no output written", wrong));

  std::ostringstream codes;
  bool clean = true;
  for (std::size_t keep : {std::size_t(0), std::size_t(4), std::size_t(20), std::size_t(53), a.size() / 2, a.size() - 1}) {
    spit(dir / "cut.nlic", std::vector<std::uint8_t>(a.begin(), a.begin() + std::ptrdiff_t(keep)));
    const int rc = run_cli("decode --checkpoint " + q("model.nlac") + " " + q("cut.nlic") + " " + q("cut.ppm"));
    codes << " " << keep << "B->" << rc;
    clean = clean && (rc == 3 || rc == 5 || rc == 7) && !fs::exists(dir / "cut.ppm");
  }
  auto flipped = a;
  flipped[a.size() / 2] ^= 0x40;
  spit(dir / "flip.nlic", flipped);
  const int rc = run_cli("decode --checkpoint " + q("model.nlac") + " " + q("flip.nlic") + " " + q("flip.ppm"));
  codes << " flipped->" << rc;
  clean = clean && rc == 7 && !fs::exists(dir / "flip.ppm");
  v.check(clean, "truncated or corrupted containers exit with format/decode/checksum codes:" + codes.str());
  fs::remove_all(dir);
  return v;
}

}  // namespace

int main() {
  std::cout << std::unitbuf;
  std::map<int, bool> results;
  bool known_only_10 = false;
  auto run = [&](int id, const char* title, const std::function<Verdict()>& f) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = f();
    } catch (const std::exception& e) {
      v.check(false, std::string("exception: ") + e.what());
    }
    results[id] = v.pass;
    std::cout << (v.pass ? "PASS " : "FAIL ") << std::setw(2) << id << " " << title
              << fmt(" (%.1f s)", seconds_since(t0)) << "\n";
    for (const auto& l : v.lines) std::cout << "     " << l << "\n";
  };
  Lab lab;
  run(1, "gradient integrity", gradient_integrity);
  run(2, "NLM contracts", nlm_contracts);
  run(3, "masked-conv causality", masked_causality);
  run(4, "entropy-model soundness", [&] { return entropy_soundness(&lab.scratch(kTrendLambda, kSeeds[0]).params); });
  run(5, "lossless coding", [&] { return lossless_coding(lab); });
  run(6, "rate tightness", [&] { return rate_tightness(lab); });
  run(7, "training sanity", [&] { return training_sanity(lab); });
  run(8, "joint vs baseline", [&] { return joint_vs_baseline(lab); });
  run(9, "ablation direction", [&] { return ablation_direction(lab); });
  run(10, "metrics", [&] { return metrics(known_only_10); });
  run(11, "end-to-end CLI", [&] { return cli(lab); });

  int passed = 0;
  bool unexpected = false;
  for (auto [id, ok] : results) {
    passed += ok;
    if (!ok && !(kKnownUnattainable.count(id) && (id != 10 || known_only_10))) unexpected = true;
  }
  std::cout << passed << "/" << results.size() << " criteria pass";
  if (passed < int(results.size()))
    std::cout << (unexpected ? "; unexpected failures present" : "; remaining failures are known-unattainable");
  std::cout << "\n";
  return unexpected ? 1 : 0;
}
