// nlaic: train, refine, encode, decode and evaluate the learned image codec.
//
// Exit codes: 0 ok, 1 usage/config, 2 io, 3 malformed file, 4 wrong model,
// 5 entropy decode failure, 6 unsupported version, 7 checksum mismatch,
// 8 numeric failure during training, 9 anything else.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "nlaic/config.hpp"
#include "nlaic/container.hpp"
#include "nlaic/metrics.hpp"
#include "nlaic/trainer.hpp"

namespace fs = std::filesystem;
using namespace nlaic;

namespace {

// Write next to the target and rename, so failures never leave partial files.
void write_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
  fs::path tmp = path;
  tmp += ".part";
  write_file(tmp, bytes);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move output into place: " + path.string());
  }
}

struct TrainFlags {
  std::string config, checkpoint, loss, context;
  double lambda = -1;
  long long seed = -1;
};

RunConfig resolve(const TrainFlags& f) {
  RunConfig rc = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (f.lambda >= 0) rc.train.lambda = f.lambda;
  if (!f.loss.empty()) rc.train.loss = parse_loss_kind(f.loss);
  if (!f.context.empty()) rc.net.context_mode = parse_context_mode(f.context);
  if (f.seed >= 0) rc.train.seed = std::uint64_t(f.seed);
  rc.net.validate();
  rc.train.validate();
  return rc;
}

std::vector<Tensor<float>> dataset_for(const RunConfig& rc) {
  if (!rc.dataset_dir.empty())
    return folder_dataset(rc.dataset_dir, rc.train.patch_size, rc.patches_per_image, rc.train.seed);
  return synthetic_dataset(rc.dataset_size, rc.train.patch_size, rc.train.seed);
}

void print_epochs(const TrainResult& r) {
  std::cout << kRdLogHeader << '\n';
  for (const auto& e : r.epochs) std::cout << rd_log_row(e) << '\n';
}

int cmd_train(const TrainFlags& f) {
  const RunConfig rc = resolve(f);
  ParamSet<float> params = init_params(rc.net, rc.train.seed);
  std::cerr << "training N=" << rc.net.N << " lambda=" << rc.train.lambda
            << " (desk lambda grid, self-chosen)\n";
  const TrainResult r = train_loop(params, rc.net, dataset_for(rc), rc.train);
  print_epochs(r);
  write_atomic(f.checkpoint, serialize_checkpoint(rc.net, params));
  return 0;
}

int cmd_refine(const TrainFlags& f, const std::string& out, bool freeze) {
  RunConfig rc = resolve(f);
  const Checkpoint base = load_checkpoint(f.checkpoint);
  if (f.config.empty()) {
    rc.net = base.config;
  }
  rc.net.context_mode = ContextMode::Joint;
  if (freeze) rc.train.freeze_pretrained = true;
  const auto data = dataset_for(rc);
  const auto before = evaluate(base.params, base.config, data, rc.train.lambda, rc.train.loss);
  TrainResult r;
  const Checkpoint joint = refine_joint(base, rc.net, data, rc.train, &r);
  const auto after = evaluate(joint.params, joint.config, data, rc.train.lambda, rc.train.loss);
  print_epochs(r);
  std::cerr << "baseline bpp_est=" << before.rd.bpp_est << " psnr=" << before.rd.psnr_db
            << " | joint bpp_est=" << after.rd.bpp_est << " psnr=" << after.rd.psnr_db
            << (freeze ? " (context-only refinement)" : "") << '\n';
  write_atomic(out, serialize_checkpoint(joint.config, joint.params));
  return 0;
}

int cmd_encode(const std::string& ckpt, const std::string& in, const std::string& out) {
  const LoadedModel model = LoadedModel::load(ckpt);
  const Image img = read_ppm(in);
  const EncodeOutput e = encode_image(model, img);
  write_atomic(out, e.bytes);
  std::printf("bytes=%zu bpp_actual=%.6f bpp_est=%.6f\n", e.bytes.size(), e.bpp_actual, e.bpp_est);
  return 0;
}

int cmd_decode(const std::string& ckpt, const std::string& in, const std::string& out) {
  const LoadedModel model = LoadedModel::load(ckpt);
  const DecodeOutput d = decode_image(model, read_file(in));
  write_atomic(out, serialize_ppm(d.image));
  std::printf("decoded %dx%d\n", d.image.width, d.image.height);
  return 0;
}

int cmd_eval(const std::vector<std::string>& inputs, const std::string& ckpt,
             const std::string& label) {
  if (ckpt.empty()) {
    if (inputs.size() != 2) throw ConfigError("eval needs ORIGINAL RECONSTRUCTED (or --checkpoint)");
    const Image a = read_ppm(inputs[0]), b = read_ppm(inputs[1]);
    if (a.width != b.width || a.height != b.height) throw ContractError("image sizes differ");
    const auto ta = image_to_tensor255(a), tb = image_to_tensor255(b);
    const double d = ms_ssim(ta, tb, 0, 255.0);
    std::printf("psnr_db,ms_ssim,ms_ssim_db\n%s,%.9f,%.4f\n", psnr(ta, tb).str().c_str(), d,
                ms_ssim_db(d));
    return 0;
  }
  // Codes every image and reports actual rates in the ingestible RD format.
  const LoadedModel model = LoadedModel::load(ckpt);
  std::printf("label,bpp,psnr_db,ms_ssim\n");
  for (const auto& path : inputs) {
    const Image img = read_ppm(path);
    const EncodeOutput e = encode_image(model, img);
    const DecodeOutput d = decode_image(model, e.bytes);
    const auto ta = image_to_tensor255(img), tb = image_to_tensor255(d.image);
    const Psnr p = psnr(ta, tb);
    std::printf("%s,%.6f,%.4f,%.9f\n", label.c_str(), e.bpp_actual, p.lossless ? 100.0 : p.db,
                ms_ssim(ta, tb, 0, 255.0));
  }
  return 0;
}

const RDCurve& pick_curve(const std::vector<RDCurve>& curves, const std::string& label,
                          const std::string& file) {
  if (label.empty()) {
    if (curves.size() != 1) throw ConfigError(file + " holds several curves; pass a label");
    return curves[0];
  }
  for (const auto& c : curves)
    if (c.label == label) return c;
  throw ConfigError("no curve labelled '" + label + "' in " + file);
}

int cmd_bdrate(const std::string& anchor, const std::string& test, const std::string& axis,
               const std::string& anchor_label, const std::string& test_label) {
  const auto a = read_rd_csv(anchor), t = read_rd_csv(test);
  DistortionAxis ax;
  if (axis == "psnr") ax = DistortionAxis::PsnrDb;
  else if (axis == "msssim") ax = DistortionAxis::MsSsimDb;
  else throw ConfigError("axis must be psnr or msssim");
  const double r = bd_rate(pick_curve(a, anchor_label, anchor), pick_curve(t, test_label, test), ax);
  std::printf("%.4f\n", r);
  return 0;
}

int cmd_inspect(const std::string& ckpt, const std::string& in, const std::string& dir) {
  const LoadedModel model = LoadedModel::load(ckpt);
  const Image img = read_ppm(in);
  const auto masks = nlam_masks(model, img);
  if (masks.empty()) {
    std::printf("no masks: every NLAM mask branch is removed in this model\n");
    return 0;
  }
  fs::create_directories(dir);
  for (const auto& [name, m] : masks) {
    const Index c = m.dim(0), h = m.dim(1), w = m.dim(2);
    Image g;
    g.width = int(w);
    g.height = int(h);
    g.rgb.resize(std::size_t(h * w * 3));
    for (Index i = 0; i < h * w; ++i) {
      double s = 0;
      for (Index k = 0; k < c; ++k) s += m[k * h * w + i];
      const auto v = std::uint8_t(std::lround(std::clamp(s / double(c), 0.0, 1.0) * 255.0));
      for (int k = 0; k < 3; ++k) g.rgb[std::size_t(i) * 3 + std::size_t(k)] = v;
    }
    write_ppm(fs::path(dir) / (name + ".ppm"), g);
    std::vector<std::uint8_t> raw(std::size_t(m.size()) * sizeof(float));
    std::memcpy(raw.data(), m.data(), raw.size());
    write_file(fs::path(dir) / (name + ".f32"), raw);
    std::printf("%s [%ld,%ld,%ld]\n", name.c_str(), long(c), long(h), long(w));
  }
  return 0;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const IoError*>(&e)) return 2;
  if (dynamic_cast<const VersionError*>(&e)) return 6;
  if (dynamic_cast<const ChecksumError*>(&e)) return 7;
  if (dynamic_cast<const FormatError*>(&e)) return 3;
  if (dynamic_cast<const ModelMismatchError*>(&e)) return 4;
  if (dynamic_cast<const DecodeError*>(&e)) return 5;
  if (dynamic_cast<const NumericError*>(&e)) return 8;
  if (dynamic_cast<const std::invalid_argument*>(&e)) return 1;
  return 9;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nlaic: learned image codec with non-local attention"};
  app.require_subcommand(1);

  TrainFlags tf;
  auto add_train_flags = [&](CLI::App* s) {
    s->add_option("--config", tf.config, "key = value config file")->check(CLI::ExistingFile);
    s->add_option("--lambda", tf.lambda, "rate-distortion weight");
    s->add_option("--loss", tf.loss, "mse or msssim")->check(CLI::IsMember({"mse", "msssim"}));
    s->add_option("--context", tf.context, "baseline or joint")
        ->check(CLI::IsMember({"baseline", "joint"}));
    s->add_option("--seed", tf.seed, "random seed");
  };

  auto* train = app.add_subcommand("train", "train a model from scratch");
  add_train_flags(train);
  train->add_option("--checkpoint", tf.checkpoint, "output checkpoint")->required();

  std::string refine_out;
  bool freeze = false;
  auto* refine = app.add_subcommand("refine-joint", "add a context model to a baseline and refine");
  add_train_flags(refine);
  refine->add_option("--checkpoint", tf.checkpoint, "baseline checkpoint")->required()->check(CLI::ExistingFile);
  refine->add_option("--out", refine_out, "output joint checkpoint")->required();
  refine->add_flag("--freeze", freeze, "train only the context model");

  std::string ckpt, in, out, label = "nlaic", axis = "psnr", anchor_label, test_label;
  std::vector<std::string> inputs;
  auto* enc = app.add_subcommand("encode", "PPM -> container");
  enc->add_option("--checkpoint", ckpt)->required();
  enc->add_option("input", in)->required();
  enc->add_option("output", out)->required();

  auto* dec = app.add_subcommand("decode", "container -> PPM");
  dec->add_option("--checkpoint", ckpt)->required();
  dec->add_option("input", in)->required();
  dec->add_option("output", out)->required();

  auto* ev = app.add_subcommand("eval", "metrics for ORIGINAL RECON, or RD points with --checkpoint");
  ev->add_option("--checkpoint", ckpt, "code each input and report actual rates");
  ev->add_option("--label", label, "curve label for RD output");
  ev->add_option("inputs", inputs)->required();

  auto* bd = app.add_subcommand("bdrate", "BD-rate of TEST against ANCHOR (percent)");
  std::string anchor_csv, test_csv;
  bd->add_option("anchor", anchor_csv)->required();
  bd->add_option("test", test_csv)->required();
  bd->add_option("--axis", axis, "psnr or msssim");
  bd->add_option("--anchor-label", anchor_label);
  bd->add_option("--test-label", test_label);

  auto* insp = app.add_subcommand("inspect-masks", "dump NLAM masks for an image");
  insp->add_option("--checkpoint", ckpt)->required();
  insp->add_option("input", in)->required();
  insp->add_option("outdir", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*train) return cmd_train(tf);
    if (*refine) return cmd_refine(tf, refine_out, freeze);
    if (*enc) return cmd_encode(ckpt, in, out);
    if (*dec) return cmd_decode(ckpt, in, out);
    if (*ev) return cmd_eval(inputs, ckpt, label);
    if (*bd) return cmd_bdrate(anchor_csv, test_csv, axis, anchor_label, test_label);
    if (*insp) return cmd_inspect(ckpt, in, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return 1;
}
