#include "nlaic/config.hpp"

#include <fstream>
#include <sstream>

namespace nlaic {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  T out{};
  in >> out;
  if (in.fail() || !in.eof()) throw ConfigError("bad value for " + key + ": '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

}  // namespace

std::vector<Setting> parse_key_values(const std::string& text) {
  std::vector<Setting> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    out.push_back({std::move(key), std::move(value), lineno});
  }
  return out;
}

ContextMode parse_context_mode(const std::string& s) {
  if (s == "baseline") return ContextMode::Baseline;
  if (s == "joint") return ContextMode::Joint;
  throw ConfigError("context must be baseline or joint, got '" + s + "'");
}

LossKind parse_loss_kind(const std::string& s) {
  if (s == "mse") return LossKind::Mse;
  if (s == "msssim") return LossKind::MsSsim;
  throw ConfigError("loss must be mse or msssim, got '" + s + "'");
}

void apply_setting(RunConfig& c, const std::string& k, const std::string& v) {
  auto& t = c.train;
  auto& n = c.net;
  if (k == "N") n.N = parse_number<int>(k, v);
  else if (k == "context") n.context_mode = parse_context_mode(v);
  else if (k == "remove_first_mask") n.remove_first_mask = parse_bool(k, v);
  else if (k == "remove_main_masks") n.remove_main_masks = parse_bool(k, v);
  else if (k == "remove_all_masks") n.remove_all_masks = parse_bool(k, v);
  else if (k == "lambda") t.lambda = parse_number<double>(k, v);
  else if (k == "loss") t.loss = parse_loss_kind(v);
  else if (k == "lr_main") t.lr_main = parse_number<double>(k, v);
  else if (k == "lr_context_clip") t.lr_context_clip = parse_number<double>(k, v);
  else if (k == "context_clip_epoch") t.context_clip_epoch = parse_number<int>(k, v);
  else if (k == "batch_size") t.batch_size = parse_number<int>(k, v);
  else if (k == "patch_size") t.patch_size = parse_number<int>(k, v);
  else if (k == "epochs") t.epochs = parse_number<int>(k, v);
  else if (k == "max_steps") t.max_steps = parse_number<int>(k, v);
  else if (k == "seed") t.seed = parse_number<std::uint64_t>(k, v);
  else if (k == "grad_clip") t.grad_clip = parse_number<double>(k, v);
  else if (k == "tail_weight") t.tail_weight = parse_number<double>(k, v);
  else if (k == "freeze_pretrained") t.freeze_pretrained = parse_bool(k, v);
  else if (k == "freeze_autoencoder") t.freeze_autoencoder = parse_bool(k, v);
  else if (k == "out_dir") t.out_dir = v;
  else if (k == "dataset_size") c.dataset_size = parse_number<int>(k, v);
  else if (k == "dataset_dir") c.dataset_dir = v;
  else if (k == "patches_per_image") c.patches_per_image = parse_number<int>(k, v);
  else throw ConfigError("unknown config key '" + k + "'");
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig c;
  for (const auto& s : parse_key_values(text)) {
    try {
      apply_setting(c, s.key, s.value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(s.line) + ": " + e.what());
    }
  }
  c.net.validate();
  c.train.validate();
  if (c.dataset_size < 1) throw ConfigError("dataset_size must be >= 1");
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

}  // namespace nlaic
