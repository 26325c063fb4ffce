#pragma once

#include <string>
#include <vector>

#include "nlaic/codec_net.hpp"
#include "nlaic/trainer.hpp"

// Flat "key = value" files. '#' starts a comment; blank lines are ignored.
//
// Model keys: N, context (baseline|joint), remove_first_mask,
//   remove_main_masks, remove_all_masks.
// Training keys: lambda, loss (mse|msssim), lr_main, lr_context_clip,
//   context_clip_epoch, batch_size, patch_size, epochs, max_steps, seed,
//   grad_clip, tail_weight, freeze_pretrained, freeze_autoencoder, out_dir.
// Data keys: dataset_size, dataset_dir, patches_per_image.

namespace nlaic {

struct RunConfig {
  NetConfig net;
  TrainConfig train;
  int dataset_size = 16;
  std::string dataset_dir;  // empty: synthetic textures
  int patches_per_image = 4;
};

struct Setting {
  std::string key, value;
  int line = 0;
};

// Settings in file order; ConfigError with the line number on bad syntax.
std::vector<Setting> parse_key_values(const std::string& text);

// Applies one key; ConfigError for unknown keys or bad values.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

ContextMode parse_context_mode(const std::string& s);
LossKind parse_loss_kind(const std::string& s);

}  // namespace nlaic
