#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "mde/cli.hpp"

namespace {

// flags that mirror config-file keys; collected as string overrides so one
// parser (the config reader) owns all value validation
struct ConfigFlags {
  std::string task, s, steps, batch, seed, lr_g, lr_d, size, depth, base_width, bottleneck;
  std::string hns, adv, perc;
  bool fe_identity = false;
  std::vector<std::string> sets;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& f) {
  cmd->add_option("--task", f.task, "masking task: i, ri, col:1, col:2, re, rec");
  cmd->add_option("--s", f.s, "visible masking ratio S in (0,1]");
  cmd->add_option("--steps", f.steps, "total training updates");
  cmd->add_option("--batch", f.batch, "batch size");
  cmd->add_option("--seed", f.seed, "run seed");
  cmd->add_option("--lr-g", f.lr_g, "generator learning rate");
  cmd->add_option("--lr-d", f.lr_d, "critic learning rate");
  cmd->add_option("--size", f.size, "square model input size");
  cmd->add_option("--depth", f.depth, "encoder/decoder depth");
  cmd->add_option("--base-width", f.base_width, "first conv width");
  cmd->add_option("--bottleneck", f.bottleneck, "bottleneck width");
  cmd->add_option("--hns", f.hns, "hide-and-seek loss: on (default weight) or off")
      ->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--adv", f.adv, "adversarial loss: on (default weight) or off")
      ->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--perc", f.perc, "perceptual loss: on (default weight) or off")
      ->check(CLI::IsMember({"on", "off"}));
  cmd->add_flag("--fe-identity", f.fe_identity,
                "use the raw image as the single perceptual level");
  cmd->add_option("--set", f.sets, "extra config override, key=value")->take_all();
}

std::map<std::string, std::string> collect_overrides(const ConfigFlags& f) {
  std::map<std::string, std::string> o;
  auto put = [&o](const char* key, const std::string& v) {
    if (!v.empty()) o[key] = v;
  };
  put("task", f.task);
  put("ratio", f.s);
  put("total_updates", f.steps);
  put("batch", f.batch);
  put("seed", f.seed);
  put("lr_gen", f.lr_g);
  put("lr_disc", f.lr_d);
  if (!f.size.empty()) {
    o["width"] = f.size;
    o["height"] = f.size;
  }
  put("depth", f.depth);
  put("base_width", f.base_width);
  put("bottleneck", f.bottleneck);
  if (!f.hns.empty()) o["lambda_hns"] = f.hns == "on" ? "0.01" : "0";
  if (!f.adv.empty()) o["lambda_adv"] = f.adv == "on" ? "0.01" : "0";
  if (!f.perc.empty()) o["lambda_compl"] = f.perc == "on" ? "2e-05" : "0";
  if (f.fe_identity) {
    o["fe_identity"] = "true";
    o["perceptual"] = "1";
  }
  for (const std::string& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw CLI::ValidationError("--set", "expected key=value, got '" + kv + "'");
    o[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"missing-data encoder: train and probe channel-wise image completion models"};
  app.set_version_flag("--version", std::string("mde ") + mde::kVersion);
  app.require_subcommand(1);
  int code = 0;

  // train
  auto train_opts = std::make_shared<mde::cli::TrainOptions>();
  auto train_flags = std::make_shared<ConfigFlags>();
  CLI::App* train = app.add_subcommand("train", "train a completion model");
  train->add_option("--config", train_opts->config_path, "flat key = value config file");
  train->add_option("--data", train_opts->data, "dataset spec")->capture_default_str();
  train->add_option("--out", train_opts->out_dir, "artifact directory")->capture_default_str();
  train->add_option("--resume", train_opts->resume, "checkpoint to continue");
  train->add_option("--grid-images", train_opts->grid_images, "images per sample grid")->capture_default_str();
  add_config_flags(train, *train_flags);
  train->callback([&code, train_opts, train_flags] {
    train_opts->overrides = collect_overrides(*train_flags);
    code = mde::cli::run_guarded(
        std::cerr, [&] { return mde::cli::cmd_train(*train_opts, std::cout); });
  });

  // complete
  auto complete_opts = std::make_shared<mde::cli::CompleteOptions>();
  CLI::App* complete = app.add_subcommand("complete", "complete masked images with a checkpoint");
  complete->add_option("--checkpoint", complete_opts->checkpoint, "trained model")->required();
  complete->add_option("--data", complete_opts->data, "dataset spec")->required();
  complete->add_option("--out", complete_opts->out_dir, "artifact directory")->capture_default_str();
  complete->add_option("--samples", complete_opts->samples, "independent completions per image")->capture_default_str();
  complete->add_option("--seed", complete_opts->seed, "mask seed")->capture_default_str();
  complete->add_option("--task", complete_opts->task, "override the checkpoint's masking task");
  complete->add_option("--s", complete_opts->ratio, "override the checkpoint's masking ratio");
  complete->add_option("--limit", complete_opts->limit, "max images (0 = all)")->capture_default_str();
  complete->add_flag("--resize", complete_opts->allow_resize,
                     "rescale inputs to the model size instead of failing");
  complete->callback([&code, complete_opts] {
    code = mde::cli::run_guarded(
        std::cerr, [&] { return mde::cli::cmd_complete(*complete_opts, std::cout); });
  });

  // resample
  auto resample_opts = std::make_shared<mde::cli::ResampleOptions>();
  CLI::App* resample = app.add_subcommand("resample", "iteratively re-mask and re-complete");
  resample->add_option("--checkpoint", resample_opts->checkpoint, "trained model")->required();
  resample->add_option("--data", resample_opts->data, "dataset spec")->required();
  resample->add_option("--out", resample_opts->out_dir, "artifact directory")->capture_default_str();
  resample->add_option("--steps", resample_opts->steps, "resampling iterations")->capture_default_str();
  resample->add_option("--seed", resample_opts->seed, "mask seed")->capture_default_str();
  resample->add_option("--index", resample_opts->index, "dataset image to resample")->capture_default_str();
  resample->add_option("--task", resample_opts->task, "override the checkpoint's masking task");
  resample->add_option("--s", resample_opts->ratio, "override the checkpoint's masking ratio");
  resample->add_flag("--resize", resample_opts->allow_resize,
                     "rescale inputs to the model size instead of failing");
  resample->callback([&code, resample_opts] {
    code = mde::cli::run_guarded(
        std::cerr, [&] { return mde::cli::cmd_resample(*resample_opts, std::cout); });
  });

  // eval
  auto eval_opts = std::make_shared<mde::cli::EvalOptions>();
  CLI::App* eval = app.add_subcommand("eval", "score checkpoints under evaluation protocols");
  eval->add_option("--checkpoint", eval_opts->checkpoints, "trained model(s)")
      ->required()
      ->take_all();
  eval->add_option("--data", eval_opts->data, "dataset spec")->required();
  eval->add_option("--out", eval_opts->out_dir, "artifact directory")->capture_default_str();
  eval->add_option("--protocol", eval_opts->protocol, "occlusions or task-matrix")->capture_default_str();
  eval->add_option("--s", eval_opts->ratio, "masking ratio for task-matrix cells")->capture_default_str();
  eval->add_option("--seed", eval_opts->seed, "mask seed")->capture_default_str();
  eval->add_option("--limit", eval_opts->limit, "max images per cell")->capture_default_str();
  eval->add_flag("--resize", eval_opts->allow_resize,
                 "rescale inputs to each model size instead of failing");
  eval->callback([&code, eval_opts] {
    code = mde::cli::run_guarded(std::cerr,
                                 [&] { return mde::cli::cmd_eval(*eval_opts, std::cout); });
  });

  // mask-stats
  auto stats_opts = std::make_shared<mde::cli::MaskStatsOptions>();
  CLI::App* stats = app.add_subcommand("mask-stats", "empirical vs analytic mask fractions");
  stats->add_option("--task", stats_opts->task, "masking task")->capture_default_str();
  stats->add_option("--s", stats_opts->ratio, "visible masking ratio")->capture_default_str();
  stats->add_option("--size", stats_opts->size, "mask side length")->capture_default_str();
  stats->add_option("--n", stats_opts->n, "number of masks")->capture_default_str();
  stats->add_option("--seed", stats_opts->seed, "mask seed")->capture_default_str();
  stats->add_option("--out", stats_opts->out_dir, "artifact directory")->capture_default_str();
  stats->callback([&code, stats_opts] {
    code = mde::cli::run_guarded(
        std::cerr, [&] { return mde::cli::cmd_mask_stats(*stats_opts, std::cout); });
  });

  // grad-check
  auto grad_opts = std::make_shared<mde::cli::GradCheckCmdOptions>();
  CLI::App* grad = app.add_subcommand("grad-check", "verify gradients against finite differences");
  grad->add_option("--out", grad_opts->out_dir, "artifact directory")->capture_default_str();
  grad->callback([&code, grad_opts] {
    code = mde::cli::run_guarded(
        std::cerr, [&] { return mde::cli::cmd_grad_check(*grad_opts, std::cout); });
  });

  CLI11_PARSE(app, argc, argv);
  return code;
}
