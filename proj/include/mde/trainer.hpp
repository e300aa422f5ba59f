#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mde/checkpoint.hpp"
#include "mde/common.hpp"
#include "mde/losses.hpp"
#include "mde/maskgen.hpp"
#include "mde/models.hpp"
#include "mde/ops.hpp"
#include "mde/optim.hpp"
#include "mde/rng.hpp"
#include "mde/tape.hpp"

namespace mde {

struct TrainConfig {
  Task task = Task::RE;
  int col_k = 1;
  double ratio = 0.25;
  int64_t batch = 8;           // published runs use 24
  int64_t total_updates = 2000;  // published runs use 300000; desk default
  double lr_gen = 2e-4;
  double lr_disc = 2e-5;
  AdamConfig adam;
  double anneal_power = 1.0;
  uint64_t seed = 1;
  LossWeights weights;
  HnsNorm hns_norm = HnsNorm::L1;
  int64_t checkpoint_interval = 500;  // steps between snapshots; 0 disables
  ModelConfig model;
  bool disc_coords = true;
  // perceptual feature stack: identity uses the raw image as the single level
  bool fe_identity = false;
  int fe_levels = 5;
  int64_t fe_base = 4;

  int effective_fe_levels() const { return fe_identity ? 1 : fe_levels; }

  void validate() const {
    model.validate();
    MDE_CHECK(lr_gen > 0.0 && lr_disc > 0.0, ConfigError, "learning rates must be positive");
    MDE_CHECK(total_updates >= 1, ConfigError, "total_updates must be >= 1");
    MDE_CHECK(batch >= 1, ConfigError, "batch must be >= 1");
    MDE_CHECK(anneal_power >= 0.0, ConfigError, "anneal_power must be >= 0");
    MDE_CHECK(checkpoint_interval >= 0, ConfigError, "checkpoint_interval must be >= 0");
    adam.validate();
    weights.validate();
    detail::check_ratio(ratio, model.width, model.height);
    if (task == Task::Col)
      MDE_CHECK(col_k == 1 || col_k == 2, ConfigError, "col_k must be 1 or 2");
    if (weights.lambda_hns > 0.0)
      MDE_CHECK(task == Task::RE || task == Task::REC, ConfigError,
                "hide-and-seek requires a box-shaped visible region: use task re or rec, or set "
                "lambda_hns = 0");
    if (weights.lambda_compl > 0.0) {
      MDE_CHECK(static_cast<int>(weights.perceptual.size()) == effective_fe_levels(), ConfigError,
                "perceptual weights (", weights.perceptual.size(),
                ") must match feature levels (", effective_fe_levels(), ")");
      if (!fe_identity) {
        MDE_CHECK(fe_levels >= 1, ConfigError, "fe_levels must be >= 1");
        MDE_CHECK(fe_base >= 1, ConfigError, "fe_base must be >= 1");
      }
    }
  }
};

// ---- config text form (key = value lines, # comments) ----

inline std::map<std::string, std::string> parse_kv_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    MDE_CHECK(eq != std::string::npos, ParseError, "config line ", lineno,
              ": expected 'key = value', got '", line, "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    MDE_CHECK(!key.empty(), ParseError, "config line ", lineno, ": empty key");
    MDE_CHECK(kv.emplace(key, value).second, ParseError, "config line ", lineno,
              ": duplicate key '", key, "'");
  }
  return kv;
}

namespace detail {

inline double kv_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const double d = std::stod(v, &used);
    MDE_CHECK(used == v.size(), ParseError, "");
    return d;
  } catch (const std::exception&) {
    MDE_THROW(ParseError, "config: '", key, "' expects a number, got '", v, "'");
  }
}

inline int64_t kv_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const long long i = std::stoll(v, &used);
    MDE_CHECK(used == v.size(), ParseError, "");
    return static_cast<int64_t>(i);
  } catch (const std::exception&) {
    MDE_THROW(ParseError, "config: '", key, "' expects an integer, got '", v, "'");
  }
}

inline bool kv_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  MDE_THROW(ParseError, "config: '", key, "' expects a boolean, got '", v, "'");
}

inline std::vector<double> kv_double_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) out.push_back(kv_double(key, item));
  MDE_CHECK(!out.empty(), ParseError, "config: '", key, "' expects a comma-separated list");
  return out;
}

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

// Applies recognized keys to the config, erasing them from the map; unknown
// keys are left behind for the caller to judge.
inline void apply_config_kv(TrainConfig& cfg, std::map<std::string, std::string>& kv) {
  auto take = [&kv](const char* key) -> const std::string* {
    auto it = kv.find(key);
    if (it == kv.end()) return nullptr;
    return &it->second;
  };
  auto done = [&kv](const char* key) { kv.erase(key); };

  if (const auto* v = take("task")) {
    auto [task, k] = parse_task(*v);
    cfg.task = task;
    if (task == Task::Col) cfg.col_k = k;
    done("task");
  }
  struct DoubleKey {
    const char* name;
    double* slot;
  };
  for (auto [name, slot] : {DoubleKey{"ratio", &cfg.ratio},
                            DoubleKey{"lr_gen", &cfg.lr_gen},
                            DoubleKey{"lr_disc", &cfg.lr_disc},
                            DoubleKey{"adam_beta1", &cfg.adam.beta1},
                            DoubleKey{"adam_beta2", &cfg.adam.beta2},
                            DoubleKey{"adam_eps", &cfg.adam.eps},
                            DoubleKey{"anneal_power", &cfg.anneal_power},
                            DoubleKey{"lambda_compl", &cfg.weights.lambda_compl},
                            DoubleKey{"lambda_adv", &cfg.weights.lambda_adv},
                            DoubleKey{"lambda_hns", &cfg.weights.lambda_hns}}) {
    if (const auto* v = take(name)) {
      *slot = detail::kv_double(name, *v);
      done(name);
    }
  }
  struct IntKey {
    const char* name;
    int64_t* slot;
  };
  for (auto [name, slot] : {IntKey{"batch", &cfg.batch},
                            IntKey{"total_updates", &cfg.total_updates},
                            IntKey{"checkpoint_interval", &cfg.checkpoint_interval},
                            IntKey{"width", &cfg.model.width},
                            IntKey{"height", &cfg.model.height},
                            IntKey{"base_width", &cfg.model.base_width},
                            IntKey{"bottleneck", &cfg.model.bottleneck},
                            IntKey{"fe_base", &cfg.fe_base}}) {
    if (const auto* v = take(name)) {
      *slot = detail::kv_int(name, *v);
      done(name);
    }
  }
  if (const auto* v = take("depth")) {
    cfg.model.depth = static_cast<int>(detail::kv_int("depth", *v));
    done("depth");
  }
  if (const auto* v = take("fe_levels")) {
    cfg.fe_levels = static_cast<int>(detail::kv_int("fe_levels", *v));
    done("fe_levels");
  }
  if (const auto* v = take("seed")) {
    cfg.seed = static_cast<uint64_t>(detail::kv_int("seed", *v));
    done("seed");
  }
  if (const auto* v = take("hns_norm")) {
    if (*v == "l1")
      cfg.hns_norm = HnsNorm::L1;
    else if (*v == "l2")
      cfg.hns_norm = HnsNorm::L2;
    else
      MDE_THROW(ParseError, "config: hns_norm must be l1 or l2, got '", *v, "'");
    done("hns_norm");
  }
  if (const auto* v = take("perceptual")) {
    cfg.weights.perceptual = detail::kv_double_list("perceptual", *v);
    done("perceptual");
  }
  if (const auto* v = take("disc_coords")) {
    cfg.disc_coords = detail::kv_bool("disc_coords", *v);
    done("disc_coords");
  }
  if (const auto* v = take("fe_identity")) {
    cfg.fe_identity = detail::kv_bool("fe_identity", *v);
    done("fe_identity");
  }
}

inline std::string config_to_text(const TrainConfig& cfg) {
  std::ostringstream out;
  out << "task = " << task_name(cfg.task, cfg.col_k) << "\n";
  out << "ratio = " << detail::fmt_double(cfg.ratio) << "\n";
  out << "batch = " << cfg.batch << "\n";
  out << "total_updates = " << cfg.total_updates << "\n";
  out << "lr_gen = " << detail::fmt_double(cfg.lr_gen) << "\n";
  out << "lr_disc = " << detail::fmt_double(cfg.lr_disc) << "\n";
  out << "adam_beta1 = " << detail::fmt_double(cfg.adam.beta1) << "\n";
  out << "adam_beta2 = " << detail::fmt_double(cfg.adam.beta2) << "\n";
  out << "adam_eps = " << detail::fmt_double(cfg.adam.eps) << "\n";
  out << "anneal_power = " << detail::fmt_double(cfg.anneal_power) << "\n";
  out << "seed = " << cfg.seed << "\n";
  out << "lambda_compl = " << detail::fmt_double(cfg.weights.lambda_compl) << "\n";
  out << "lambda_adv = " << detail::fmt_double(cfg.weights.lambda_adv) << "\n";
  out << "lambda_hns = " << detail::fmt_double(cfg.weights.lambda_hns) << "\n";
  out << "perceptual = ";
  for (size_t i = 0; i < cfg.weights.perceptual.size(); ++i)
    out << (i ? "," : "") << detail::fmt_double(cfg.weights.perceptual[i]);
  out << "\n";
  out << "hns_norm = " << (cfg.hns_norm == HnsNorm::L1 ? "l1" : "l2") << "\n";
  out << "checkpoint_interval = " << cfg.checkpoint_interval << "\n";
  out << "width = " << cfg.model.width << "\n";
  out << "height = " << cfg.model.height << "\n";
  out << "base_width = " << cfg.model.base_width << "\n";
  out << "depth = " << cfg.model.depth << "\n";
  out << "bottleneck = " << cfg.model.bottleneck << "\n";
  out << "disc_coords = " << (cfg.disc_coords ? 1 : 0) << "\n";
  out << "fe_identity = " << (cfg.fe_identity ? 1 : 0) << "\n";
  out << "fe_levels = " << cfg.fe_levels << "\n";
  out << "fe_base = " << cfg.fe_base << "\n";
  return out.str();
}

inline TrainConfig config_from_text(const std::string& text) {
  TrainConfig cfg;
  auto kv = parse_kv_text(text);
  apply_config_kv(cfg, kv);
  MDE_CHECK(kv.empty(), ConfigError, "config has unknown key '", kv.begin()->first, "'");
  return cfg;
}

// ---- deterministic derived streams ----

namespace detail {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t seed, uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream));
}

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

template <typename S>
uint64_t params_checksum(const ParamRefs<S>& refs) {
  uint64_t h = 1469598103934665603ULL;
  for (const auto& [name, t] : refs) {
    h = fnv1a64(name.data(), name.size(), h);
    h = fnv1a64(t->data.data(), t->data.size() * sizeof(S), h);
  }
  return h;
}

}  // namespace detail

// ---- trainer state ----

template <typename S>
struct TrainerState {
  TrainConfig cfg;
  Generator<S> gen;
  Discriminator<S> disc;
  FeatureExtractor<S> fe;
  AdamState<S> opt_g;
  AdamState<S> opt_d;
  Rng rng{1};
  uint64_t step = 0;

  // per-epoch derived state, recomputed from (seed, epoch) on demand
  int64_t epoch = -1;
  std::vector<int64_t> perm;
  std::vector<std::array<ChannelBox, 3>> decoys;
};

struct StepStats {
  uint64_t step = 0;  // 1-based count of completed updates
  double rec = 0.0;
  double compl_vgg = 0.0;
  double adv_g = 0.0;
  double adv_d = 0.0;
  double hns_g = 0.0;
  double hns_d = 0.0;
  double lr_g = 0.0;
  double lr_d = 0.0;
};

template <typename S>
TrainerState<S> init_trainer(const TrainConfig& cfg) {
  cfg.validate();
  TrainerState<S> st;
  st.cfg = cfg;
  st.rng = Rng(cfg.seed);
  st.gen = build_generator<S>(cfg.model, st.rng);
  st.disc = build_discriminator<S>(cfg.model, st.rng, cfg.disc_coords);
  if (cfg.fe_identity)
    st.fe = FeatureExtractor<S>::make_identity();
  else if (cfg.weights.lambda_compl > 0.0)
    st.fe = build_feature_extractor<S>(cfg.fe_levels, cfg.fe_base, st.rng);
  return st;
}

inline int64_t steps_per_epoch(int64_t dataset_size, int64_t batch) {
  MDE_CHECK(dataset_size >= 1, ParameterError, "empty dataset");
  return std::max<int64_t>(1, dataset_size / batch);
}

// Rebuilds the epoch permutation and per-image decoy boxes from the derived
// stream for (seed, epoch); lazily, so a resumed run lands in the same epoch
// state as the uninterrupted one.
template <typename S>
void ensure_epoch(TrainerState<S>& st, int64_t dataset_size) {
  const int64_t spe = steps_per_epoch(dataset_size, st.cfg.batch);
  const int64_t epoch = static_cast<int64_t>(st.step) / spe;
  if (epoch == st.epoch && static_cast<int64_t>(st.perm.size()) == dataset_size) return;

  Rng er(detail::derive_seed(st.cfg.seed, static_cast<uint64_t>(epoch) + 1));
  st.perm.resize(static_cast<size_t>(dataset_size));
  for (int64_t i = 0; i < dataset_size; ++i) st.perm[static_cast<size_t>(i)] = i;
  for (int64_t i = dataset_size - 1; i > 0; --i) {
    const int64_t j = er.uniform_int(0, i);
    std::swap(st.perm[static_cast<size_t>(i)], st.perm[static_cast<size_t>(j)]);
  }
  st.decoys.clear();
  st.decoys.reserve(static_cast<size_t>(dataset_size));
  for (int64_t i = 0; i < dataset_size; ++i)
    st.decoys.push_back(
        sample_rec_boxes(er, st.cfg.ratio, st.cfg.model.width, st.cfg.model.height));
  st.epoch = epoch;
}

namespace detail {

template <typename S>
void check_term_finite(const char* term, S value, uint64_t step) {
  MDE_CHECK(std::isfinite(static_cast<double>(value)), NumericError, "training aborted: ", term,
            " is non-finite at step ", step);
}

}  // namespace detail

// One discriminator update (adversarial + box regression on fakes) followed
// by one generator update of the total objective.
template <typename S>
StepStats train_step(TrainerState<S>& st, const std::vector<Tensor<S>>& images) {
  const TrainConfig& cfg = st.cfg;
  const int64_t W = cfg.model.width, H = cfg.model.height, N = cfg.batch;
  const int64_t dataset_size = static_cast<int64_t>(images.size());
  MDE_CHECK(st.step < static_cast<uint64_t>(cfg.total_updates), ContractError,
            "train_step called past total_updates");
  ensure_epoch(st, dataset_size);

  // assemble the batch in epoch-permutation order
  const int64_t spe = steps_per_epoch(dataset_size, cfg.batch);
  const int64_t local = static_cast<int64_t>(st.step) % spe;
  auto batch = Tensor<S>::zeros({N, 3, H, W});
  std::vector<int64_t> batch_idx(static_cast<size_t>(N));
  for (int64_t j = 0; j < N; ++j) {
    const int64_t idx = st.perm[static_cast<size_t>((local * N + j) % dataset_size)];
    batch_idx[static_cast<size_t>(j)] = idx;
    const Tensor<S>& img = images[static_cast<size_t>(idx)];
    MDE_CHECK((img.shape == Shape{3, H, W}), DimensionError, "dataset image ", idx, " has shape ",
              shape_str(img.shape), ", expected [3,", H, ",", W, "]");
    std::copy(img.data.begin(), img.data.end(), batch.data.begin() + j * 3 * H * W);
  }
  for (int64_t i = 0; i < batch.size(); ++i)
    MDE_CHECK(batch[i] >= S(0) && batch[i] <= S(1), ParameterError,
              "batch values must lie in [0,1]");

  // fresh masks each step from the main stream
  MaskBatch mb = make_mask(cfg.task, st.rng, cfg.ratio, W, H, N, cfg.col_k);
  auto mask = mb.mask.template cast<S>();

  const bool use_adv = cfg.weights.lambda_adv > 0.0;
  const bool use_hns = cfg.weights.lambda_hns > 0.0;
  const bool use_perc = cfg.weights.lambda_compl > 0.0;

  const double lr_g = lr_schedule(static_cast<int64_t>(st.step), cfg.total_updates, cfg.lr_gen,
                                  cfg.anneal_power);
  const double lr_d = lr_schedule(static_cast<int64_t>(st.step), cfg.total_updates, cfg.lr_disc,
                                  cfg.anneal_power);

  StepStats out;
  out.step = st.step + 1;
  out.lr_g = lr_g;
  out.lr_d = lr_d;

  // generator graph: forward once, reuse the value as the critic's fake input
  Tape<S> tg;
  Var vz = tg.constant(batch);
  Var vm = tg.constant(mask);
  Var vmasked = mul(tg, vz, vm);
  Var g_out = generator_forward(tg, st.gen, vmasked, /*train=*/true, /*update_stats=*/true,
                                Bind::Trainable);
  Tensor<S> fake = tg.value(g_out);

  // ---- discriminator update ----
  if (use_adv || use_hns) {
    Tape<S> td;
    auto real_out = discriminator_forward(td, st.disc, td.constant(batch), Bind::Trainable);
    auto fake_out = discriminator_forward(td, st.disc, td.constant(fake), Bind::Trainable);
    Var ld{};
    if (use_adv) {
      Var adv = loss_disc_adv(td, real_out.realness, fake_out.realness);
      out.adv_d = static_cast<double>(td.value(adv)[0]);
      detail::check_term_finite("critic adversarial loss", out.adv_d, out.step);
      ld = adv;
    }
    if (use_hns) {
      // the box head only ever regresses on completed images
      Var hns = loss_hns_disc(td, fake_out.boxes, mb.boxes, W, H, cfg.hns_norm);
      out.hns_d = static_cast<double>(td.value(hns)[0]);
      detail::check_term_finite("critic box loss", out.hns_d, out.step);
      Var weighted = affine(td, hns, cfg.weights.lambda_hns, 0.0);
      ld = ld.valid() ? add(td, ld, weighted) : weighted;
    }
    const uint64_t gen_sum = detail::params_checksum(st.gen.params());
    td.backward(ld);
    auto grads = td.named_grads();
    adam_step(st.opt_d, st.disc.params(), grads, lr_d, cfg.adam);
    MDE_CHECK(detail::params_checksum(st.gen.params()) == gen_sum, ContractError,
              "generator parameters changed during the critic update");
  }

  // ---- generator update ----
  Var rec = loss_reconstruction(tg, g_out, vz, vm);
  out.rec = static_cast<double>(tg.value(rec)[0]);
  detail::check_term_finite("reconstruction loss", out.rec, out.step);

  Var perc{};
  if (use_perc) {
    perc = loss_perceptual(tg, g_out, vz, st.fe, cfg.weights.perceptual);
    out.compl_vgg = static_cast<double>(tg.value(perc)[0]);
    detail::check_term_finite("perceptual completion loss", out.compl_vgg, out.step);
  }

  Var adv{}, hns{};
  if (use_adv || use_hns) {
    auto d_out = discriminator_forward(tg, st.disc, g_out, Bind::Frozen);
    if (use_adv) {
      adv = loss_gen_adv(tg, d_out.realness);
      out.adv_g = static_cast<double>(tg.value(adv)[0]);
      detail::check_term_finite("generator adversarial loss", out.adv_g, out.step);
    }
    if (use_hns) {
      std::vector<std::array<ChannelBox, 3>> decoy_boxes(static_cast<size_t>(N));
      for (int64_t j = 0; j < N; ++j)
        decoy_boxes[static_cast<size_t>(j)] = st.decoys[static_cast<size_t>(
            batch_idx[static_cast<size_t>(j)])];
      hns = loss_hns_gen(tg, d_out.boxes, decoy_boxes, W, H, cfg.hns_norm);
      out.hns_g = static_cast<double>(tg.value(hns)[0]);
      detail::check_term_finite("generator box loss", out.hns_g, out.step);
    }
  }

  Var total = loss_total_gen(tg, rec, perc, adv, hns, cfg.weights);
  detail::check_term_finite("total generator loss", tg.value(total)[0], out.step);

  const uint64_t disc_sum = detail::params_checksum(st.disc.params());
  tg.backward(total);
  auto grads = tg.named_grads();
  adam_step(st.opt_g, st.gen.params(), grads, lr_g, cfg.adam);
  MDE_CHECK(detail::params_checksum(st.disc.params()) == disc_sum, ContractError,
            "critic parameters changed during the generator update");

  st.step += 1;
  return out;
}

// ---- metrics log ----

inline std::string csv_header() {
  return "step,loss_rec,loss_compl_vgg,loss_adv_g,loss_adv_d,loss_hns_g,loss_hns_d,lr_g,lr_d";
}

inline std::string csv_row(const StepStats& s) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%llu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g",
                static_cast<unsigned long long>(s.step), s.rec, s.compl_vgg, s.adv_g, s.adv_d,
                s.hns_g, s.hns_d, s.lr_g, s.lr_d);
  return buf;
}

// ---- checkpointing ----

namespace detail {

template <typename S>
void archive_put(Archive& a, const std::string& name, const Tensor<S>& t) {
  if constexpr (std::is_same_v<S, float>)
    a.f32.emplace(name, t);
  else
    a.f64.emplace(name, t);
}

template <typename S>
const Tensor<S>& archive_get(const Archive& a, const std::string& name) {
  if constexpr (std::is_same_v<S, float>) {
    auto it = a.f32.find(name);
    MDE_CHECK(it != a.f32.end(), ParseError, "checkpoint is missing tensor '", name, "'");
    return it->second;
  } else {
    auto it = a.f64.find(name);
    MDE_CHECK(it != a.f64.end(), ParseError, "checkpoint is missing tensor '", name, "'");
    return it->second;
  }
}

inline std::vector<uint8_t> u64_bytes(uint64_t v) {
  std::vector<uint8_t> b(8);
  for (int i = 0; i < 8; ++i) b[static_cast<size_t>(i)] = static_cast<uint8_t>(v >> (8 * i));
  return b;
}

inline uint64_t bytes_u64(const std::vector<uint8_t>& b, const char* what) {
  MDE_CHECK(b.size() == 8, ParseError, "checkpoint field '", what, "' must be 8 bytes");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[static_cast<size_t>(i)]) << (8 * i);
  return v;
}

template <typename S>
void archive_put_adam(Archive& a, const std::string& prefix, const AdamState<S>& opt) {
  for (const auto& [name, t] : opt.m) archive_put(a, prefix + ".m." + name, t);
  for (const auto& [name, t] : opt.v) archive_put(a, prefix + ".v." + name, t);
  a.blobs[prefix + ".step"] = u64_bytes(static_cast<uint64_t>(opt.step));
}

template <typename S>
void archive_get_adam(const Archive& a, const std::string& prefix, AdamState<S>& opt) {
  opt.step = static_cast<int64_t>(bytes_u64(a.blobs.at(prefix + ".step"), prefix.c_str()));
  const auto& source = [&]() -> const std::map<std::string, Tensor<S>>& {
    if constexpr (std::is_same_v<S, float>)
      return a.f32;
    else
      return a.f64;
  }();
  const std::string mkey = prefix + ".m.", vkey = prefix + ".v.";
  for (const auto& [name, t] : source) {
    if (name.rfind(mkey, 0) == 0) opt.m[name.substr(mkey.size())] = t;
    if (name.rfind(vkey, 0) == 0) opt.v[name.substr(vkey.size())] = t;
  }
}

}  // namespace detail

template <typename S>
Archive trainer_to_archive(TrainerState<S>& st) {
  Archive a;
  const std::string cfg_text = config_to_text(st.cfg);
  a.blobs["config"] = std::vector<uint8_t>(cfg_text.begin(), cfg_text.end());

  for (const auto& [name, t] : st.gen.params()) detail::archive_put(a, name, *t);
  for (const auto& [name, t] : st.gen.buffers()) detail::archive_put(a, name, *t);
  for (const auto& [name, t] : st.disc.params()) detail::archive_put(a, name, *t);
  if (!st.fe.identity)
    for (size_t l = 0; l < st.fe.ws.size(); ++l) {
      detail::archive_put(a, "fe.w" + std::to_string(l + 1), st.fe.ws[l]);
      detail::archive_put(a, "fe.b" + std::to_string(l + 1), st.fe.bs[l]);
    }
  detail::archive_put_adam(a, "opt_g", st.opt_g);
  detail::archive_put_adam(a, "opt_d", st.opt_d);
  a.rng = st.rng.serialize();
  a.step = st.step;
  return a;
}

template <typename S>
TrainerState<S> trainer_from_archive(const Archive& a) {
  auto cfg_it = a.blobs.find("config");
  MDE_CHECK(cfg_it != a.blobs.end(), ParseError, "checkpoint is missing its config snapshot");
  const TrainConfig cfg =
      config_from_text(std::string(cfg_it->second.begin(), cfg_it->second.end()));

  TrainerState<S> st = init_trainer<S>(cfg);
  for (auto& [name, t] : st.gen.params()) *t = detail::archive_get<S>(a, name);
  for (auto& [name, t] : st.gen.buffers()) *t = detail::archive_get<S>(a, name);
  for (auto& [name, t] : st.disc.params()) *t = detail::archive_get<S>(a, name);
  if (!st.fe.identity)
    for (size_t l = 0; l < st.fe.ws.size(); ++l) {
      st.fe.ws[l] = detail::archive_get<S>(a, "fe.w" + std::to_string(l + 1));
      st.fe.bs[l] = detail::archive_get<S>(a, "fe.b" + std::to_string(l + 1));
    }
  detail::archive_get_adam(a, "opt_g", st.opt_g);
  detail::archive_get_adam(a, "opt_d", st.opt_d);
  st.rng = Rng::deserialize(a.rng);
  st.step = a.step;
  st.epoch = -1;  // derived state rebuilt on the next step
  return st;
}

template <typename S>
void save_trainer(TrainerState<S>& st, const std::string& path) {
  save_archive(trainer_to_archive(st), path);
}

template <typename S>
TrainerState<S> load_trainer(const std::string& path) {
  return trainer_from_archive<S>(load_archive(path));
}

// Loads feature-extractor weights from a tensor archive holding fe.w1/fe.b1…
// records, substituting for the fixed random stack.
template <typename S>
FeatureExtractor<S> load_feature_extractor(const std::string& path) {
  const Archive a = load_archive(path);
  FeatureExtractor<S> fe;
  for (size_t l = 1;; ++l) {
    const std::string wname = "fe.w" + std::to_string(l);
    const auto& source = [&]() -> const std::map<std::string, Tensor<S>>& {
      if constexpr (std::is_same_v<S, float>)
        return a.f32;
      else
        return a.f64;
    }();
    if (source.find(wname) == source.end()) break;
    fe.ws.push_back(detail::archive_get<S>(a, wname));
    fe.bs.push_back(detail::archive_get<S>(a, "fe.b" + std::to_string(l)));
  }
  MDE_CHECK(!fe.ws.empty(), ParseError, "feature-weight archive '", path,
            "' holds no fe.w1/fe.b1... records");
  return fe;
}

}  // namespace mde
