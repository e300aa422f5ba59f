#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "mde/checkpoint.hpp"
#include "mde/common.hpp"
#include "mde/dataio.hpp"
#include "mde/gradsuite.hpp"
#include "mde/maskgen.hpp"
#include "mde/metrics.hpp"
#include "mde/models.hpp"
#include "mde/rng.hpp"
#include "mde/tensor.hpp"
#include "mde/trainer.hpp"

namespace mde::cli {

// Every command materializes one of these into <out_dir>/manifest.txt before
// doing real work: resolved configuration, seed, command, artifact paths, and
// the tool version are enough to reproduce the run.
struct RunManifest {
  std::string command;
  uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> fields;
  std::vector<std::pair<std::string, std::string>> artifacts;  // name -> path relative to out_dir
  std::string config_text;  // resolved key = value block, all defaults materialized

  std::string to_text() const {
    std::string s;
    s += "command = " + command + "\n";
    s += "tool_version = " + std::string(kVersion) + "\n";
    s += "seed = " + std::to_string(seed) + "\n";
    for (const auto& [k, v] : fields) s += k + " = " + v + "\n";
    for (const auto& [k, v] : artifacts) s += "artifact." + k + " = " + v + "\n";
    std::istringstream cfg(config_text);
    std::string line;
    while (std::getline(cfg, line)) {
      if (line.empty() || line[0] == '#') continue;
      s += "config." + line + "\n";
    }
    return s;
  }
};

namespace detail {

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  MDE_CHECK(f.good(), IoError, "cannot open '", path, "' for writing");
  f << text;
  f.flush();
  MDE_CHECK(f.good(), IoError, "short write to '", path, "'");
}

inline std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

}  // namespace detail

inline void write_run_manifest(const RunManifest& m, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  detail::write_text_file(detail::join_path(out_dir, "manifest.txt"), m.to_text());
}

// ---- dataset plumbing ----

// Dataset specs:
//   synthetic:<stripes|blobs|gradients>:<n>:<size>[:<seed>]
//   idx:<images_path>[:<labels_path>]
//   manifest:<path>       (one PNG path per line)
inline ImageDataset resolve_dataset(const std::string& spec, uint64_t default_seed) {
  const auto split = [](const std::string& s) {
    std::vector<std::string> parts;
    size_t b = 0;
    while (true) {
      const size_t e = s.find(':', b);
      parts.push_back(s.substr(b, e == std::string::npos ? e : e - b));
      if (e == std::string::npos) return parts;
      b = e + 1;
    }
  };
  const std::vector<std::string> parts = split(spec);
  MDE_CHECK(!parts.empty() && !parts[0].empty(), ParameterError, "empty dataset spec");
  const std::string& kind = parts[0];

  if (kind == "synthetic") {
    MDE_CHECK(parts.size() >= 4 && parts.size() <= 5, ParameterError,
              "synthetic spec is synthetic:<kind>:<n>:<size>[:<seed>], got '", spec, "'");
    const SyntheticKind sk = parse_synthetic_kind(parts[1]);
    const int64_t n = std::stoll(parts[2]);
    const int64_t size = std::stoll(parts[3]);
    const uint64_t seed = parts.size() == 5 ? std::stoull(parts[4]) : default_seed;
    return synthetic_dataset(sk, n, size, seed);
  }
  if (kind == "idx") {
    MDE_CHECK(parts.size() == 2 || parts.size() == 3, ParameterError,
              "idx spec is idx:<images>[:<labels>], got '", spec, "'");
    return load_idx(parts[1], parts.size() == 3 ? parts[2] : "");
  }
  if (kind == "manifest") {
    MDE_CHECK(parts.size() == 2, ParameterError, "manifest spec is manifest:<path>, got '", spec,
              "'");
    return load_manifest(parts[1]);
  }
  MDE_THROW(ParameterError, "unknown dataset spec '", spec,
            "' (expected synthetic:..., idx:..., or manifest:...)");
}

inline bool is_idx_spec(const std::string& spec) { return spec.rfind("idx:", 0) == 0; }

// Returns the dataset's images at exactly [3,H,W], resizing when permitted.
inline std::vector<Tensor<float>> fit_images(const ImageDataset& ds, int64_t H, int64_t W,
                                             bool allow_resize) {
  ds.validate();
  if (ds.height == H && ds.width == W) return ds.images;
  MDE_CHECK(allow_resize, ConfigError, "dataset '", ds.source, "' is ", ds.height, "x", ds.width,
            " but the model expects ", H, "x", W, "; pass --resize to rescale, or supply matching "
            "images");
  std::vector<Tensor<float>> out;
  out.reserve(ds.images.size());
  for (const auto& img : ds.images) out.push_back(resize(img, H, W, ResizeMode::Bilinear));
  return out;
}

// ---- completion plumbing ----

namespace detail {

inline Tensor<float> elementwise_mul(const Tensor<float>& a, const Tensor<float>& b) {
  MDE_CHECK(a.same_shape(b), DimensionError, "elementwise_mul shape mismatch");
  Tensor<float> out = a;
  for (int64_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

inline Tensor<float> as_batch1(const Tensor<float>& img) {
  Tensor<float> out = img;
  return Tensor<float>({1, img.dim(0), img.dim(1), img.dim(2)}, std::move(out.data));
}

inline Tensor<float> from_batch1(const Tensor<float>& batch) {
  Tensor<float> out = batch;
  return Tensor<float>({batch.dim(1), batch.dim(2), batch.dim(3)}, std::move(out.data));
}

}  // namespace detail

// Evaluation-mode completion: the network runs with frozen weights and
// running batch-norm statistics.
inline Tensor<float> complete_batch(Generator<float>& gen, const Tensor<float>& masked_batch) {
  Tape<float> t;
  Var x = t.constant(masked_batch);
  Var y = generator_forward(t, gen, x, /*train=*/false, /*update_stats=*/false, Bind::Frozen);
  return t.value(y);
}

inline Tensor<float> complete_one(Generator<float>& gen, const Tensor<float>& masked_image) {
  return detail::from_batch1(complete_batch(gen, detail::as_batch1(masked_image)));
}

namespace detail {

// [1,3,H,W] mask plane -> [3,H,W]
inline Tensor<float> mask_as_image(const Tensor<float>& mask) {
  MDE_CHECK(mask.ndim() == 4 && mask.dim(0) == 1, DimensionError,
            "expected a single-image mask, got ", shape_str(mask.shape));
  Tensor<float> m = mask;
  return Tensor<float>({mask.dim(1), mask.dim(2), mask.dim(3)}, std::move(m.data));
}

struct CompletionMetrics {
  double psnr_full = 0.0;
  double psnr_masked = 0.0;  // over dropped pixels; the cap when nothing was dropped
  double ssim = 0.0;         // NaN when the image is smaller than the SSIM window
};

inline CompletionMetrics score_completion(const Tensor<float>& completed,
                                          const Tensor<float>& original,
                                          const Tensor<float>& mask) {
  CompletionMetrics out;
  out.psnr_full = psnr(completed, original);
  Tensor<float> dropped = mask;
  int64_t n_dropped = 0;
  for (int64_t i = 0; i < dropped.size(); ++i) {
    dropped[i] = 1.0f - dropped[i];
    if (dropped[i] != 0.0f) ++n_dropped;
  }
  out.psnr_masked = n_dropped > 0 ? psnr(completed, original, &dropped) : out.psnr_full;
  out.ssim = (original.dim(1) >= 11 && original.dim(2) >= 11)
                 ? ssim(completed, original)
                 : std::numeric_limits<double>::quiet_NaN();
  return out;
}

inline std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace detail

// input | masked | completed | ground truth, one row per image
inline Tensor<float> completion_grid(Generator<float>& gen, const std::vector<Tensor<float>>& images,
                                     Task task, double ratio, int col_k, Rng& rng) {
  MDE_CHECK(!images.empty(), ParameterError, "completion_grid: no images");
  std::vector<Tensor<float>> cells;
  for (const auto& img : images) {
    const MaskBatch mb = make_mask(task, rng, ratio, img.dim(2), img.dim(1), 1, col_k);
    const Tensor<float> mask = detail::mask_as_image(mb.mask);
    const Tensor<float> masked = detail::elementwise_mul(img, mask);
    cells.push_back(img);
    cells.push_back(masked);
    cells.push_back(complete_one(gen, masked));
    cells.push_back(img);
  }
  return image_grid(cells, 4);
}

// ---- train ----

struct TrainOptions {
  std::string config_path;                       // optional flat key = value file
  std::map<std::string, std::string> overrides;  // flag values, applied over the file
  std::string data;                              // empty = the default synthetic set (fresh runs)
  std::string out_dir = "mde-out/train";
  std::string resume;    // checkpoint to continue from; excludes config/overrides
  int64_t grid_images = 4;
};

inline TrainConfig resolve_train_config(const std::string& config_path,
                                        std::map<std::string, std::string> overrides) {
  TrainConfig cfg;
  if (!config_path.empty()) cfg = config_from_text(mde::detail::read_file_bytes(config_path));
  apply_config_kv(cfg, overrides);
  if (!overrides.empty())
    MDE_THROW(ConfigError, "unknown configuration key '", overrides.begin()->first, "'");
  cfg.validate();
  return cfg;
}

inline int cmd_train(const TrainOptions& opts, std::ostream& out) {
  MDE_CHECK(opts.grid_images >= 1, ConfigError, "grid_images must be >= 1");
  TrainerState<float> st = [&] {
    if (!opts.resume.empty()) {
      MDE_CHECK(opts.config_path.empty() && opts.overrides.empty(), ConfigError,
                "--resume continues with the checkpoint's configuration; drop --config and "
                "configuration flags");
      MDE_CHECK(!opts.data.empty(), ConfigError,
                "--resume needs the original --data spec; a resumed run only matches the "
                "uninterrupted one when it sees the same dataset");
      return load_trainer<float>(opts.resume);
    }
    return init_trainer<float>(resolve_train_config(opts.config_path, opts.overrides));
  }();
  const TrainConfig& cfg = st.cfg;
  const std::string data_spec = opts.data.empty() ? std::string("synthetic:blobs:64:32") : opts.data;
  if (is_idx_spec(data_spec))
    MDE_CHECK(cfg.task == Task::RE, ConfigError,
              "the bundled IDX recipe trains with task re only; got task ",
              task_name(cfg.task, cfg.col_k));

  RunManifest m;
  m.command = "train";
  m.seed = cfg.seed;
  m.fields = {{"data", data_spec}};
  if (!opts.resume.empty()) m.fields.push_back({"resume", opts.resume});
  m.artifacts = {{"config", "config.txt"},
                 {"log", "log.csv"},
                 {"checkpoint", "ckpt_final.mde"},
                 {"samples", "samples_final.png"}};
  m.config_text = config_to_text(cfg);
  write_run_manifest(m, opts.out_dir);
  detail::write_text_file(detail::join_path(opts.out_dir, "config.txt"), m.config_text);

  out << "# effective configuration\n" << m.config_text;

  const ImageDataset ds = resolve_dataset(data_spec, cfg.seed);
  const std::vector<Tensor<float>> images =
      fit_images(ds, cfg.model.height, cfg.model.width, /*allow_resize=*/true);
  const std::vector<Tensor<float>> grid_src(
      images.begin(),
      images.begin() + std::min<int64_t>(opts.grid_images, static_cast<int64_t>(images.size())));

  const std::string log_path = detail::join_path(opts.out_dir, "log.csv");
  std::ofstream log;
  if (st.step == 0) {
    log.open(log_path, std::ios::trunc);
    log << csv_header() << "\n";
  } else {
    log.open(log_path, std::ios::app);  // resumed run appends to its log
  }
  MDE_CHECK(log.good(), IoError, "cannot open '", log_path, "' for writing");

  auto emit_snapshots = [&](const std::string& tag) {
    save_trainer(st, detail::join_path(opts.out_dir, "ckpt_" + tag + ".mde"));
    Rng grid_rng(mde::detail::derive_seed(cfg.seed, 0x9000000 + st.step));
    write_png_grid({completion_grid(st.gen, grid_src, cfg.task, cfg.ratio, cfg.col_k, grid_rng)},
                   1, detail::join_path(opts.out_dir, "samples_" + tag + ".png"));
  };

  while (st.step < static_cast<uint64_t>(cfg.total_updates)) {
    const StepStats stats = train_step(st, images);
    log << csv_row(stats) << "\n";
    MDE_CHECK(log.good(), IoError, "failed writing '", log_path, "'");
    if (cfg.checkpoint_interval > 0 &&
        st.step % static_cast<uint64_t>(cfg.checkpoint_interval) == 0 &&
        st.step < static_cast<uint64_t>(cfg.total_updates))
      emit_snapshots(std::to_string(st.step));
  }
  log.flush();
  emit_snapshots("final");
  out << "trained " << st.step << " steps; artifacts in " << opts.out_dir << "\n";
  return 0;
}

// ---- complete ----

struct CompleteOptions {
  std::string checkpoint;
  std::string data;
  std::string out_dir = "mde-out/complete";
  int64_t samples = 1;
  uint64_t seed = 1;
  std::string task;     // empty: the checkpoint's training task
  double ratio = -1.0;  // negative: the checkpoint's training ratio
  bool allow_resize = false;
  int64_t limit = 0;  // 0: all images
};

inline int cmd_complete(const CompleteOptions& opts, std::ostream& out) {
  MDE_CHECK(opts.samples >= 1, ConfigError, "samples must be >= 1");
  MDE_CHECK(!opts.checkpoint.empty(), ConfigError, "a checkpoint is required");
  TrainerState<float> st = load_trainer<float>(opts.checkpoint);
  Task task = st.cfg.task;
  int col_k = st.cfg.col_k;
  if (!opts.task.empty()) std::tie(task, col_k) = parse_task(opts.task);
  const double ratio = opts.ratio < 0.0 ? st.cfg.ratio : opts.ratio;
  mde::detail::check_ratio(ratio, st.cfg.model.width, st.cfg.model.height);

  RunManifest m;
  m.command = "complete";
  m.seed = opts.seed;
  m.fields = {{"checkpoint", opts.checkpoint},
              {"data", opts.data},
              {"task", task_name(task, col_k)},
              {"ratio", detail::fmt_g(ratio)},
              {"samples", std::to_string(opts.samples)}};
  m.artifacts = {{"metrics", "metrics.csv"}, {"completions", "completions.png"}};
  m.config_text = config_to_text(st.cfg);
  write_run_manifest(m, opts.out_dir);

  const ImageDataset ds = resolve_dataset(opts.data, opts.seed);
  std::vector<Tensor<float>> images =
      fit_images(ds, st.cfg.model.height, st.cfg.model.width, opts.allow_resize);
  if (opts.limit > 0 && static_cast<int64_t>(images.size()) > opts.limit)
    images.resize(static_cast<size_t>(opts.limit));

  Rng rng(opts.seed);
  std::string csv = "image,sample,psnr_full,psnr_masked,ssim\n";
  std::vector<Tensor<float>> cells;
  const int64_t H = st.cfg.model.height, W = st.cfg.model.width;
  for (size_t i = 0; i < images.size(); ++i) {
    cells.push_back(images[i]);
    for (int64_t j = 0; j < opts.samples; ++j) {
      const MaskBatch mb = make_mask(task, rng, ratio, W, H, 1, col_k);
      const Tensor<float> mask = detail::mask_as_image(mb.mask);
      const Tensor<float> masked = detail::elementwise_mul(images[i], mask);
      const Tensor<float> completed = complete_one(st.gen, masked);
      const auto sc = detail::score_completion(completed, images[i], mask);
      csv += std::to_string(i) + "," + std::to_string(j) + "," + detail::fmt_g(sc.psnr_full) +
             "," + detail::fmt_g(sc.psnr_masked) + "," + detail::fmt_g(sc.ssim) + "\n";
      cells.push_back(masked);
      cells.push_back(completed);
    }
  }
  detail::write_text_file(detail::join_path(opts.out_dir, "metrics.csv"), csv);
  write_png_grid(cells, 1 + 2 * opts.samples,
                 detail::join_path(opts.out_dir, "completions.png"));
  out << "completed " << images.size() << " images x " << opts.samples << " samples; artifacts in "
      << opts.out_dir << "\n";
  return 0;
}

// ---- resample ----

struct ResampleOptions {
  std::string checkpoint;
  std::string data;
  std::string out_dir = "mde-out/resample";
  int64_t steps = 10;
  uint64_t seed = 1;
  int64_t index = 0;
  std::string task;
  double ratio = -1.0;
  bool allow_resize = false;
};

inline int cmd_resample(const ResampleOptions& opts, std::ostream& out) {
  MDE_CHECK(opts.steps >= 1, ConfigError, "steps must be >= 1");
  MDE_CHECK(!opts.checkpoint.empty(), ConfigError, "a checkpoint is required");
  TrainerState<float> st = load_trainer<float>(opts.checkpoint);
  Task task = st.cfg.task;
  int col_k = st.cfg.col_k;
  if (!opts.task.empty()) std::tie(task, col_k) = parse_task(opts.task);
  const double ratio = opts.ratio < 0.0 ? st.cfg.ratio : opts.ratio;
  mde::detail::check_ratio(ratio, st.cfg.model.width, st.cfg.model.height);

  RunManifest m;
  m.command = "resample";
  m.seed = opts.seed;
  m.fields = {{"checkpoint", opts.checkpoint},
              {"data", opts.data},
              {"task", task_name(task, col_k)},
              {"ratio", detail::fmt_g(ratio)},
              {"steps", std::to_string(opts.steps)},
              {"index", std::to_string(opts.index)}};
  m.artifacts = {{"sequence", "resample.png"}};
  m.config_text = config_to_text(st.cfg);
  write_run_manifest(m, opts.out_dir);

  const ImageDataset ds = resolve_dataset(opts.data, opts.seed);
  const std::vector<Tensor<float>> images =
      fit_images(ds, st.cfg.model.height, st.cfg.model.width, opts.allow_resize);
  MDE_CHECK(opts.index >= 0 && opts.index < static_cast<int64_t>(images.size()), ParameterError,
            "image index ", opts.index, " outside dataset of ", images.size());

  Rng rng(opts.seed);
  const int64_t H = st.cfg.model.height, W = st.cfg.model.width;
  std::vector<Tensor<float>> seq{images[static_cast<size_t>(opts.index)]};
  for (int64_t k = 0; k < opts.steps; ++k) {
    const MaskBatch mb = make_mask(task, rng, ratio, W, H, 1, col_k);
    const Tensor<float> masked =
        detail::elementwise_mul(seq.back(), detail::mask_as_image(mb.mask));
    Tensor<float> next = complete_one(st.gen, masked);
    for (int64_t i = 0; i < next.size(); ++i)
      MDE_CHECK(next[i] >= 0.0f && next[i] <= 1.0f, NumericError,
                "resample step ", k + 1, " left the unit interval");
    seq.push_back(std::move(next));
  }
  write_png_grid(seq, opts.steps + 1, detail::join_path(opts.out_dir, "resample.png"));
  out << "resampled " << opts.steps << " times; artifacts in " << opts.out_dir << "\n";
  return 0;
}

// ---- eval ----

struct EvalOptions {
  std::vector<std::string> checkpoints;
  std::string data;
  std::string out_dir = "mde-out/eval";
  std::string protocol = "occlusions";  // or task-matrix
  double ratio = 0.25;
  uint64_t seed = 1;
  int64_t limit = 64;
  bool allow_resize = false;
};

namespace detail {

inline const std::vector<std::string>& occlusion_names() {
  static const std::vector<std::string> names{"right_half", "left_half",  "left_eye",
                                              "right_eye",  "both_eyes", "mouth"};
  return names;
}

struct EvalRow {
  std::string label;
  double psnr = 0.0;
  double ssim = 0.0;
};

inline std::string eval_table(const std::string& head, const std::vector<EvalRow>& rows) {
  size_t w = head.size();
  for (const auto& r : rows) w = std::max(w, r.label.size());
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-*s  %10s  %8s\n", static_cast<int>(w), head.c_str(), "pSNR",
                "SSIM");
  std::string s = buf;
  s += std::string(w + 22, '-') + "\n";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-*s  %10.3f  %8.4f\n", static_cast<int>(w), r.label.c_str(),
                  r.psnr, r.ssim);
    s += buf;
  }
  return s;
}

// mean completion quality of `gen` over the images with one fixed mask
// builder; the mask comes per image from `next_mask`
template <typename NextMask>
EvalRow eval_protocol_row(Generator<float>& gen, const std::vector<Tensor<float>>& images,
                          const std::string& label, NextMask&& next_mask) {
  double sum_psnr = 0.0, sum_ssim = 0.0;
  for (const auto& img : images) {
    const Tensor<float> mask = next_mask(img);
    const Tensor<float> completed = complete_one(gen, elementwise_mul(img, mask));
    sum_psnr += psnr(completed, img);
    sum_ssim += (img.dim(1) >= 11 && img.dim(2) >= 11)
                    ? ssim(completed, img)
                    : std::numeric_limits<double>::quiet_NaN();
  }
  const double n = static_cast<double>(images.size());
  return {label, sum_psnr / n, sum_ssim / n};
}

}  // namespace detail

inline int cmd_eval(const EvalOptions& opts, std::ostream& out) {
  MDE_CHECK(!opts.checkpoints.empty(), ConfigError, "at least one checkpoint is required");
  MDE_CHECK(opts.protocol == "occlusions" || opts.protocol == "task-matrix", ConfigError,
            "protocol must be occlusions or task-matrix, got '", opts.protocol, "'");
  MDE_CHECK(opts.limit >= 1, ConfigError, "limit must be >= 1");
  if (opts.protocol == "occlusions")
    MDE_CHECK(opts.checkpoints.size() == 1, ConfigError,
              "the occlusions protocol evaluates a single checkpoint");

  std::vector<TrainerState<float>> states;
  for (const auto& path : opts.checkpoints) states.push_back(load_trainer<float>(path));

  RunManifest m;
  m.command = "eval";
  m.seed = opts.seed;
  m.fields = {{"data", opts.data},
              {"protocol", opts.protocol},
              {"ratio", detail::fmt_g(opts.ratio)},
              {"limit", std::to_string(opts.limit)}};
  for (size_t i = 0; i < opts.checkpoints.size(); ++i)
    m.fields.push_back({"checkpoint" + std::to_string(i), opts.checkpoints[i]});
  m.artifacts = {{"report", "eval.csv"}, {"table", "eval.txt"}};
  m.config_text = config_to_text(states[0].cfg);
  write_run_manifest(m, opts.out_dir);

  const ImageDataset ds = resolve_dataset(opts.data, opts.seed);
  std::string csv, table;

  if (opts.protocol == "occlusions") {
    TrainerState<float>& st = states[0];
    std::vector<Tensor<float>> images =
        fit_images(ds, st.cfg.model.height, st.cfg.model.width, opts.allow_resize);
    if (static_cast<int64_t>(images.size()) > opts.limit)
      images.resize(static_cast<size_t>(opts.limit));
    std::vector<detail::EvalRow> rows;
    for (const std::string& name : detail::occlusion_names()) {
      const MaskBatch mb = occlusion_template(name, st.cfg.model.width, st.cfg.model.height);
      const Tensor<float> mask = detail::mask_as_image(mb.mask);
      rows.push_back(detail::eval_protocol_row(st.gen, images, name,
                                               [&mask](const Tensor<float>&) { return mask; }));
    }
    csv = "template,psnr,ssim\n";
    for (const auto& r : rows)
      csv += r.label + "," + detail::fmt_g(r.psnr) + "," + detail::fmt_g(r.ssim) + "\n";
    table = detail::eval_table("occlusion", rows);
  } else {
    const std::vector<std::string> test_tasks{"i", "ri", "col1", "re", "rec"};
    csv = "train_task,test_task,psnr,ssim\n";
    for (auto& st : states) {
      std::vector<Tensor<float>> images =
          fit_images(ds, st.cfg.model.height, st.cfg.model.width, opts.allow_resize);
      if (static_cast<int64_t>(images.size()) > opts.limit)
        images.resize(static_cast<size_t>(opts.limit));
      const std::string row_label = task_name(st.cfg.task, st.cfg.col_k);
      std::vector<detail::EvalRow> rows;
      for (size_t c = 0; c < test_tasks.size(); ++c) {
        auto [task, col_k] = parse_task(test_tasks[c]);
        // one mask stream per column: every model sees identical masks
        Rng rng(mde::detail::derive_seed(opts.seed, static_cast<uint64_t>(c)));
        auto next_mask = [&](const Tensor<float>& img) {
          return detail::mask_as_image(
              make_mask(task, rng, opts.ratio, img.dim(2), img.dim(1), 1, col_k).mask);
        };
        detail::EvalRow row =
            detail::eval_protocol_row(st.gen, images, test_tasks[c], next_mask);
        csv += row_label + "," + row.label + "," + detail::fmt_g(row.psnr) + "," +
               detail::fmt_g(row.ssim) + "\n";
        rows.push_back(std::move(row));
      }
      table += "trained on " + row_label + ":\n" + detail::eval_table("test task", rows) + "\n";
    }
  }

  detail::write_text_file(detail::join_path(opts.out_dir, "eval.csv"), csv);
  detail::write_text_file(detail::join_path(opts.out_dir, "eval.txt"), table);
  out << table;
  return 0;
}

// ---- mask-stats ----

struct MaskStatsOptions {
  std::string task = "rec";
  double ratio = 0.1;
  int64_t size = 96;
  int64_t n = 20000;
  uint64_t seed = 1;
  std::string out_dir = "mde-out/mask-stats";
};

// closed-form dropped/corrupted pixel fractions for each task family
inline std::pair<double, double> analytic_fractions(Task task, double S, int col_k) {
  switch (task) {
    case Task::I: return {S, S};
    case Task::RI: return {1.0 - S, 1.0 - S};
    case Task::RE: return {1.0 - S, 1.0 - S};
    case Task::REC: {
      const double d = (1.0 - S) * (1.0 - S) * (1.0 - S);
      return {d, 1.0 - S * S * S};
    }
    case Task::Col: return {0.0, static_cast<double>(3 - col_k) / 3.0};
  }
  MDE_THROW(ContractError, "unhandled task");
}

inline int cmd_mask_stats(const MaskStatsOptions& opts, std::ostream& out) {
  MDE_CHECK(opts.n >= 1, ConfigError, "n must be >= 1");
  MDE_CHECK(opts.size >= 2, ConfigError, "size must be >= 2");
  const auto [task, col_k] = parse_task(opts.task);

  RunManifest m;
  m.command = "mask-stats";
  m.seed = opts.seed;
  m.fields = {{"task", task_name(task, col_k)},
              {"ratio", detail::fmt_g(opts.ratio)},
              {"size", std::to_string(opts.size)},
              {"n", std::to_string(opts.n)}};
  m.artifacts = {{"report", "mask_stats.csv"}};
  write_run_manifest(m, opts.out_dir);

  Rng rng(opts.seed);
  double dropped = 0.0, corrupted = 0.0;
  int64_t done = 0;
  while (done < opts.n) {
    const int64_t batch = std::min<int64_t>(200, opts.n - done);
    const MaskBatch mb = make_mask(task, rng, opts.ratio, opts.size, opts.size, batch, col_k);
    const auto [d, c] = corruption_stats(mb);
    dropped += d * static_cast<double>(batch);
    corrupted += c * static_cast<double>(batch);
    done += batch;
  }
  dropped /= static_cast<double>(opts.n);
  corrupted /= static_cast<double>(opts.n);
  const auto [ad, ac] = analytic_fractions(task, opts.ratio, col_k);

  char buf[256];
  std::snprintf(buf, sizeof buf,
                "task %s (S=%g, %lldx%lld, n=%lld)\n"
                "             empirical    analytic\n"
                "dropped      %9.4f   %9.4f\n"
                "corrupted    %9.4f   %9.4f\n",
                task_name(task, col_k).c_str(), opts.ratio,
                static_cast<long long>(opts.size), static_cast<long long>(opts.size),
                static_cast<long long>(opts.n), dropped, ad, corrupted, ac);
  out << buf;

  std::string csv = "stat,empirical,analytic\n";
  csv += "dropped," + detail::fmt_g(dropped) + "," + detail::fmt_g(ad) + "\n";
  csv += "corrupted," + detail::fmt_g(corrupted) + "," + detail::fmt_g(ac) + "\n";
  detail::write_text_file(detail::join_path(opts.out_dir, "mask_stats.csv"), csv);
  return 0;
}

// ---- grad-check ----

struct GradCheckCmdOptions {
  std::string out_dir = "mde-out/grad-check";
};

inline int cmd_grad_check(const GradCheckCmdOptions& opts, std::ostream& out) {
  RunManifest m;
  m.command = "grad-check";
  m.artifacts = {{"report", "grad_check.txt"}};
  write_run_manifest(m, opts.out_dir);

  std::ostringstream report;
  const bool pass = run_grad_suite(standard_grad_suite(), report);
  detail::write_text_file(detail::join_path(opts.out_dir, "grad_check.txt"), report.str());
  out << report.str();
  return pass ? 0 : 3;  // 3: verification failure
}

// ---- shared exit-code policy ----
// 0 success, 1 usage/config error, 2 runtime failure, 3 verification failure.

template <typename Fn>
int run_guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const ParameterError& e) {
    err << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace mde::cli
