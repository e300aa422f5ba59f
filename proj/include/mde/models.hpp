#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mde/common.hpp"
#include "mde/ops.hpp"
#include "mde/rng.hpp"
#include "mde/tape.hpp"
#include "mde/tensor.hpp"

namespace mde {

// Shared architecture knobs. The defaults are the desk-scale configuration;
// width/height must be divisible by 2^depth so strided halving is exact.
struct ModelConfig {
  int64_t width = 32;
  int64_t height = 32;
  int64_t base_width = 32;
  int depth = 3;
  int64_t bottleneck = 256;
  double leaky_alpha = 0.2;

  void validate() const {
    MDE_CHECK(width >= 1 && height >= 1, ConfigError, "model config: empty input size");
    MDE_CHECK(depth >= 1, ConfigError, "model config: depth must be >= 1, got ", depth);
    MDE_CHECK(base_width >= 2, ConfigError, "model config: base width must be >= 2");
    MDE_CHECK(bottleneck >= 1, ConfigError, "model config: bottleneck width must be >= 1");
    const int64_t div = int64_t(1) << depth;
    MDE_CHECK(width % div == 0 && height % div == 0, ConfigError, "model config: ", width, "x",
              height, " not divisible by 2^depth = ", div);
    MDE_CHECK(leaky_alpha > 0.0 && leaky_alpha < 1.0, ConfigError,
              "model config: leaky slope must lie in (0,1)");
  }

  int64_t enc_channels(int level) const {  // level 1..depth
    return base_width << (level - 1);
  }
  int64_t bottom_h() const { return height >> depth; }
  int64_t bottom_w() const { return width >> depth; }
};

namespace detail {

template <typename S>
Tensor<S> he_normal(Rng& rng, Shape shape, int64_t fan_in) {
  auto t = Tensor<S>::zeros(std::move(shape));
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<S>(rng.normal(0.0, stddev));
  return t;
}

}  // namespace detail

// One conv (or transposed conv) with optional batch-norm state.
template <typename S>
struct ConvBlock {
  Tensor<S> w, b;
  bool has_bn = false;
  Tensor<S> bn_g, bn_b;    // trainable scale/shift
  Tensor<S> bn_rm, bn_rv;  // running stats (buffers, not trained)

  void init_bn(int64_t channels) {
    has_bn = true;
    bn_g = Tensor<S>::full({channels}, S(1));
    bn_b = Tensor<S>::zeros({channels});
    bn_rm = Tensor<S>::zeros({channels});
    bn_rv = Tensor<S>::full({channels}, S(1));
  }
};

template <typename S>
using ParamRefs = std::vector<std::pair<std::string, Tensor<S>*>>;

// Encoder-decoder completion network with skip concatenation at every
// resolution (including the raw input at full resolution) and a sigmoid
// output head.
template <typename S>
struct Generator {
  ModelConfig cfg;
  std::vector<ConvBlock<S>> enc;  // cfg.depth strided conv blocks
  Tensor<S> fc_in_w, fc_in_b;     // flatten -> bottleneck
  Tensor<S> fc_out_w, fc_out_b;   // bottleneck -> flatten
  std::vector<ConvBlock<S>> dec;  // cfg.depth transposed conv blocks
  Tensor<S> out_w, out_b;         // final stride-1 conv to 3 channels

  ParamRefs<S> params() {
    ParamRefs<S> out;
    for (size_t i = 0; i < enc.size(); ++i) {
      const std::string p = "g.enc" + std::to_string(i + 1) + ".";
      out.push_back({p + "w", &enc[i].w});
      out.push_back({p + "b", &enc[i].b});
      out.push_back({p + "bn.g", &enc[i].bn_g});
      out.push_back({p + "bn.b", &enc[i].bn_b});
    }
    out.push_back({"g.fc_in.w", &fc_in_w});
    out.push_back({"g.fc_in.b", &fc_in_b});
    out.push_back({"g.fc_out.w", &fc_out_w});
    out.push_back({"g.fc_out.b", &fc_out_b});
    for (size_t i = 0; i < dec.size(); ++i) {
      const std::string p = "g.dec" + std::to_string(i + 1) + ".";
      out.push_back({p + "w", &dec[i].w});
      out.push_back({p + "b", &dec[i].b});
      out.push_back({p + "bn.g", &dec[i].bn_g});
      out.push_back({p + "bn.b", &dec[i].bn_b});
    }
    out.push_back({"g.out.w", &out_w});
    out.push_back({"g.out.b", &out_b});
    return out;
  }

  ParamRefs<S> buffers() {
    ParamRefs<S> out;
    for (size_t i = 0; i < enc.size(); ++i) {
      const std::string p = "g.enc" + std::to_string(i + 1) + ".";
      out.push_back({p + "bn.rm", &enc[i].bn_rm});
      out.push_back({p + "bn.rv", &enc[i].bn_rv});
    }
    for (size_t i = 0; i < dec.size(); ++i) {
      const std::string p = "g.dec" + std::to_string(i + 1) + ".";
      out.push_back({p + "bn.rm", &dec[i].bn_rm});
      out.push_back({p + "bn.rv", &dec[i].bn_rv});
    }
    return out;
  }
};

template <typename S>
Generator<S> build_generator(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  Generator<S> g;
  g.cfg = cfg;

  int64_t in_ch = 3;
  for (int level = 1; level <= cfg.depth; ++level) {
    const int64_t out_ch = cfg.enc_channels(level);
    ConvBlock<S> blk;
    blk.w = detail::he_normal<S>(rng, {out_ch, in_ch, 3, 3}, in_ch * 9);
    blk.b = Tensor<S>::zeros({out_ch});
    blk.init_bn(out_ch);
    g.enc.push_back(std::move(blk));
    in_ch = out_ch;
  }

  const int64_t flat = cfg.enc_channels(cfg.depth) * cfg.bottom_h() * cfg.bottom_w();
  g.fc_in_w = detail::he_normal<S>(rng, {flat, cfg.bottleneck}, flat);
  g.fc_in_b = Tensor<S>::zeros({cfg.bottleneck});
  g.fc_out_w = detail::he_normal<S>(rng, {cfg.bottleneck, flat}, cfg.bottleneck);
  g.fc_out_b = Tensor<S>::zeros({flat});

  // decoder level ℓ consumes concat(up-path, encoder level ℓ) and upsamples
  for (int level = cfg.depth; level >= 1; --level) {
    const int64_t cat_ch = cfg.enc_channels(level) * 2;
    const int64_t out_ch = level >= 2 ? cfg.enc_channels(level - 1) : cfg.base_width;
    ConvBlock<S> blk;
    blk.w = detail::he_normal<S>(rng, {cat_ch, out_ch, 3, 3}, cat_ch * 9);
    blk.b = Tensor<S>::zeros({out_ch});
    blk.init_bn(out_ch);
    g.dec.push_back(std::move(blk));
  }

  g.out_w = detail::he_normal<S>(rng, {3, cfg.base_width + 3, 3, 3}, (cfg.base_width + 3) * 9);
  g.out_b = Tensor<S>::zeros({3});
  return g;
}

// How a network's tensors enter a tape: as trainable named parameters or as
// frozen constants (gradients still flow through the ops to their inputs).
enum class Bind { Trainable, Frozen };

namespace detail {

template <typename S>
Var bind(Tape<S>& t, Bind mode, const std::string& name, Tensor<S>& v) {
  return mode == Bind::Trainable ? t.param(name, v) : t.constant(v);
}

}  // namespace detail

// Runs the completion network. `train` selects batch-statistics normalization;
// `update_stats` additionally advances the running BN buffers (requires
// train). Returns a [N,3,H,W] tensor with every value in (0,1).
template <typename S>
Var generator_forward(Tape<S>& t, Generator<S>& g, Var input, bool train, bool update_stats,
                      Bind mode = Bind::Trainable) {
  const Tensor<S>& vx = t.value(input);
  MDE_CHECK(vx.ndim() == 4 && vx.dim(1) == 3, DimensionError,
            "generator_forward expects [N,3,H,W], got ", shape_str(vx.shape));
  MDE_CHECK(vx.dim(2) == g.cfg.height && vx.dim(3) == g.cfg.width, DimensionError,
            "generator_forward: input ", shape_str(vx.shape), " does not match configured ",
            g.cfg.height, "x", g.cfg.width);
  MDE_CHECK(train || !update_stats, ContractError,
            "generator_forward: running stats can only update in training mode");
  const int64_t N = vx.dim(0);

  std::vector<Var> skips;  // skips[ℓ] = features entering encoder level ℓ+1
  skips.push_back(input);
  Var h = input;
  for (int level = 1; level <= g.cfg.depth; ++level) {
    ConvBlock<S>& blk = g.enc[static_cast<size_t>(level - 1)];
    const std::string p = "g.enc" + std::to_string(level) + ".";
    h = conv2d(t, h, detail::bind(t, mode, p + "w", blk.w), detail::bind(t, mode, p + "b", blk.b),
               2, 1);
    h = batchnorm2d(t, h, detail::bind(t, mode, p + "bn.g", blk.bn_g),
                    detail::bind(t, mode, p + "bn.b", blk.bn_b), blk.bn_rm, blk.bn_rv, train,
                    update_stats);
    h = relu(t, h);
    skips.push_back(h);
  }

  const int64_t flat = g.cfg.enc_channels(g.cfg.depth) * g.cfg.bottom_h() * g.cfg.bottom_w();
  Var z = reshape(t, h, {N, flat});
  z = fully_connected(t, z, detail::bind(t, mode, "g.fc_in.w", g.fc_in_w),
                      detail::bind(t, mode, "g.fc_in.b", g.fc_in_b));
  z = relu(t, z);
  z = fully_connected(t, z, detail::bind(t, mode, "g.fc_out.w", g.fc_out_w),
                      detail::bind(t, mode, "g.fc_out.b", g.fc_out_b));
  z = relu(t, z);
  h = reshape(t, z, {N, g.cfg.enc_channels(g.cfg.depth), g.cfg.bottom_h(), g.cfg.bottom_w()});

  for (int level = g.cfg.depth; level >= 1; --level) {
    ConvBlock<S>& blk = g.dec[static_cast<size_t>(g.cfg.depth - level)];
    const std::string p = "g.dec" + std::to_string(g.cfg.depth - level + 1) + ".";
    h = concat_channels(t, h, skips[static_cast<size_t>(level)]);
    h = conv2d_transpose(t, h, detail::bind(t, mode, p + "w", blk.w),
                         detail::bind(t, mode, p + "b", blk.b), 2, 1, 1);
    h = batchnorm2d(t, h, detail::bind(t, mode, p + "bn.g", blk.bn_g),
                    detail::bind(t, mode, p + "bn.b", blk.bn_b), blk.bn_rm, blk.bn_rv, train,
                    update_stats);
    h = relu(t, h);
  }

  h = concat_channels(t, h, skips[0]);
  h = conv2d(t, h, detail::bind(t, mode, "g.out.w", g.out_w),
             detail::bind(t, mode, "g.out.b", g.out_b), 1, 1);
  return sigmoid(t, h);
}

// Appends two coordinate ramp channels normalized to [0,1]: channel 3 varies
// with x (constant along y), channel 4 varies with y.
template <typename S>
Var add_coord_channels(Tape<S>& t, Var image) {
  const Tensor<S>& vx = t.value(image);
  MDE_CHECK(vx.ndim() == 4 && vx.dim(1) == 3, DimensionError,
            "add_coord_channels expects [N,3,H,W], got ", shape_str(vx.shape));
  const int64_t N = vx.dim(0), H = vx.dim(2), W = vx.dim(3);
  auto coords = Tensor<S>::zeros({N, 2, H, W});
  const double dx = W > 1 ? 1.0 / static_cast<double>(W - 1) : 0.0;
  const double dy = H > 1 ? 1.0 / static_cast<double>(H - 1) : 0.0;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t i = 0; i < H; ++i)
      for (int64_t j = 0; j < W; ++j) {
        coords.at4(n, 0, i, j) = static_cast<S>(j * dx);
        coords.at4(n, 1, i, j) = static_cast<S>(i * dy);
      }
  return concat_channels(t, image, t.constant(std::move(coords)));
}

// Critic: strided leaky-ReLU conv stack, global average pooling, then a
// sigmoid realness scalar and a sigmoid 3x4 box-regression head. Half the
// generator's base width so it stays the smaller network.
template <typename S>
struct Discriminator {
  ModelConfig cfg;
  bool coord_channels = true;
  std::vector<ConvBlock<S>> blocks;
  Tensor<S> real_w, real_b;
  Tensor<S> box_w, box_b;

  int64_t channels(int level) const {  // level 1..depth
    return std::max<int64_t>(1, cfg.base_width / 2) << (level - 1);
  }

  ParamRefs<S> params() {
    ParamRefs<S> out;
    for (size_t i = 0; i < blocks.size(); ++i) {
      const std::string p = "d.conv" + std::to_string(i + 1) + ".";
      out.push_back({p + "w", &blocks[i].w});
      out.push_back({p + "b", &blocks[i].b});
    }
    out.push_back({"d.real.w", &real_w});
    out.push_back({"d.real.b", &real_b});
    out.push_back({"d.box.w", &box_w});
    out.push_back({"d.box.b", &box_b});
    return out;
  }

  ParamRefs<S> buffers() { return {}; }
};

template <typename S>
Discriminator<S> build_discriminator(const ModelConfig& cfg, Rng& rng,
                                     bool coord_channels = true) {
  cfg.validate();
  Discriminator<S> d;
  d.cfg = cfg;
  d.coord_channels = coord_channels;

  int64_t in_ch = coord_channels ? 5 : 3;
  for (int level = 1; level <= cfg.depth; ++level) {
    const int64_t out_ch = d.channels(level);
    ConvBlock<S> blk;
    blk.w = detail::he_normal<S>(rng, {out_ch, in_ch, 3, 3}, in_ch * 9);
    blk.b = Tensor<S>::zeros({out_ch});
    d.blocks.push_back(std::move(blk));
    in_ch = out_ch;
  }
  const int64_t top = d.channels(cfg.depth);
  d.real_w = detail::he_normal<S>(rng, {top, 1}, top);
  d.real_b = Tensor<S>::zeros({1});
  d.box_w = detail::he_normal<S>(rng, {top, 12}, top);
  d.box_b = Tensor<S>::zeros({12});
  return d;
}

struct DiscOutput {
  Var realness;  // [N] in (0,1)
  Var boxes;     // [N,3,4] in (0,1)
};

template <typename S>
DiscOutput discriminator_forward(Tape<S>& t, Discriminator<S>& d, Var image,
                                 Bind mode = Bind::Trainable) {
  const Tensor<S>& vx = t.value(image);
  MDE_CHECK(vx.ndim() == 4 && vx.dim(1) == 3, DimensionError,
            "discriminator_forward expects [N,3,H,W], got ", shape_str(vx.shape));
  MDE_CHECK(vx.dim(2) == d.cfg.height && vx.dim(3) == d.cfg.width, DimensionError,
            "discriminator_forward: input ", shape_str(vx.shape), " does not match configured ",
            d.cfg.height, "x", d.cfg.width);
  const int64_t N = vx.dim(0);

  Var h = d.coord_channels ? add_coord_channels(t, image) : image;
  for (int level = 1; level <= d.cfg.depth; ++level) {
    ConvBlock<S>& blk = d.blocks[static_cast<size_t>(level - 1)];
    const std::string p = "d.conv" + std::to_string(level) + ".";
    h = conv2d(t, h, detail::bind(t, mode, p + "w", blk.w), detail::bind(t, mode, p + "b", blk.b),
               2, 1);
    h = leaky_relu(t, h, d.cfg.leaky_alpha);
  }
  Var pooled = global_avg_pool(t, h);  // [N, top]

  Var realness = fully_connected(t, pooled, detail::bind(t, mode, "d.real.w", d.real_w),
                                 detail::bind(t, mode, "d.real.b", d.real_b));
  realness = reshape(t, sigmoid(t, realness), {N});

  Var boxes = fully_connected(t, pooled, detail::bind(t, mode, "d.box.w", d.box_w),
                              detail::bind(t, mode, "d.box.b", d.box_b));
  boxes = reshape(t, sigmoid(t, boxes), {N, 3, 4});
  return {realness, boxes};
}

template <typename S>
int64_t param_count(ParamRefs<S> refs) {
  int64_t n = 0;
  for (auto& [name, t] : refs) {
    (void)name;
    n += t->size();
  }
  return n;
}

}  // namespace mde
