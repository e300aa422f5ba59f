#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "mde/common.hpp"
#include "mde/maskgen.hpp"
#include "mde/models.hpp"
#include "mde/ops.hpp"
#include "mde/tape.hpp"
#include "mde/tensor.hpp"

namespace mde {

// Scalar weights of the total generator objective, plus the per-level weights
// of the perceptual term.
struct LossWeights {
  double lambda_compl = 2e-5;
  double lambda_adv = 1e-2;
  double lambda_hns = 1e-2;
  std::vector<double> perceptual = {1.0, 0.5, 0.25, 0.125, 0.0625};

  void validate() const {
    MDE_CHECK(lambda_compl >= 0.0 && lambda_adv >= 0.0 && lambda_hns >= 0.0, ConfigError,
              "loss weights must be non-negative");
    MDE_CHECK(!perceptual.empty(), ConfigError, "perceptual weights must not be empty");
    double sum = 0.0;
    for (double l : perceptual) {
      MDE_CHECK(l >= 0.0, ConfigError, "perceptual weights must be non-negative");
      sum += l;
    }
    MDE_CHECK(sum > 0.0, ConfigError, "perceptual weights must not all be zero");
  }
};

namespace detail {

// probabilities are clamped before log so saturated sigmoids cannot produce
// infinities in 32-bit mode
constexpr double kLogEps = 1e-7;

template <typename S>
Var safe_log(Tape<S>& t, Var p) {
  return log_val(t, clamp(t, p, kLogEps, 1.0 - kLogEps));
}

}  // namespace detail

// -(1/N)·Σ[log d_real + log(1 - d_fake)]
template <typename S>
Var loss_disc_adv(Tape<S>& t, Var d_real, Var d_fake) {
  detail::require_same_shape(t, d_real, d_fake, "loss_disc_adv");
  Var real_term = mean(t, detail::safe_log(t, d_real));
  Var fake_term = mean(t, detail::safe_log(t, affine(t, d_fake, -1.0, 1.0)));
  return affine(t, add(t, real_term, fake_term), -1.0, 0.0);
}

// -(1/N)·Σ log d_fake, the non-saturating generator objective
template <typename S>
Var loss_gen_adv(Tape<S>& t, Var d_fake) {
  return affine(t, mean(t, detail::safe_log(t, d_fake)), -1.0, 0.0);
}

namespace detail {

template <typename S>
Var masked_sumsq(Tape<S>& t, Var gen, Var orig, Var mask, bool complement) {
  require_same_shape(t, gen, orig, "masked loss");
  require_same_shape(t, gen, mask, "masked loss");
  const int64_t N = t.value(gen).dim(0);
  Var d = sub(t, gen, orig);
  Var m = complement ? affine(t, mask, -1.0, 1.0) : mask;
  Var md = mul(t, m, d);
  return affine(t, sum(t, mul(t, md, md)), 1.0 / static_cast<double>(N), 0.0);
}

}  // namespace detail

// (1/N)·Σ‖(1-M)⊙(G-Z)‖²: error over the dropped region only
template <typename S>
Var loss_completion(Tape<S>& t, Var gen, Var orig, Var mask) {
  return detail::masked_sumsq(t, gen, orig, mask, true);
}

// (1/N)·Σ‖M⊙(G-Z)‖²: error over the visible region only
template <typename S>
Var loss_reconstruction(Tape<S>& t, Var gen, Var orig, Var mask) {
  return detail::masked_sumsq(t, gen, orig, mask, false);
}

// Fixed (non-trained) feature pyramid for the perceptual loss: a strided
// leaky-ReLU conv stack in the style of the critic, or the raw image itself
// in identity mode. Weights may come from a tensor archive instead of random
// initialization (see the checkpoint container).
template <typename S>
struct FeatureExtractor {
  bool identity = false;
  double leaky_alpha = 0.2;
  std::vector<Tensor<S>> ws;  // level ℓ: [C_ℓ, C_{ℓ-1}, 3, 3]
  std::vector<Tensor<S>> bs;

  int levels() const { return identity ? 1 : static_cast<int>(ws.size()); }

  static FeatureExtractor make_identity() {
    FeatureExtractor fe;
    fe.identity = true;
    return fe;
  }
};

template <typename S>
FeatureExtractor<S> build_feature_extractor(int levels, int64_t base_width, Rng& rng) {
  MDE_CHECK(levels >= 1, ParameterError, "feature extractor needs at least one level");
  MDE_CHECK(base_width >= 1, ParameterError, "feature extractor base width must be positive");
  FeatureExtractor<S> fe;
  int64_t in_ch = 3;
  for (int l = 1; l <= levels; ++l) {
    const int64_t out_ch = base_width << std::min(l - 1, 4);
    fe.ws.push_back(detail::he_normal<S>(rng, {out_ch, in_ch, 3, 3}, in_ch * 9));
    fe.bs.push_back(Tensor<S>::zeros({out_ch}));
    in_ch = out_ch;
  }
  return fe;
}

// Feature maps φ_1..φ_L of one image batch, coarsest last.
template <typename S>
std::vector<Var> extractor_features(Tape<S>& t, const FeatureExtractor<S>& fe, Var image) {
  if (fe.identity) return {image};
  std::vector<Var> feats;
  Var h = image;
  for (size_t l = 0; l < fe.ws.size(); ++l) {
    h = conv2d(t, h, t.constant(fe.ws[l]), t.constant(fe.bs[l]), 2, 1);
    h = leaky_relu(t, h, fe.leaky_alpha);
    feats.push_back(h);
  }
  return feats;
}

// (1/(N·Σλ))·Σ_ℓ λ_ℓ·‖φ_ℓ(G) - φ_ℓ(Z)‖²
template <typename S>
Var loss_perceptual(Tape<S>& t, Var gen, Var orig, const FeatureExtractor<S>& fe,
                    const std::vector<double>& lambdas) {
  detail::require_same_shape(t, gen, orig, "loss_perceptual");
  MDE_CHECK(static_cast<int>(lambdas.size()) == fe.levels(), ParameterError,
            "perceptual loss: ", lambdas.size(), " level weights but the extractor has ",
            fe.levels(), " levels");
  double lambda_sum = 0.0;
  for (double l : lambdas) lambda_sum += l;
  MDE_CHECK(lambda_sum > 0.0, ParameterError, "perceptual loss: level weights sum to zero");
  const int64_t N = t.value(gen).dim(0);

  auto fg = extractor_features(t, fe, gen);
  auto fz = extractor_features(t, fe, orig);
  Var total{};
  for (size_t l = 0; l < fg.size(); ++l) {
    Var d = sub(t, fg[l], fz[l]);
    Var term = affine(t, sum(t, mul(t, d, d)), lambdas[l], 0.0);
    total = l == 0 ? term : add(t, total, term);
  }
  return affine(t, total, 1.0 / (static_cast<double>(N) * lambda_sum), 0.0);
}

// ---- hide-and-seek ----

enum class HnsNorm { L1, L2 };

// Packs per-image channel boxes into a [N,3,4] tensor of normalized corner
// coordinates, the regression target of the critic's box head.
template <typename S>
Tensor<S> boxes_to_tensor(const std::vector<std::array<ChannelBox, 3>>& boxes, int64_t W,
                          int64_t H) {
  MDE_CHECK(!boxes.empty(), ParameterError, "boxes_to_tensor: empty batch");
  const int64_t N = static_cast<int64_t>(boxes.size());
  auto out = Tensor<S>::zeros({N, 3, 4});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < 3; ++c) {
      NormalizedBox nb = normalize_box(boxes[static_cast<size_t>(n)][static_cast<size_t>(c)], W, H);
      out[(n * 3 + c) * 4 + 0] = static_cast<S>(nb.x0);
      out[(n * 3 + c) * 4 + 1] = static_cast<S>(nb.y0);
      out[(n * 3 + c) * 4 + 2] = static_cast<S>(nb.x1);
      out[(n * 3 + c) * 4 + 3] = static_cast<S>(nb.y1);
    }
  return out;
}

// (1/N)·Σ_i Σ_c ‖pred_i^c - target_i^c‖ with the norm taken per coordinate
// group (L1 by default, L2 selectable).
template <typename S>
Var loss_box_regression(Tape<S>& t, Var predicted, Var target, HnsNorm norm = HnsNorm::L1) {
  const Tensor<S>& vp = t.value(predicted);
  MDE_CHECK(vp.ndim() == 3 && vp.dim(1) == 3 && vp.dim(2) == 4, DimensionError,
            "box regression expects predictions [N,3,4], got ", shape_str(vp.shape));
  detail::require_same_shape(t, predicted, target, "box regression");
  const int64_t N = vp.dim(0);
  Var d = sub(t, predicted, target);
  Var flat = reshape(t, d, {N * 3, 4});
  Var per_box{};
  if (norm == HnsNorm::L1) {
    per_box = row_sum(t, abs_val(t, flat));
  } else {
    per_box = sqrt_val(t, row_sum(t, mul(t, flat, flat)));
  }
  return affine(t, sum(t, per_box), 1.0 / static_cast<double>(N), 0.0);
}

// Named entry points: the critic seeks the true mask box on completed images;
// the completion network steers the prediction toward a decoy box.
template <typename S>
Var loss_hns_disc(Tape<S>& t, Var predicted, Var true_boxes, HnsNorm norm = HnsNorm::L1) {
  return loss_box_regression(t, predicted, true_boxes, norm);
}
template <typename S>
Var loss_hns_gen(Tape<S>& t, Var predicted, Var decoy_boxes, HnsNorm norm = HnsNorm::L1) {
  return loss_box_regression(t, predicted, decoy_boxes, norm);
}

template <typename S>
Var loss_hns_disc(Tape<S>& t, Var predicted, const std::vector<std::array<ChannelBox, 3>>& boxes,
                  int64_t W, int64_t H, HnsNorm norm = HnsNorm::L1) {
  return loss_box_regression(t, predicted, t.constant(boxes_to_tensor<S>(boxes, W, H)), norm);
}
template <typename S>
Var loss_hns_gen(Tape<S>& t, Var predicted, const std::vector<std::array<ChannelBox, 3>>& boxes,
                 int64_t W, int64_t H, HnsNorm norm = HnsNorm::L1) {
  return loss_box_regression(t, predicted, t.constant(boxes_to_tensor<S>(boxes, W, H)), norm);
}

// L_rec + λ_compl·L_perc + λ_adv·L_adv + λ_hns·L_hns. A term may be omitted
// (invalid Var) only when its weight is zero.
template <typename S>
Var loss_total_gen(Tape<S>& t, Var rec, Var perc, Var adv, Var hns, const LossWeights& w) {
  w.validate();
  MDE_CHECK(rec.valid(), ContractError, "total loss: reconstruction term is required");
  Var total = rec;
  struct Term {
    Var v;
    double weight;
    const char* name;
  };
  for (const Term& term : {Term{perc, w.lambda_compl, "perceptual"},
                           Term{adv, w.lambda_adv, "adversarial"}, Term{hns, w.lambda_hns, "hns"}}) {
    if (term.weight == 0.0) continue;
    MDE_CHECK(term.v.valid(), ContractError, "total loss: ", term.name,
              " term has nonzero weight ", term.weight, " but was not provided");
    total = add(t, total, affine(t, term.v, term.weight, 0.0));
  }
  return total;
}

}  // namespace mde
