#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "mde/common.hpp"
#include "mde/tensor.hpp"

namespace mde {

namespace detail {

template <typename S>
void require_unit_range(const Tensor<S>& t, const char* who) {
  for (int64_t i = 0; i < t.size(); ++i)
    MDE_CHECK(t[i] >= S(0) && t[i] <= S(1), ParameterError, who,
              ": image values must lie in [0,1]");
}

}  // namespace detail

// 10·log10(1/MSE) for unit dynamic range, over all elements or over the
// entries selected by a same-shaped 0/1 region mask. Identical inputs (or any
// MSE small enough) report the cap.
template <typename S>
double psnr(const Tensor<S>& a, const Tensor<S>& b, const Tensor<S>* region = nullptr,
            double cap_db = 100.0) {
  MDE_CHECK(a.same_shape(b), DimensionError, "psnr: shape mismatch ", shape_str(a.shape), " vs ",
            shape_str(b.shape));
  detail::require_unit_range(a, "psnr");
  detail::require_unit_range(b, "psnr");
  double se = 0.0;
  int64_t count = 0;
  if (region != nullptr) {
    MDE_CHECK(region->same_shape(a), DimensionError, "psnr: region mask shape ",
              shape_str(region->shape), " does not match image ", shape_str(a.shape));
    for (int64_t i = 0; i < a.size(); ++i) {
      if ((*region)[i] == S(0)) continue;
      const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
      se += d * d;
      ++count;
    }
    MDE_CHECK(count > 0, ParameterError, "psnr: empty region");
  } else {
    for (int64_t i = 0; i < a.size(); ++i) {
      const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
      se += d * d;
    }
    count = a.size();
  }
  const double mse = se / static_cast<double>(count);
  if (mse <= 0.0) return cap_db;
  return std::min(cap_db, 10.0 * std::log10(1.0 / mse));
}

namespace detail {

inline const std::vector<double>& ssim_window() {
  static const std::vector<double> w = [] {
    std::vector<double> win(11 * 11);
    const double sigma = 1.5;
    double sum = 0.0;
    for (int i = 0; i < 11; ++i)
      for (int j = 0; j < 11; ++j) {
        const double dy = i - 5, dx = j - 5;
        win[static_cast<size_t>(i * 11 + j)] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
        sum += win[static_cast<size_t>(i * 11 + j)];
      }
    for (double& v : win) v /= sum;
    return win;
  }();
  return w;
}

// channel mean of [C,H,W] (or a copy of [H,W]) as doubles
template <typename S>
std::vector<double> to_grayscale(const Tensor<S>& img, int64_t& H, int64_t& W) {
  MDE_CHECK(img.ndim() == 2 || img.ndim() == 3, DimensionError,
            "ssim expects [C,H,W] or [H,W], got ", shape_str(img.shape));
  if (img.ndim() == 2) {
    H = img.dim(0);
    W = img.dim(1);
    std::vector<double> g(static_cast<size_t>(H * W));
    for (int64_t i = 0; i < H * W; ++i) g[static_cast<size_t>(i)] = static_cast<double>(img[i]);
    return g;
  }
  const int64_t C = img.dim(0);
  H = img.dim(1);
  W = img.dim(2);
  std::vector<double> g(static_cast<size_t>(H * W), 0.0);
  for (int64_t c = 0; c < C; ++c)
    for (int64_t i = 0; i < H * W; ++i)
      g[static_cast<size_t>(i)] += static_cast<double>(img[c * H * W + i]);
  for (double& v : g) v /= static_cast<double>(C);
  return g;
}

}  // namespace detail

// Mean local SSIM over all valid 11x11 windows (Gaussian weights, sigma 1.5,
// C1=0.01^2, C2=0.03^2 for unit dynamic range); channels are averaged to
// grayscale first.
template <typename S>
double ssim(const Tensor<S>& a, const Tensor<S>& b) {
  MDE_CHECK(a.same_shape(b), DimensionError, "ssim: shape mismatch ", shape_str(a.shape), " vs ",
            shape_str(b.shape));
  int64_t H = 0, W = 0;
  const std::vector<double> ga = detail::to_grayscale(a, H, W);
  const std::vector<double> gb = detail::to_grayscale(b, H, W);
  constexpr int64_t k = 11;
  MDE_CHECK(H >= k && W >= k, ParameterError, "ssim: image ", H, "x", W,
            " is smaller than the 11x11 window");
  const auto& win = detail::ssim_window();
  constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;

  double total = 0.0;
  int64_t windows = 0;
  for (int64_t y = 0; y + k <= H; ++y)
    for (int64_t x = 0; x + k <= W; ++x) {
      double mx = 0.0, my = 0.0, xx = 0.0, yy = 0.0, xy = 0.0;
      for (int64_t i = 0; i < k; ++i)
        for (int64_t j = 0; j < k; ++j) {
          const double w = win[static_cast<size_t>(i * k + j)];
          const double va = ga[static_cast<size_t>((y + i) * W + (x + j))];
          const double vb = gb[static_cast<size_t>((y + i) * W + (x + j))];
          mx += w * va;
          my += w * vb;
          xx += w * va * va;
          yy += w * vb * vb;
          xy += w * va * vb;
        }
      const double vx = xx - mx * mx;
      const double vy = yy - my * my;
      const double cov = xy - mx * my;
      const double s = ((2 * mx * my + C1) * (2 * cov + C2)) /
                       ((mx * mx + my * my + C1) * (vx + vy + C2));
      total += s;
      ++windows;
    }
  return total / static_cast<double>(windows);
}

// exp(E[KL(p(y|x) || p(y))]) per split; returns (mean, population stddev)
// across splits. The classifier is injected and must emit a probability
// vector; the published face classifier is deliberately not bundled.
template <typename S>
std::pair<double, double> inception_score(
    const std::vector<Tensor<S>>& images,
    const std::function<std::vector<double>(const Tensor<S>&)>& classifier, int splits = 10) {
  MDE_CHECK(splits >= 1, ParameterError, "inception_score: splits must be >= 1");
  const int64_t n = static_cast<int64_t>(images.size());
  MDE_CHECK(n >= splits, ParameterError, "inception_score: ", n, " images but ", splits,
            " splits");

  std::vector<std::vector<double>> probs;
  probs.reserve(static_cast<size_t>(n));
  size_t K = 0;
  for (const auto& img : images) {
    std::vector<double> p = classifier(img);
    MDE_CHECK(!p.empty(), ParameterError, "inception_score: classifier emitted no classes");
    if (K == 0) K = p.size();
    MDE_CHECK(p.size() == K, ParameterError,
              "inception_score: classifier output length changed between images");
    double sum = 0.0;
    for (double v : p) {
      MDE_CHECK(v >= 0.0, ParameterError, "inception_score: negative class probability");
      sum += v;
    }
    MDE_CHECK(std::abs(sum - 1.0) < 1e-6, ParameterError,
              "inception_score: class probabilities sum to ", sum, ", expected 1");
    probs.push_back(std::move(p));
  }

  std::vector<double> scores;
  int64_t begin = 0;
  for (int s = 0; s < splits; ++s) {
    const int64_t len = n / splits + (s < static_cast<int>(n % splits) ? 1 : 0);
    const int64_t end = begin + len;
    std::vector<double> marginal(K, 0.0);
    for (int64_t i = begin; i < end; ++i)
      for (size_t y = 0; y < K; ++y) marginal[y] += probs[static_cast<size_t>(i)][y];
    for (double& v : marginal) v /= static_cast<double>(len);

    double mean_kl = 0.0;
    for (int64_t i = begin; i < end; ++i) {
      double kl = 0.0;
      for (size_t y = 0; y < K; ++y) {
        const double p = probs[static_cast<size_t>(i)][y];
        if (p <= 0.0) continue;
        kl += p * std::log(p / std::max(marginal[y], 1e-300));
      }
      mean_kl += kl;
    }
    mean_kl /= static_cast<double>(end - begin);
    scores.push_back(std::exp(mean_kl));
    begin = end;
  }

  double mean = 0.0;
  for (double v : scores) mean += v;
  mean /= static_cast<double>(scores.size());
  double var = 0.0;
  for (double v : scores) var += (v - mean) * (v - mean);
  var /= static_cast<double>(scores.size());
  return {mean, std::sqrt(var)};
}

struct MetricReport {
  double psnr_full = 0.0;
  double psnr_masked_region = 0.0;
  double ssim = 0.0;
  std::optional<double> inception_score;
};

}  // namespace mde
