#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <map>

#include "mde/gradcheck.hpp"
#include "mde/ops.hpp"
#include "mde/rng.hpp"
#include "mde/tape.hpp"
#include "mde/tensor.hpp"

using namespace mde;

namespace {

template <typename S>
Tensor<S> rand_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  auto t = Tensor<S>::zeros(shape);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

// Random values bounded away from zero, for kinked ops (relu, abs).
template <typename S>
Tensor<S> rand_away_from_zero(Rng& rng, Shape shape, double min_mag = 0.05) {
  auto t = Tensor<S>::zeros(shape);
  for (int64_t i = 0; i < t.size(); ++i) {
    double mag = rng.uniform(min_mag, 1.0);
    t[i] = static_cast<S>(rng.uniform() < 0.5 ? -mag : mag);
  }
  return t;
}

// Scalar loss that mixes every output entry with fixed random weights, so a
// gradient check exercises the whole output.
template <typename S>
Var weighted_sum(Tape<S>& t, Var y, const Tensor<S>& weights) {
  return sum(t, mul(t, y, t.constant(weights)));
}

using ParamMap = std::map<std::string, Tensor<double>>;

}  // namespace

TEST_CASE("conv2d identity and ones kernels") {
  Tape<float> t;
  Rng rng(11);

  // 1x1 identity kernel passes the input through
  auto x = rand_tensor<float>(rng, {1, 1, 3, 3});
  Var vx = t.constant(x);
  Var w = t.constant(Tensor<float>::full({1, 1, 1, 1}, 1.0f));
  Var b = t.constant(Tensor<float>::zeros({1}));
  Var y = conv2d(t, vx, w, b, 1, 0);
  REQUIRE(max_abs_diff(t.value(y), x) == 0.0f);

  // all-ones 3x3 kernel over a constant-1 4x4 image sums 9 ones
  Var ones = t.constant(Tensor<float>::full({1, 1, 4, 4}, 1.0f));
  Var w9 = t.constant(Tensor<float>::full({1, 1, 3, 3}, 1.0f));
  Var y9 = conv2d(t, ones, w9, b, 1, 0);
  REQUIRE(t.value(y9).same_shape(Tensor<float>::zeros({1, 1, 2, 2})));
  for (int64_t i = 0; i < 4; ++i) REQUIRE(t.value(y9)[i] == Catch::Approx(9.0f));
}

TEST_CASE("conv2d matches quadruple-loop oracle") {
  Rng rng(23);
  auto x = rand_tensor<double>(rng, {1, 2, 8, 8});
  auto w = rand_tensor<double>(rng, {4, 2, 3, 3});
  auto b = rand_tensor<double>(rng, {4});
  const int64_t stride = 2, pad = 1;

  Tape<double> t;
  Var y = conv2d(t, t.constant(x), t.constant(w), t.constant(b), stride, pad);
  const Tensor<double>& got = t.value(y);
  REQUIRE(got.same_shape(Tensor<double>::zeros({1, 4, 4, 4})));

  for (int64_t f = 0; f < 4; ++f)
    for (int64_t i = 0; i < 4; ++i)
      for (int64_t j = 0; j < 4; ++j) {
        double acc = b[f];
        for (int64_t c = 0; c < 2; ++c)
          for (int64_t u = 0; u < 3; ++u)
            for (int64_t v = 0; v < 3; ++v) {
              int64_t ih = i * stride - pad + u, iw = j * stride - pad + v;
              if (ih < 0 || ih >= 8 || iw < 0 || iw >= 8) continue;
              acc += x.at4(0, c, ih, iw) * w.at4(f, c, u, v);
            }
        REQUIRE(got.at4(0, f, i, j) == Catch::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("conv2d rejects bad geometry") {
  Tape<float> t;
  Var x = t.constant(Tensor<float>::zeros({1, 2, 4, 4}));
  Var w = t.constant(Tensor<float>::zeros({3, 2, 3, 3}));
  Var b3 = t.constant(Tensor<float>::zeros({3}));
  REQUIRE_THROWS_AS(conv2d(t, x, w, b3, 0, 0), ParameterError);
  REQUIRE_THROWS_AS(conv2d(t, x, w, b3, 1, -1), ParameterError);
  Var wbad = t.constant(Tensor<float>::zeros({3, 1, 3, 3}));
  REQUIRE_THROWS_AS(conv2d(t, x, wbad, b3, 1, 1), DimensionError);
  Var b2 = t.constant(Tensor<float>::zeros({2}));
  REQUIRE_THROWS_AS(conv2d(t, x, w, b2, 1, 1), DimensionError);
  Var wbig = t.constant(Tensor<float>::zeros({3, 2, 7, 7}));
  REQUIRE_THROWS_AS(conv2d(t, x, wbig, b3, 1, 0), DimensionError);
}

TEST_CASE("conv2d_transpose stamps the kernel per input pixel") {
  Tape<float> t;
  auto x = Tensor<float>::from({1, 1, 2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
  Var y = conv2d_transpose(t, t.constant(x), t.constant(Tensor<float>::full({1, 1, 2, 2}, 1.0f)),
                           t.constant(Tensor<float>::zeros({1})), 2, 0);
  const Tensor<float>& got = t.value(y);
  REQUIRE(got.same_shape(Tensor<float>::zeros({1, 1, 4, 4})));
  // each input pixel stamps a 2x2 block of its own value
  const float want[16] = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  for (int64_t i = 0; i < 16; ++i) REQUIRE(got[i] == Catch::Approx(want[i]));
}

TEST_CASE("conv2d_transpose inverts conv2d shapes") {
  Rng rng(5);
  struct Cfg {
    int64_t C, H, W, F, k, s, p, op;
  };
  for (Cfg c : {Cfg{2, 16, 16, 3, 2, 2, 0, 0}, Cfg{1, 16, 16, 2, 3, 1, 1, 0},
                Cfg{2, 16, 16, 3, 3, 2, 1, 1}, Cfg{2, 15, 15, 3, 3, 2, 1, 0}}) {
    Tape<float> t;
    auto x = rand_tensor<float>(rng, {1, c.C, c.H, c.W});
    Var y = conv2d(t, t.constant(x), t.constant(rand_tensor<float>(rng, {c.F, c.C, c.k, c.k})),
                   t.constant(Tensor<float>::zeros({c.F})), c.s, c.p);
    Var back = conv2d_transpose(
        t, y, t.constant(rand_tensor<float>(rng, {c.F, c.C, c.k, c.k})),
        t.constant(Tensor<float>::zeros({c.C})), c.s, c.p, c.op);
    REQUIRE(t.value(back).same_shape(x));
  }
}

TEST_CASE("conv2d_transpose equals the explicit adjoint matrix") {
  Rng rng(31);
  const int64_t C = 3, H = 4, W = 4, F = 2, k = 3, s = 1, p = 1;
  auto w = rand_tensor<double>(rng, {F, C, k, k});
  const int64_t nin = C * H * W;

  auto conv_apply = [&](const Tensor<double>& x) {
    Tape<double> t;
    Var y = conv2d(t, t.constant(x), t.constant(w), t.constant(Tensor<double>::zeros({F})), s, p);
    return t.value(y);
  };
  const int64_t nout = conv_apply(Tensor<double>::zeros({1, C, H, W})).size();

  // dense matrix of the conv operator, one basis vector at a time
  std::vector<double> A(static_cast<size_t>(nout * nin));
  for (int64_t j = 0; j < nin; ++j) {
    auto e = Tensor<double>::zeros({1, C, H, W});
    e[j] = 1.0;
    auto col = conv_apply(e);
    for (int64_t i = 0; i < nout; ++i) A[static_cast<size_t>(i * nin + j)] = col[i];
  }

  auto y = rand_tensor<double>(rng, {1, F, H, W});
  Tape<double> t;
  Var back = conv2d_transpose(t, t.constant(y), t.constant(w.reshaped({F, C, k, k})),
                              t.constant(Tensor<double>::zeros({C})), s, p);
  const Tensor<double>& got = t.value(back);
  for (int64_t j = 0; j < nin; ++j) {
    double want = 0.0;
    for (int64_t i = 0; i < nout; ++i) want += A[static_cast<size_t>(i * nin + j)] * y[i];
    REQUIRE(got[j] == Catch::Approx(want).margin(1e-10));
  }
}

TEST_CASE("conv2d_transpose is the adjoint of conv2d") {
  Rng rng(47);
  struct Cfg {
    int64_t C, H, F, k, s, p, op;
  };
  for (Cfg c : {Cfg{2, 6, 3, 3, 2, 1, 1}, Cfg{1, 5, 2, 2, 1, 0, 0}, Cfg{3, 4, 2, 3, 1, 1, 0},
                Cfg{2, 8, 2, 4, 2, 1, 0}}) {
    auto w = rand_tensor<double>(rng, {c.F, c.C, c.k, c.k});
    auto x = rand_tensor<double>(rng, {1, c.C, c.H, c.H});

    Tape<double> t;
    Var cy = conv2d(t, t.constant(x), t.constant(w), t.constant(Tensor<double>::zeros({c.F})),
                    c.s, c.p);
    auto y = rand_tensor<double>(rng, t.value(cy).shape);
    Var bx = conv2d_transpose(t, t.constant(y), t.constant(w),
                              t.constant(Tensor<double>::zeros({c.C})), c.s, c.p, c.op);
    REQUIRE(t.value(bx).same_shape(x));

    double lhs = 0.0, rhs = 0.0;
    for (int64_t i = 0; i < y.size(); ++i) lhs += t.value(cy)[i] * y[i];
    for (int64_t i = 0; i < x.size(); ++i) rhs += x[i] * t.value(bx)[i];
    REQUIRE(lhs == Catch::Approx(rhs).margin(1e-5));
  }
}

TEST_CASE("conv2d_transpose validates output_padding") {
  Tape<float> t;
  Var x = t.constant(Tensor<float>::zeros({1, 1, 2, 2}));
  Var w = t.constant(Tensor<float>::zeros({1, 1, 2, 2}));
  Var b = t.constant(Tensor<float>::zeros({1}));
  REQUIRE_THROWS_AS(conv2d_transpose(t, x, w, b, 2, 0, 2), ParameterError);
  REQUIRE_THROWS_AS(conv2d_transpose(t, x, w, b, 2, 0, -1), ParameterError);
}

TEST_CASE("batchnorm2d normalizes per channel") {
  Rng rng(3);
  auto x = rand_tensor<float>(rng, {4, 3, 5, 5}, -2.0, 5.0);
  Tape<float> t;
  auto rm = Tensor<float>::zeros({3});
  auto rv = Tensor<float>::full({3}, 1.0f);
  Var y = batchnorm2d(t, t.constant(x), t.constant(Tensor<float>::full({3}, 1.0f)),
                      t.constant(Tensor<float>::zeros({3})), rm, rv, true, false);
  const Tensor<float>& got = t.value(y);
  const int64_t m = 4 * 5 * 5;
  for (int64_t c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    for (int64_t n = 0; n < 4; ++n)
      for (int64_t i = 0; i < 25; ++i) mean += got.at4(n, c, i / 5, i % 5);
    mean /= m;
    for (int64_t n = 0; n < 4; ++n)
      for (int64_t i = 0; i < 25; ++i) {
        double d = got.at4(n, c, i / 5, i % 5) - mean;
        var += d * d;
      }
    var /= m;
    REQUIRE(mean == Catch::Approx(0.0).margin(1e-5));
    REQUIRE(var == Catch::Approx(1.0).margin(1e-3));
  }
}

TEST_CASE("batchnorm2d trivial cases") {
  Rng rng(8);
  // input already standardized: unit gamma and zero beta reproduce it
  auto x = Tensor<float>::zeros({1, 1, 2, 2});
  x[0] = -1.0f;
  x[1] = 1.0f;
  x[2] = -1.0f;
  x[3] = 1.0f;
  Tape<float> t;
  auto rm = Tensor<float>::zeros({1});
  auto rv = Tensor<float>::full({1}, 1.0f);
  Var y = batchnorm2d(t, t.constant(x), t.constant(Tensor<float>::full({1}, 1.0f)),
                      t.constant(Tensor<float>::zeros({1})), rm, rv, true, false);
  REQUIRE(max_abs_diff(t.value(y), x) < 1e-4f);

  // gamma = 0 collapses to beta
  auto r = rand_tensor<float>(rng, {2, 2, 3, 3});
  auto rm2 = Tensor<float>::zeros({2});
  auto rv2 = Tensor<float>::full({2}, 1.0f);
  Var yb = batchnorm2d(t, t.constant(r), t.constant(Tensor<float>::zeros({2})),
                       t.constant(Tensor<float>::full({2}, 0.75f)), rm2, rv2, true, false);
  for (int64_t i = 0; i < t.value(yb).size(); ++i) REQUIRE(t.value(yb)[i] == 0.75f);
}

TEST_CASE("batchnorm2d running stats and eval mode") {
  Rng rng(99);
  auto x = rand_tensor<double>(rng, {3, 2, 4, 4}, 0.0, 4.0);
  const int64_t m = 3 * 4 * 4;

  // manual batch statistics
  double mu[2] = {0, 0}, var[2] = {0, 0};
  for (int64_t c = 0; c < 2; ++c) {
    for (int64_t n = 0; n < 3; ++n)
      for (int64_t i = 0; i < 16; ++i) mu[c] += x.at4(n, c, i / 4, i % 4);
    mu[c] /= m;
    for (int64_t n = 0; n < 3; ++n)
      for (int64_t i = 0; i < 16; ++i) {
        double d = x.at4(n, c, i / 4, i % 4) - mu[c];
        var[c] += d * d;
      }
    var[c] /= m;
  }

  auto rm = Tensor<double>::full({2}, 0.5);
  auto rv = Tensor<double>::full({2}, 2.0);
  Tape<double> t;
  Var g = t.constant(Tensor<double>::full({2}, 1.0));
  Var b = t.constant(Tensor<double>::zeros({2}));
  batchnorm2d(t, t.constant(x), g, b, rm, rv, true, true);
  for (int64_t c = 0; c < 2; ++c) {
    REQUIRE(rm[c] == Catch::Approx(0.9 * 0.5 + 0.1 * mu[c]).epsilon(1e-10));
    double unbiased = var[c] * m / (m - 1.0);
    REQUIRE(rv[c] == Catch::Approx(0.9 * 2.0 + 0.1 * unbiased).epsilon(1e-10));
  }

  // eval mode consumes the running stats and never writes them
  auto rm_before = rm, rv_before = rv;
  Var ye = batchnorm2d(t, t.constant(x), g, b, rm, rv, false, false);
  REQUIRE(max_abs_diff(rm, rm_before) == 0.0);
  REQUIRE(max_abs_diff(rv, rv_before) == 0.0);
  for (int64_t c = 0; c < 2; ++c) {
    double is = 1.0 / std::sqrt(rv[c] + 1e-5);
    for (int64_t n = 0; n < 3; ++n)
      for (int64_t i = 0; i < 16; ++i) {
        double want = (x.at4(n, c, i / 4, i % 4) - rm[c]) * is;
        REQUIRE(t.value(ye).at4(n, c, i / 4, i % 4) == Catch::Approx(want).epsilon(1e-10));
      }
  }
}

TEST_CASE("batchnorm2d handles zero-variance channels") {
  Tape<float> t;
  auto x = Tensor<float>::full({2, 1, 3, 3}, 4.0f);
  auto rm = Tensor<float>::zeros({1});
  auto rv = Tensor<float>::full({1}, 1.0f);
  Var y = batchnorm2d(t, t.constant(x), t.constant(Tensor<float>::full({1}, 1.0f)),
                      t.constant(Tensor<float>::zeros({1})), rm, rv, true, false);
  REQUIRE(t.value(y).all_finite());
  for (int64_t i = 0; i < t.value(y).size(); ++i)
    REQUIRE(t.value(y)[i] == Catch::Approx(0.0f).margin(1e-4));
}

TEST_CASE("activation trivial values") {
  Tape<float> t;
  auto x = Tensor<float>::from({4}, {-1.0f, 2.0f, 0.0f, -3.0f});
  Var v = t.constant(x);
  const Tensor<float>& r = t.value(relu(t, v));
  REQUIRE(r[0] == 0.0f);
  REQUIRE(r[1] == 2.0f);
  const Tensor<float>& l = t.value(leaky_relu(t, v, 0.2));
  REQUIRE(l[0] == Catch::Approx(-0.2f));
  REQUIRE(l[3] == Catch::Approx(-0.6f));
  const Tensor<float>& s = t.value(sigmoid(t, v));
  REQUIRE(s[2] == Catch::Approx(0.5f));

  Rng rng(12);
  auto big = rand_tensor<float>(rng, {1000}, -8.0, 8.0);
  const Tensor<float>& sb = t.value(sigmoid(t, t.constant(big)));
  for (int64_t i = 0; i < sb.size(); ++i) {
    REQUIRE(sb[i] > 0.0f);
    REQUIRE(sb[i] < 1.0f);
  }
}

TEST_CASE("global_avg_pool values") {
  Tape<float> t;
  Var c = t.constant(Tensor<float>::full({2, 3, 4, 4}, 2.5f));
  const Tensor<float>& yc = t.value(global_avg_pool(t, c));
  REQUIRE(yc.same_shape(Tensor<float>::zeros({2, 3})));
  for (int64_t i = 0; i < yc.size(); ++i) REQUIRE(yc[i] == Catch::Approx(2.5f));

  Var q = t.constant(Tensor<float>::from({1, 1, 2, 2}, {0.0f, 1.0f, 2.0f, 3.0f}));
  REQUIRE(t.value(global_avg_pool(t, q))[0] == Catch::Approx(1.5f));

  Rng rng(6);
  auto x = rand_tensor<double>(rng, {2, 3, 5, 5});
  Tape<double> td;
  const Tensor<double>& y = td.value(global_avg_pool(td, td.constant(x)));
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t ch = 0; ch < 3; ++ch) {
      double acc = 0.0;
      for (int64_t i = 0; i < 25; ++i) acc += x.at4(n, ch, i / 5, i % 5);
      REQUIRE(y.at2(n, ch) == Catch::Approx(acc / 25.0).epsilon(1e-12));
    }
}

TEST_CASE("fully_connected values") {
  Tape<float> t;
  Var x = t.constant(Tensor<float>::from({1, 2}, {1.0f, 2.0f}));
  Var w = t.constant(Tensor<float>::from({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f}));
  Var b = t.constant(Tensor<float>::from({2}, {3.0f, 3.0f}));
  const Tensor<float>& y = t.value(fully_connected(t, x, w, b));
  REQUIRE(y[0] == Catch::Approx(4.0f));
  REQUIRE(y[1] == Catch::Approx(5.0f));

  Rng rng(77);
  auto xr = rand_tensor<double>(rng, {4, 16});
  auto wr = rand_tensor<double>(rng, {16, 8});
  auto br = rand_tensor<double>(rng, {8});
  Tape<double> td;
  const Tensor<double>& yr =
      td.value(fully_connected(td, td.constant(xr), td.constant(wr), td.constant(br)));
  for (int64_t n = 0; n < 4; ++n)
    for (int64_t e = 0; e < 8; ++e) {
      double acc = br[e];
      for (int64_t d = 0; d < 16; ++d) acc += xr.at2(n, d) * wr.at2(d, e);
      REQUIRE(yr.at2(n, e) == Catch::Approx(acc).epsilon(1e-12));
    }

  Var wbad = t.constant(Tensor<float>::zeros({3, 2}));
  REQUIRE_THROWS_AS(fully_connected(t, x, wbad, b), DimensionError);
}

TEST_CASE("concat_channels splits gradients correctly") {
  Rng rng(13);
  auto a = rand_tensor<float>(rng, {2, 2, 3, 3});
  auto b = rand_tensor<float>(rng, {2, 3, 3, 3});
  Tape<float> t;
  Var y = concat_channels(t, t.constant(a), t.constant(b));
  const Tensor<float>& v = t.value(y);
  REQUIRE(v.same_shape(Tensor<float>::zeros({2, 5, 3, 3})));
  for (int64_t n = 0; n < 2; ++n) {
    for (int64_t c = 0; c < 2; ++c)
      for (int64_t i = 0; i < 9; ++i)
        REQUIRE(v.at4(n, c, i / 3, i % 3) == a.at4(n, c, i / 3, i % 3));
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t i = 0; i < 9; ++i)
        REQUIRE(v.at4(n, 2 + c, i / 3, i % 3) == b.at4(n, c, i / 3, i % 3));
  }
}

TEST_CASE("backward basics") {
  Rng rng(17);
  auto x = rand_tensor<double>(rng, {3, 4});

  // d(sum x)/dx = 1
  {
    Tape<double> t;
    Var vx = t.param("x", x);
    auto grads = backward(t, sum(t, vx));
    for (int64_t i = 0; i < x.size(); ++i) REQUIRE(grads.at("x")[i] == 1.0);
  }
  // d(||x||^2 / 2)/dx = x
  {
    Tape<double> t;
    Var vx = t.param("x", x);
    Var loss = affine(t, sum(t, mul(t, vx, vx)), 0.5, 0.0);
    auto grads = backward(t, loss);
    REQUIRE(max_abs_diff(grads.at("x"), x) < 1e-12);
  }
  // unused parameters still get (zero) gradients
  {
    Tape<double> t;
    Var vx = t.param("x", x);
    t.param("unused", Tensor<double>::full({2}, 3.0));
    auto grads = backward(t, sum(t, vx));
    REQUIRE(grads.count("unused") == 1);
    for (int64_t i = 0; i < 2; ++i) REQUIRE(grads.at("unused")[i] == 0.0);
  }
}

TEST_CASE("tape contract violations") {
  Tape<double> t;
  Var v = t.param("p", Tensor<double>::full({3}, 1.0));
  REQUIRE_THROWS_AS(t.backward(v), ContractError);  // not scalar
  Var s = sum(t, v);
  t.backward(s);
  REQUIRE_THROWS_AS(t.backward(s), ContractError);  // second sweep
  REQUIRE_THROWS_AS(t.param("p", Tensor<double>::zeros({4})), ContractError);

  Tape<double> t2;
  REQUIRE_THROWS_AS(t2.named_grads(), ContractError);
}

TEST_CASE("finite check names the failing primitive") {
  Tape<double> t;
  t.check_finite = true;
  Var v = t.constant(Tensor<double>::from({2}, {-1.0, 2.0}));
  try {
    log_val(t, v);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    REQUIRE(std::string(e.what()).find("log") != std::string::npos);
  }
}

TEST_CASE("gradient of a linear function is exact to machine precision") {
  Rng rng(91);
  ParamMap params{{"x", rand_tensor<double>(rng, {6})}};
  auto c = rand_tensor<double>(rng, {6});
  auto report = grad_check(params, [&](Tape<double>& t, const ParamMap& p) {
    return weighted_sum(t, t.param("x", p.at("x")), c);
  });
  REQUIRE(report.pass);
  REQUIRE(report.max_rel_err < 1e-9);
}

TEST_CASE("gradient check: single conv layer with L2 loss") {
  Rng rng(101);
  ParamMap params{{"w", rand_tensor<double>(rng, {3, 2, 3, 3})},
                  {"b", rand_tensor<double>(rng, {3})},
                  {"x", rand_tensor<double>(rng, {2, 2, 6, 6})}};
  auto target = rand_tensor<double>(rng, {2, 3, 3, 3});
  auto report = grad_check(params, [&](Tape<double>& t, const ParamMap& p) {
    Var y = conv2d(t, t.param("x", p.at("x")), t.param("w", p.at("w")), t.param("b", p.at("b")),
                   2, 1);
    Var d = sub(t, y, t.constant(target));
    return mean(t, mul(t, d, d));
  });
  INFO("max rel err " << report.max_rel_err << " at " << report.worst.name);
  REQUIRE(report.pass);
}

TEST_CASE("gradient check: every primitive") {
  Rng rng(55);
  GradCheckOptions opt;

  SECTION("conv2d stride 1 no padding") {
    ParamMap p{{"w", rand_tensor<double>(rng, {2, 3, 3, 3})},
               {"b", rand_tensor<double>(rng, {2})},
               {"x", rand_tensor<double>(rng, {2, 3, 5, 5})}};
    auto wt = rand_tensor<double>(rng, {2, 2, 3, 3});
    auto rep = grad_check(p, [&](Tape<double>& t, const ParamMap& pm) {
      Var y = conv2d(t, t.param("x", pm.at("x")), t.param("w", pm.at("w")),
                     t.param("b", pm.at("b")), 1, 0);
      return weighted_sum(t, y, wt);
    });
    INFO("max rel err " << rep.max_rel_err);
    REQUIRE(rep.pass);
  }

  SECTION("conv2d_transpose stride 2 with output padding") {
    ParamMap p{{"w", rand_tensor<double>(rng, {3, 2, 3, 3})},
               {"b", rand_tensor<double>(rng, {2})},
               {"x", rand_tensor<double>(rng, {2, 3, 4, 4})}};
    Tensor<double> wt;
    {
      Tape<double> t;
      Var y = conv2d_transpose(t, t.constant(p.at("x")), t.constant(p.at("w")),
                               t.constant(p.at("b")), 2, 1, 1);
      wt = rand_tensor<double>(rng, t.value(y).shape);
    }
    auto rep = grad_check(p, [&](Tape<double>& t, const ParamMap& pm) {
      Var y = conv2d_transpose(t, t.param("x", pm.at("x")), t.param("w", pm.at("w")),
                               t.param("b", pm.at("b")), 2, 1, 1);
      return weighted_sum(t, y, wt);
    });
    INFO("max rel err " << rep.max_rel_err);
    REQUIRE(rep.pass);
  }

  SECTION("batchnorm2d train mode") {
    ParamMap p{{"x", rand_tensor<double>(rng, {3, 2, 4, 4})},
               {"g", rand_tensor<double>(rng, {2}, 0.5, 1.5)},
               {"be", rand_tensor<double>(rng, {2})}};
    auto wt = rand_tensor<double>(rng, {3, 2, 4, 4});
    auto rep = grad_check(p, [&](Tape<double>& t, const ParamMap& pm) {
      auto rm = Tensor<double>::zeros({2});
      auto rv = Tensor<double>::full({2}, 1.0);
      Var y = batchnorm2d(t, t.param("x", pm.at("x")), t.param("g", pm.at("g")),
                          t.param("be", pm.at("be")), rm, rv, true, false);
      return weighted_sum(t, y, wt);
    });
    INFO("max rel err " << rep.max_rel_err);
    REQUIRE(rep.pass);
  }

  SECTION("batchnorm2d eval mode") {
    ParamMap p{{"x", rand_tensor<double>(rng, {2, 2, 3, 3})},
               {"g", rand_tensor<double>(rng, {2}, 0.5, 1.5)},
               {"be", rand_tensor<double>(rng, {2})}};
    auto rm0 = rand_tensor<double>(rng, {2});
    auto rv0 = rand_tensor<double>(rng, {2}, 0.5, 2.0);
    auto wt = rand_tensor<double>(rng, {2, 2, 3, 3});
    auto rep = grad_check(p, [&](Tape<double>& t, const ParamMap& pm) {
      auto rm = rm0;
      auto rv = rv0;
      Var y = batchnorm2d(t, t.param("x", pm.at("x")), t.param("g", pm.at("g")),
                          t.param("be", pm.at("be")), rm, rv, false, false);
      return weighted_sum(t, y, wt);
    });
    INFO("max rel err " << rep.max_rel_err);
    REQUIRE(rep.pass);
  }

  SECTION("activations") {
    ParamMap p{{"x", rand_away_from_zero<double>(rng, {4, 7})}};
    auto wt = rand_tensor<double>(rng, {4, 7});
    for (Act kind : {Act::Relu, Act::LeakyRelu, Act::Sigmoid}) {
      auto rep = grad_check(p, [&](Tape<double>& t, const ParamMap& pm) {
        return weighted_sum(t, activation(t, t.param("x", pm.at("x")), kind, 0.2), wt);
      });
      INFO("kind " << static_cast<int>(kind) << " max rel err " << rep.max_rel_err);
      REQUIRE(rep.pass);
    }
  }

  SECTION("fully_connected, pool, concat, reshape, row_sum") {
    ParamMap p{{"x", rand_tensor<double>(rng, {2, 3, 4, 4})},
               {"x2", rand_tensor<double>(rng, {2, 2, 4, 4})},
               {"w", rand_tensor<double>(rng, {5, 3})},
               {"b", rand_tensor<double>(rng, {3})}};
    auto wmix = rand_tensor<double>(rng, {3, 1});
    auto rep = grad_check(p, [&](Tape<double>& t, const ParamMap& pm) {
      Var cat = concat_channels(t, t.param("x", pm.at("x")), t.param("x2", pm.at("x2")));
      Var pooled = global_avg_pool(t, cat);  // [2,5]
      Var fc = fully_connected(t, pooled, t.param("w", pm.at("w")), t.param("b", pm.at("b")));
      Var flat = reshape(t, fc, {3, 2});
      Var rs = row_sum(t, flat);  // [3]
      return weighted_sum(t, fully_connected(t, reshape(t, rs, {1, 3}), t.constant(wmix),
                                             t.constant(Tensor<double>::zeros({1}))),
                          Tensor<double>::full({1, 1}, 1.0));
    });
    INFO("max rel err " << rep.max_rel_err << " worst " << rep.worst.name);
    REQUIRE(rep.pass);
  }

  SECTION("elementwise suite") {
    ParamMap p{{"a", rand_away_from_zero<double>(rng, {10})},
               {"b", rand_away_from_zero<double>(rng, {10})}};
    auto wt = rand_tensor<double>(rng, {10});
    auto rep = grad_check(p, [&](Tape<double>& t, const ParamMap& pm) {
      Var a = t.param("a", pm.at("a"));
      Var b = t.param("b", pm.at("b"));
      Var e = mul(t, add(t, a, b), sub(t, a, b));
      Var f = affine(t, e, 0.3, 0.7);
      Var g = abs_val(t, f);
      // g > 0 away from zeros of f; keep log/sqrt inputs positive
      Var h = log_val(t, add(t, g, t.constant(Tensor<double>::full({10}, 1.0))));
      Var i = sqrt_val(t, add(t, h, t.constant(Tensor<double>::full({10}, 2.0))));
      Var j = clamp(t, i, -10.0, 10.0);
      return weighted_sum(t, j, wt);
    });
    INFO("max rel err " << rep.max_rel_err << " worst " << rep.worst.name);
    REQUIRE(rep.pass);
  }

  SECTION("clamp blocks gradient outside the interval") {
    ParamMap p{{"x", Tensor<double>::from({3}, {-2.0, 0.1, 2.0})}};
    Tape<double> t;
    Var v = t.param("x", p.at("x"));
    t.backward(sum(t, clamp(t, v, -1.0, 1.0)));
    auto g = t.named_grads().at("x");
    REQUIRE(g[0] == 0.0);
    REQUIRE(g[1] == 1.0);
    REQUIRE(g[2] == 0.0);
  }
  (void)opt;
}

TEST_CASE("gradient check: composed network") {
  Rng rng(66);
  ParamMap p{{"w1", rand_tensor<double>(rng, {4, 2, 3, 3}, -0.4, 0.4)},
             {"b1", rand_tensor<double>(rng, {4}, -0.1, 0.1)},
             {"g1", rand_tensor<double>(rng, {4}, 0.8, 1.2)},
             {"be1", rand_tensor<double>(rng, {4}, -0.1, 0.1)},
             {"w2", rand_tensor<double>(rng, {4, 2, 3, 3}, -0.4, 0.4)},
             {"b2", rand_tensor<double>(rng, {2}, -0.1, 0.1)},
             {"wf", rand_tensor<double>(rng, {2, 1}, -0.5, 0.5)},
             {"bf", rand_tensor<double>(rng, {1})}};
  auto x = rand_tensor<double>(rng, {2, 2, 8, 8});
  auto report = grad_check(p, [&](Tape<double>& t, const ParamMap& pm) {
    Var h = conv2d(t, t.constant(x), t.param("w1", pm.at("w1")), t.param("b1", pm.at("b1")), 2,
                   1);  // [2,4,4,4]
    auto rm = Tensor<double>::zeros({4});
    auto rv = Tensor<double>::full({4}, 1.0);
    h = batchnorm2d(t, h, t.param("g1", pm.at("g1")), t.param("be1", pm.at("be1")), rm, rv, true,
                    false);
    h = leaky_relu(t, h, 0.2);
    h = conv2d_transpose(t, h, t.param("w2", pm.at("w2")), t.param("b2", pm.at("b2")), 2, 1,
                         1);  // [2,2,8,8]
    h = sigmoid(t, h);
    Var pooled = global_avg_pool(t, h);  // [2,2]
    Var out = fully_connected(t, pooled, t.param("wf", pm.at("wf")), t.param("bf", pm.at("bf")));
    return mean(t, mul(t, out, out));
  });
  INFO("max rel err " << report.max_rel_err << " worst " << report.worst.name << "["
                      << report.worst.index << "] analytic " << report.worst.analytic
                      << " numeric " << report.worst.numeric);
  REQUIRE(report.pass);
}

TEST_CASE("gradients are linear in the loss") {
  Rng rng(29);
  auto x0 = rand_tensor<double>(rng, {2, 2, 4, 4});
  auto w0 = rand_tensor<double>(rng, {2, 2, 3, 3});
  auto b0 = rand_tensor<double>(rng, {2});
  auto tgt = rand_tensor<double>(rng, {2, 2, 4, 4});
  const double a = 0.7, b = -1.3;

  auto run = [&](double ca, double cb) {
    Tape<double> t;
    Var y = conv2d(t, t.constant(x0), t.param("w", w0), t.param("b", b0), 1, 1);
    Var d = sub(t, y, t.constant(tgt));
    Var l1 = sum(t, mul(t, d, d));
    Var l2 = mean(t, abs_val(t, d));
    Var loss = add(t, affine(t, l1, ca, 0.0), affine(t, l2, cb, 0.0));
    t.backward(loss);
    return t.named_grads();
  };
  auto g1 = run(1.0, 0.0);
  auto g2 = run(0.0, 1.0);
  auto gc = run(a, b);
  for (const auto& [name, g] : gc) {
    for (int64_t i = 0; i < g.size(); ++i) {
      double want = a * g1.at(name)[i] + b * g2.at(name)[i];
      REQUIRE(g[i] == Catch::Approx(want).margin(1e-6));
    }
  }
}

TEST_CASE("forward passes are deterministic") {
  auto run = [] {
    Rng rng(1234);
    auto x = rand_tensor<float>(rng, {2, 2, 8, 8});
    auto w = rand_tensor<float>(rng, {3, 2, 3, 3});
    auto b = rand_tensor<float>(rng, {3});
    Tape<float> t;
    Var y = sigmoid(t, conv2d(t, t.constant(x), t.constant(w), t.constant(b), 2, 1));
    return t.value(y);
  };
  auto y1 = run();
  auto y2 = run();
  REQUIRE(y1.same_shape(y2));
  for (int64_t i = 0; i < y1.size(); ++i) REQUIRE(y1[i] == y2[i]);
}
