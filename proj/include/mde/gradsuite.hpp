#pragma once

#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "mde/gradcheck.hpp"
#include "mde/losses.hpp"
#include "mde/maskgen.hpp"
#include "mde/models.hpp"
#include "mde/ops.hpp"
#include "mde/rng.hpp"
#include "mde/tape.hpp"
#include "mde/tensor.hpp"

namespace mde {

// One named 64-bit finite-difference verification. Entries must be pure:
// repeated runs return identical reports.
struct GradSuiteEntry {
  std::string name;
  std::function<GradCheckReport()> run;
};

namespace detail {

using ParamMap = std::map<std::string, Tensor<double>>;

inline Tensor<double> suite_rand(Rng& rng, Shape sh, double lo, double hi) {
  auto t = Tensor<double>::zeros(std::move(sh));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// uniform in [-1,-margin] ∪ [margin,1]: keeps finite differences away from
// activation kinks
inline Tensor<double> suite_rand_away(Rng& rng, Shape sh, double margin) {
  auto t = Tensor<double>::zeros(std::move(sh));
  for (int64_t i = 0; i < t.size(); ++i) {
    const double u = rng.uniform(margin, 1.0);
    t[i] = rng.uniform_int(0, 1) == 0 ? -u : u;
  }
  return t;
}

inline Tensor<double> suite_binary(Rng& rng, Shape sh, double p_one) {
  auto t = Tensor<double>::zeros(std::move(sh));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform() < p_one ? 1.0 : 0.0;
  return t;
}

// sum(x ⊙ c) for a fixed random weighting c: gives every element of a
// non-scalar result its own cotangent
inline Var weighted_sum(Tape<double>& t, Var x, const Tensor<double>& c) {
  return sum(t, mul(t, x, t.constant(c)));
}

}  // namespace detail

// The standard battery: every differentiable primitive plus every loss,
// finishing with the fully composed objective through both networks.
inline std::vector<GradSuiteEntry> standard_grad_suite() {
  using detail::ParamMap;
  std::vector<GradSuiteEntry> suite;
  auto add_entry = [&suite](std::string name, std::function<GradCheckReport()> fn) {
    suite.push_back({std::move(name), std::move(fn)});
  };

  // ---- elementwise primitives ----
  add_entry("op.add", [] {
    Rng rng(101);
    ParamMap p{{"a", detail::suite_rand(rng, {2, 3}, -1, 1)},
               {"b", detail::suite_rand(rng, {2, 3}, -1, 1)}};
    const Tensor<double> c = detail::suite_rand(rng, {2, 3}, -1, 1);
    return grad_check(p, [c](Tape<double>& t, const ParamMap& pm) {
      return detail::weighted_sum(t, add(t, t.param("a", pm.at("a")), t.param("b", pm.at("b"))), c);
    });
  });
  add_entry("op.sub", [] {
    Rng rng(102);
    ParamMap p{{"a", detail::suite_rand(rng, {3, 2}, -1, 1)},
               {"b", detail::suite_rand(rng, {3, 2}, -1, 1)}};
    const Tensor<double> c = detail::suite_rand(rng, {3, 2}, -1, 1);
    return grad_check(p, [c](Tape<double>& t, const ParamMap& pm) {
      return detail::weighted_sum(t, sub(t, t.param("a", pm.at("a")), t.param("b", pm.at("b"))), c);
    });
  });
  add_entry("op.mul", [] {
    Rng rng(103);
    ParamMap p{{"a", detail::suite_rand(rng, {2, 4}, -1, 1)},
               {"b", detail::suite_rand(rng, {2, 4}, -1, 1)}};
    const Tensor<double> c = detail::suite_rand(rng, {2, 4}, -1, 1);
    return grad_check(p, [c](Tape<double>& t, const ParamMap& pm) {
      return detail::weighted_sum(t, mul(t, t.param("a", pm.at("a")), t.param("b", pm.at("b"))), c);
    });
  });
  add_entry("op.affine", [] {
    Rng rng(104);
    ParamMap p{{"a", detail::suite_rand(rng, {2, 5}, -1, 1)}};
    const Tensor<double> c = detail::suite_rand(rng, {2, 5}, -1, 1);
    return grad_check(p, [c](Tape<double>& t, const ParamMap& pm) {
      return detail::weighted_sum(t, affine(t, t.param("a", pm.at("a")), -1.7, 0.3), c);
    });
  });
  add_entry("op.abs", [] {
    Rng rng(105);
    ParamMap p{{"a", detail::suite_rand_away(rng, {3, 3}, 0.05)}};
    const Tensor<double> c = detail::suite_rand(rng, {3, 3}, -1, 1);
    return grad_check(p, [c](Tape<double>& t, const ParamMap& pm) {
      return detail::weighted_sum(t, abs_val(t, t.param("a", pm.at("a"))), c);
    });
  });
  add_entry("op.log", [] {
    Rng rng(106);
    ParamMap p{{"a", detail::suite_rand(rng, {3, 3}, 0.2, 2.0)}};
    const Tensor<double> c = detail::suite_rand(rng, {3, 3}, -1, 1);
    return grad_check(p, [c](Tape<double>& t, const ParamMap& pm) {
      return detail::weighted_sum(t, log_val(t, t.param("a", pm.at("a"))), c);
    });
  });
  add_entry("op.sqrt", [] {
    Rng rng(107);
    ParamMap p{{"a", detail::suite_rand(rng, {3, 3}, 0.2, 2.0)}};
    const Tensor<double> c = detail::suite_rand(rng, {3, 3}, -1, 1);
    return grad_check(p, [c](Tape<double>& t, const ParamMap& pm) {
      return detail::weighted_sum(t, sqrt_val(t, t.param("a", pm.at("a"))), c);
    });
  });
  add_entry("op.clamp", [] {
    Rng rng(108);
    // interior points only; the step never reaches the clamp boundary
    ParamMap p{{"a", detail::suite_rand(rng, {4, 3}, -0.7, 0.7)}};
    const Tensor<double> c = detail::suite_rand(rng, {4, 3}, -1, 1);
    return grad_check(p, [c](Tape<double>& t, const ParamMap& pm) {
      return detail::weighted_sum(t, clamp(t, t.param("a", pm.at("a")), -0.8, 0.8), c);
    });
  });
  add_entry("op.sum", [] {
    Rng rng(109);
    ParamMap p{{"a", detail::suite_rand(rng, {2, 3, 2}, -1, 1)}};
    return grad_check(
        p, [](Tape<double>& t, const ParamMap& pm) { return sum(t, t.param("a", pm.at("a"))); });
  });
  add_entry("op.mean", [] {
    Rng rng(110);
    ParamMap p{{"a", detail::suite_rand(rng, {7}, -1, 1)}};
    return grad_check(
        p, [](Tape<double>& t, const ParamMap& pm) { return mean(t, t.param("a", pm.at("a"))); });
  });
  add_entry("op.row_sum", [] {
    Rng rng(111);
    ParamMap p{{"a", detail::suite_rand(rng, {3, 4}, -1, 1)}};
    const Tensor<double> c = detail::suite_rand(rng, {3}, -1, 1);
    return grad_check(p, [c](Tape<double>& t, const ParamMap& pm) {
      return detail::weighted_sum(t, row_sum(t, t.param("a", pm.at("a"))), c);
    });
  });
  add_entry("op.reshape", [] {
    Rng rng(112);
    ParamMap p{{"a", detail::suite_rand(rng, {2, 6}, -1, 1)}};
    const Tensor<double> c = detail::suite_rand(rng, {3, 4}, -1, 1);
    return grad_check(p, [c](Tape<double>& t, const ParamMap& pm) {
      return detail::weighted_sum(t, reshape(t, t.param("a", pm.at("a")), {3, 4}), c);
    });
  });
  add_entry("op.concat_channels", [] {
    Rng rng(113);
    ParamMap p{{"a", detail::suite_rand(rng, {2, 2, 3, 3}, -1, 1)},
               {"b", detail::suite_rand(rng, {2, 3, 3, 3}, -1, 1)}};
    const Tensor<double> c = detail::suite_rand(rng, {2, 5, 3, 3}, -1, 1);
    return grad_check(p, [c](Tape<double>& t, const ParamMap& pm) {
      return detail::weighted_sum(
          t, concat_channels(t, t.param("a", pm.at("a")), t.param("b", pm.at("b"))), c);
    });
  });

  // ---- activations ----
  add_entry("op.relu", [] {
    Rng rng(114);
    ParamMap p{{"a", detail::suite_rand_away(rng, {4, 4}, 0.05)}};
    const Tensor<double> c = detail::suite_rand(rng, {4, 4}, -1, 1);
    return grad_check(p, [c](Tape<double>& t, const ParamMap& pm) {
      return detail::weighted_sum(t, relu(t, t.param("a", pm.at("a"))), c);
    });
  });
  add_entry("op.leaky_relu", [] {
    Rng rng(115);
    ParamMap p{{"a", detail::suite_rand_away(rng, {4, 4}, 0.05)}};
    const Tensor<double> c = detail::suite_rand(rng, {4, 4}, -1, 1);
    return grad_check(p, [c](Tape<double>& t, const ParamMap& pm) {
      return detail::weighted_sum(t, leaky_relu(t, t.param("a", pm.at("a")), 0.2), c);
    });
  });
  add_entry("op.sigmoid", [] {
    Rng rng(116);
    ParamMap p{{"a", detail::suite_rand(rng, {4, 4}, -2, 2)}};
    const Tensor<double> c = detail::suite_rand(rng, {4, 4}, -1, 1);
    return grad_check(p, [c](Tape<double>& t, const ParamMap& pm) {
      return detail::weighted_sum(t, sigmoid(t, t.param("a", pm.at("a"))), c);
    });
  });

  // ---- structured layers ----
  add_entry("op.fully_connected", [] {
    Rng rng(117);
    ParamMap p{{"x", detail::suite_rand(rng, {3, 4}, -1, 1)},
               {"w", detail::suite_rand(rng, {4, 5}, -1, 1)},
               {"b", detail::suite_rand(rng, {5}, -1, 1)}};
    const Tensor<double> c = detail::suite_rand(rng, {3, 5}, -1, 1);
    return grad_check(p, [c](Tape<double>& t, const ParamMap& pm) {
      return detail::weighted_sum(t,
                                  fully_connected(t, t.param("x", pm.at("x")),
                                                  t.param("w", pm.at("w")), t.param("b", pm.at("b"))),
                                  c);
    });
  });
  add_entry("op.global_avg_pool", [] {
    Rng rng(118);
    ParamMap p{{"x", detail::suite_rand(rng, {2, 3, 4, 4}, -1, 1)}};
    const Tensor<double> c = detail::suite_rand(rng, {2, 3}, -1, 1);
    return grad_check(p, [c](Tape<double>& t, const ParamMap& pm) {
      return detail::weighted_sum(t, global_avg_pool(t, t.param("x", pm.at("x"))), c);
    });
  });
  add_entry("op.conv2d_s1", [] {
    Rng rng(119);
    ParamMap p{{"x", detail::suite_rand(rng, {2, 3, 6, 6}, -1, 1)},
               {"w", detail::suite_rand(rng, {4, 3, 3, 3}, -0.5, 0.5)},
               {"b", detail::suite_rand(rng, {4}, -0.5, 0.5)}};
    const Tensor<double> c = detail::suite_rand(rng, {2, 4, 6, 6}, -1, 1);
    return grad_check(p, [c](Tape<double>& t, const ParamMap& pm) {
      return detail::weighted_sum(t,
                                  conv2d(t, t.param("x", pm.at("x")), t.param("w", pm.at("w")),
                                         t.param("b", pm.at("b")), 1, 1),
                                  c);
    });
  });
  add_entry("op.conv2d_s2", [] {
    Rng rng(120);
    ParamMap p{{"x", detail::suite_rand(rng, {2, 3, 8, 8}, -1, 1)},
               {"w", detail::suite_rand(rng, {4, 3, 3, 3}, -0.5, 0.5)},
               {"b", detail::suite_rand(rng, {4}, -0.5, 0.5)}};
    const Tensor<double> c = detail::suite_rand(rng, {2, 4, 4, 4}, -1, 1);
    return grad_check(p, [c](Tape<double>& t, const ParamMap& pm) {
      return detail::weighted_sum(t,
                                  conv2d(t, t.param("x", pm.at("x")), t.param("w", pm.at("w")),
                                         t.param("b", pm.at("b")), 2, 1),
                                  c);
    });
  });
  add_entry("op.conv2d_transpose", [] {
    Rng rng(121);
    ParamMap p{{"x", detail::suite_rand(rng, {2, 4, 4, 4}, -1, 1)},
               {"w", detail::suite_rand(rng, {4, 3, 3, 3}, -0.5, 0.5)},
               {"b", detail::suite_rand(rng, {3}, -0.5, 0.5)}};
    const Tensor<double> c = detail::suite_rand(rng, {2, 3, 8, 8}, -1, 1);
    return grad_check(p, [c](Tape<double>& t, const ParamMap& pm) {
      return detail::weighted_sum(t,
                                  conv2d_transpose(t, t.param("x", pm.at("x")),
                                                   t.param("w", pm.at("w")), t.param("b", pm.at("b")),
                                                   2, 1, 1),
                                  c);
    });
  });
  add_entry("op.batchnorm_train", [] {
    Rng rng(122);
    ParamMap p{{"x", detail::suite_rand(rng, {4, 3, 4, 4}, -1, 1)},
               {"g", detail::suite_rand(rng, {3}, 0.5, 1.5)},
               {"b", detail::suite_rand(rng, {3}, -0.5, 0.5)}};
    const Tensor<double> c = detail::suite_rand(rng, {4, 3, 4, 4}, -1, 1);
    return grad_check(p, [c](Tape<double>& t, const ParamMap& pm) {
      // fresh running buffers each call so the builder stays pure
      auto rm = Tensor<double>::zeros({3});
      auto rv = Tensor<double>::full({3}, 1.0);
      return detail::weighted_sum(t,
                                  batchnorm2d(t, t.param("x", pm.at("x")), t.param("g", pm.at("g")),
                                              t.param("b", pm.at("b")), rm, rv, true, false),
                                  c);
    });
  });
  add_entry("op.batchnorm_eval", [] {
    Rng rng(123);
    ParamMap p{{"x", detail::suite_rand(rng, {4, 3, 4, 4}, -1, 1)},
               {"g", detail::suite_rand(rng, {3}, 0.5, 1.5)},
               {"b", detail::suite_rand(rng, {3}, -0.5, 0.5)}};
    const Tensor<double> c = detail::suite_rand(rng, {4, 3, 4, 4}, -1, 1);
    Tensor<double> rm = detail::suite_rand(rng, {3}, -0.3, 0.3);
    Tensor<double> rv = detail::suite_rand(rng, {3}, 0.8, 1.4);
    return grad_check(p, [c, rm, rv](Tape<double>& t, const ParamMap& pm) {
      Tensor<double> rmc = rm, rvc = rv;
      return detail::weighted_sum(t,
                                  batchnorm2d(t, t.param("x", pm.at("x")), t.param("g", pm.at("g")),
                                              t.param("b", pm.at("b")), rmc, rvc, false, false),
                                  c);
    });
  });

  // ---- losses ----
  add_entry("loss.critic_adversarial", [] {
    Rng rng(124);
    ParamMap p{{"real", detail::suite_rand(rng, {5}, 0.15, 0.85)},
               {"fake", detail::suite_rand(rng, {5}, 0.15, 0.85)}};
    return grad_check(p, [](Tape<double>& t, const ParamMap& pm) {
      return loss_disc_adv(t, t.param("real", pm.at("real")), t.param("fake", pm.at("fake")));
    });
  });
  add_entry("loss.generator_adversarial", [] {
    Rng rng(125);
    ParamMap p{{"fake", detail::suite_rand(rng, {5}, 0.15, 0.85)}};
    return grad_check(p, [](Tape<double>& t, const ParamMap& pm) {
      return loss_gen_adv(t, t.param("fake", pm.at("fake")));
    });
  });
  add_entry("loss.completion", [] {
    Rng rng(126);
    ParamMap p{{"gen", detail::suite_rand(rng, {2, 3, 6, 6}, 0.05, 0.95)},
               {"orig", detail::suite_rand(rng, {2, 3, 6, 6}, 0.05, 0.95)}};
    const Tensor<double> mask = detail::suite_binary(rng, {2, 3, 6, 6}, 0.6);
    return grad_check(p, [mask](Tape<double>& t, const ParamMap& pm) {
      return loss_completion(t, t.param("gen", pm.at("gen")), t.param("orig", pm.at("orig")),
                             t.constant(mask));
    });
  });
  add_entry("loss.reconstruction", [] {
    Rng rng(127);
    ParamMap p{{"gen", detail::suite_rand(rng, {2, 3, 6, 6}, 0.05, 0.95)},
               {"orig", detail::suite_rand(rng, {2, 3, 6, 6}, 0.05, 0.95)}};
    const Tensor<double> mask = detail::suite_binary(rng, {2, 3, 6, 6}, 0.6);
    return grad_check(p, [mask](Tape<double>& t, const ParamMap& pm) {
      return loss_reconstruction(t, t.param("gen", pm.at("gen")), t.param("orig", pm.at("orig")),
                                 t.constant(mask));
    });
  });
  add_entry("loss.perceptual", [] {
    Rng rng(128);
    ParamMap p{{"gen", detail::suite_rand(rng, {2, 3, 8, 8}, 0.05, 0.95)},
               {"orig", detail::suite_rand(rng, {2, 3, 8, 8}, 0.05, 0.95)}};
    Rng fe_rng(4280);
    const FeatureExtractor<double> fe = build_feature_extractor<double>(2, 2, fe_rng);
    return grad_check(p, [fe](Tape<double>& t, const ParamMap& pm) {
      return loss_perceptual(t, t.param("gen", pm.at("gen")), t.param("orig", pm.at("orig")), fe,
                             {1.0, 0.5});
    });
  });
  add_entry("loss.box_regression_l1", [] {
    Rng rng(129);
    // offsets bounded away from zero so |·| stays differentiable under the step
    ParamMap p{{"pred", detail::suite_rand(rng, {2, 3, 4}, 0.3, 0.45)},
               {"target", detail::suite_rand(rng, {2, 3, 4}, 0.55, 0.7)}};
    return grad_check(p, [](Tape<double>& t, const ParamMap& pm) {
      return loss_box_regression(t, t.param("pred", pm.at("pred")),
                                 t.param("target", pm.at("target")), HnsNorm::L1);
    });
  });
  add_entry("loss.box_regression_l2", [] {
    Rng rng(130);
    ParamMap p{{"pred", detail::suite_rand(rng, {2, 3, 4}, 0.3, 0.45)},
               {"target", detail::suite_rand(rng, {2, 3, 4}, 0.55, 0.7)}};
    return grad_check(p, [](Tape<double>& t, const ParamMap& pm) {
      return loss_box_regression(t, t.param("pred", pm.at("pred")),
                                 t.param("target", pm.at("target")), HnsNorm::L2);
    });
  });

  // ---- full composed objective through both networks ----
  add_entry("composed.total_objective", [] {
    ModelConfig mc;
    mc.width = 16;
    mc.height = 16;
    mc.base_width = 4;
    mc.depth = 2;
    mc.bottleneck = 16;

    Rng rng(131);
    Generator<double> proto_g = build_generator<double>(mc, rng);
    Discriminator<double> proto_d = build_discriminator<double>(mc, rng, true);
    Rng fe_rng(132);
    const FeatureExtractor<double> fe = build_feature_extractor<double>(2, 2, fe_rng);

    Rng data_rng(133);
    const Tensor<double> batch = detail::suite_rand(data_rng, {4, 3, 16, 16}, 0.05, 0.95);
    MaskBatch mb = make_mask(Task::RE, data_rng, 0.25, 16, 16, 4);
    const Tensor<double> mask = mb.mask.cast<double>();
    std::vector<std::array<ChannelBox, 3>> decoys;
    for (int i = 0; i < 4; ++i) decoys.push_back(sample_rec_boxes(data_rng, 0.25, 16, 16));

    LossWeights w;  // defaults: every term active

    ParamMap p;
    for (auto& [name, ptr] : proto_g.params()) p.emplace(name, *ptr);
    for (auto& [name, ptr] : proto_d.params()) p.emplace(name, *ptr);

    GradCheckOptions opt;
    opt.max_elements_per_param = 4;

    auto build = [mc, proto_g, proto_d, fe, batch, mask, decoys, w](Tape<double>& t,
                                                                    const ParamMap& pm) mutable {
      Generator<double> g = proto_g;
      for (auto& [name, ptr] : g.params()) *ptr = pm.at(name);
      Discriminator<double> d = proto_d;
      for (auto& [name, ptr] : d.params()) *ptr = pm.at(name);

      Var zv = t.constant(batch);
      Var mv = t.constant(mask);
      Var masked = mul(t, zv, mv);
      Var gout = generator_forward(t, g, masked, /*train=*/true, /*update_stats=*/false,
                                   Bind::Trainable);
      DiscOutput dout = discriminator_forward(t, d, gout, Bind::Trainable);

      Var rec = loss_reconstruction(t, gout, zv, mv);
      Var perc = loss_perceptual(t, gout, zv, fe, {1.0, 0.5});
      Var adv = loss_gen_adv(t, dout.realness);
      Var hns = loss_hns_gen(t, dout.boxes, decoys, 16, 16, HnsNorm::L1);
      return loss_total_gen(t, rec, perc, adv, hns, w);
    };
    return grad_check(p, build, opt);
  });

  return suite;
}

// Runs every entry, printing one verdict line per check. Returns true when
// all pass.
inline bool run_grad_suite(const std::vector<GradSuiteEntry>& suite, std::ostream& out) {
  bool all_pass = true;
  for (const auto& entry : suite) {
    const GradCheckReport rep = entry.run();
    if (rep.pass) {
      out << "[pass] " << entry.name << "  (max rel err " << rep.max_rel_err << " over "
          << rep.checked << " elements)\n";
    } else {
      all_pass = false;
      out << "[FAIL] " << entry.name << "  (max rel err " << rep.max_rel_err << " at "
          << rep.worst.name << "[" << rep.worst.index << "]: analytic " << rep.worst.analytic
          << ", numeric " << rep.worst.numeric << ")\n";
    }
  }
  out << (all_pass ? "gradient verification: all checks passed\n"
                   : "gradient verification: FAILURES detected\n");
  return all_pass;
}

}  // namespace mde
