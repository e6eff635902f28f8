#include "jmt/verify.hpp"

#include <cmath>
#include <cstdio>
#include <functional>

#include "jmt/backbones.hpp"
#include "jmt/fusion.hpp"
#include "jmt/metrics.hpp"

namespace jmt {

namespace {

constexpr double kGradTol = 1e-3;
constexpr int kGradSeeds = 10;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3e", v);
  return buf;
}

// Runs check_gradients over kGradSeeds random draws of x and returns the
// worst relative error.
double grad_check_err(
    const std::string& name, const Shape& x_shape, uint64_t seed,
    const std::function<std::function<Tensor(const Tensor&)>(Rng&)>& make_f) {
  double worst = 0.0;
  for (int s = 0; s < kGradSeeds; ++s) {
    Rng rng(derive_seed(seed, name + ":" + std::to_string(s)));
    auto f = make_f(rng);
    Tensor x = Tensor::uniform(x_shape, -1.0, 1.0, rng, true);
    worst = std::max(worst, check_gradients(f, x));
  }
  return worst;
}

CheckResult check_op_gradients(uint64_t seed) {
  double worst = 0.0;
  std::string worst_op;
  auto probe = [&](const std::string& op, const Shape& shape,
                   const std::function<std::function<Tensor(const Tensor&)>(Rng&)>&
                       make_f) {
    double err = grad_check_err(op, shape, seed, make_f);
    if (err > worst) {
      worst = err;
      worst_op = op;
    }
  };

  probe("add", {3, 4}, [](Rng& rng) {
    Tensor other = Tensor::uniform({3, 4}, -1, 1, rng);
    return [other](const Tensor& x) { return sum_all(add(x, other)); };
  });
  probe("sub_mul", {3, 4}, [](Rng& rng) {
    Tensor other = Tensor::uniform({3, 4}, -1, 1, rng);
    return [other](const Tensor& x) {
      return sum_all(mul(sub(x, other), x));
    };
  });
  probe("div", {6}, [](Rng& rng) {
    Tensor denom = Tensor::uniform({6}, 1.5, 2.5, rng);
    return [denom](const Tensor& x) { return sum_all(div(x, denom)); };
  });
  probe("relu_scalar_ops", {5, 3}, [](Rng&) {
    return [](const Tensor& x) {
      return mean_all(relu(add_scalar(mul_scalar(x, 1.7), 0.1)));
    };
  });
  probe("exp", {4}, [](Rng&) {
    return [](const Tensor& x) { return sum_all(jmt::exp(x)); };
  });
  probe("matmul", {4, 5}, [](Rng& rng) {
    Tensor b = Tensor::uniform({5, 6}, -1, 1, rng);
    return [b](const Tensor& x) { return sum_all(mul(matmul(x, b), matmul(x, b))); };
  });
  probe("transpose_reshape", {3, 4}, [](Rng&) {
    return [](const Tensor& x) {
      return sum_all(mul(reshape(transpose(x), {2, 6}),
                         reshape(transpose(x), {2, 6})));
    };
  });
  probe("concat_slice", {3, 4}, [](Rng& rng) {
    Tensor other = Tensor::uniform({2, 4}, -1, 1, rng);
    return [other](const Tensor& x) {
      Tensor c = concat({x, other}, 0);
      return sum_all(mul(slice(c, 0, 1, 4), slice(c, 0, 0, 3)));
    };
  });
  probe("softmax", {3, 5}, [](Rng&) {
    return [](const Tensor& x) {
      Tensor s = softmax(x, 1);
      return sum_all(mul(s, s));
    };
  });
  probe("mean_variance_axis", {4, 3}, [](Rng&) {
    return [](const Tensor& x) {
      return add(sum_all(variance_axis(x, 0)), sum_all(mean_axis(x, 1)));
    };
  });
  probe("add_bias", {3, 4}, [](Rng& rng) {
    Tensor b = Tensor::uniform({4}, -1, 1, rng, true);
    return [b](const Tensor& x) { return sum_all(mul(add_bias(x, b), x)); };
  });
  probe("dropout", {6, 4}, [](Rng& rng) {
    uint64_t mask_seed = rng();
    return [mask_seed](const Tensor& x) {
      Rng mask_rng(mask_seed);  // fixed stream keeps f deterministic
      return sum_all(dropout(x, 0.3, true, mask_rng));
    };
  });
  probe("im2col_maxpool", {10, 2}, [](Rng&) {
    return [](const Tensor& x) {
      return add(sum_all(im2col1d(x, 3, 2)), sum_all(maxpool1d(x, 2, 2)));
    };
  });
  probe("layer_norm", {3, 6}, [](Rng& rng) {
    Tensor gain = Tensor::uniform({6}, 0.5, 1.5, rng, true);
    Tensor shift = Tensor::uniform({6}, -0.5, 0.5, rng, true);
    return [gain, shift](const Tensor& x) {
      Tensor y = layer_norm(x, gain, shift, 1e-5);
      return sum_all(mul(y, y));
    };
  });
  probe("cross_entropy", {4, 3}, [](Rng&) {
    return [](const Tensor& x) { return cross_entropy(x, {0, 2, 1, 0}); };
  });
  probe("ccc_loss", {8}, [](Rng& rng) {
    Tensor target = Tensor::uniform({8}, -1, 1, rng);
    return [target](const Tensor& x) { return ccc_loss(x, target); };
  });

  return {"grad/elementwise_suite", worst < kGradTol,
          "max_rel_err=" + fmt(worst) + " (" + worst_op + ")"};
}

CheckResult check_layer_gradients(uint64_t seed) {
  double worst = 0.0;
  std::string worst_layer;
  auto track = [&](const std::string& name, double err) {
    if (err > worst) {
      worst = err;
      worst_layer = name;
    }
  };

  for (int s = 0; s < kGradSeeds; ++s) {
    Rng rng(derive_seed(seed, "layers:" + std::to_string(s)));
    {
      Linear lin(5, 3, rng);
      Tensor x = Tensor::uniform({4, 5}, -1, 1, rng, true);
      track("linear", check_gradients(
                          [&](const Tensor& t) {
                            return sum_all(mul(lin.forward(t), lin.forward(t)));
                          },
                          x));
      track("linear/weight",
            check_gradients(
                [&](const Tensor&) { return sum_all(lin.forward(x)); },
                lin.weight()));
    }
    {
      Conv1d conv(2, 3, 3, 2, rng);
      Tensor x = Tensor::uniform({9, 2}, -1, 1, rng, true);
      track("conv1d", check_gradients(
                          [&](const Tensor& t) {
                            Tensor y = conv.forward(t);
                            return sum_all(mul(y, y));
                          },
                          x));
    }
    {
      MultiHeadAttention mha(8, 2, ScalingVariant::SqrtDk, rng);
      Tensor q = Tensor::uniform({4, 8}, -1, 1, rng, true);
      Tensor kv = Tensor::uniform({5, 8}, -1, 1, rng);
      track("attention",
            check_gradients(
                [&](const Tensor& t) {
                  Tensor y = mha.forward(t, kv);
                  return sum_all(mul(y, y));
                },
                q));
      track("attention/wv",
            check_gradients(
                [&](const Tensor&) { return sum_all(mha.forward(q, kv)); },
                mha.wv()));
    }
    {
      Rng block_rng(derive_seed(seed, "block:" + std::to_string(s)));
      EncoderBlock block(8, 2, 8, ScalingVariant::SqrtDk, 0.0, block_rng);
      Tensor x = Tensor::uniform({3, 8}, -1, 1, block_rng, true);
      Rng fwd(0);
      track("encoder_block",
            check_gradients(
                [&](const Tensor& t) {
                  Tensor y = block.forward(t, false, fwd);
                  return sum_all(mul(y, y));
                },
                x));
    }
  }
  return {"grad/layers", worst < kGradTol,
          "max_rel_err=" + fmt(worst) + " (" + worst_layer + ")"};
}

CheckResult check_end_to_end(uint64_t seed) {
  FusionConfig cfg;
  cfg.model_dim = 16;
  cfg.num_heads = 2;
  cfg.head_output_dim = 2;
  Rng rng(derive_seed(seed, "e2e"));
  JointFusionModel model(cfg, rng);
  Tensor fb = Tensor::uniform({4, 16}, -1, 1, rng);
  Tensor target = Tensor::uniform({4, 2}, -1, 1, rng);
  Tensor fa = Tensor::uniform({4, 16}, -1, 1, rng, true);
  cfg.prediction = PredictionMode::PerClip;

  Rng fwd(0);
  auto loss_fn = [&](const Tensor& t) {
    Tensor pred = model.forward(t, fb, false, fwd);
    return ccc_loss(reshape(pred, {pred.numel() / 2, 2}), target);
  };
  double input_err = check_gradients(loss_fn, fa);

  double param_err = 0.0;
  auto params = model.named_parameters();
  for (auto& [name, param] : params) {
    double err = check_gradients(
        [&](const Tensor&) {
          Tensor pred = model.forward(fa, fb, false, fwd);
          return ccc_loss(reshape(pred, {pred.numel() / 2, 2}), target);
        },
        param, 1e-4, 6, derive_seed(seed, name));
    param_err = std::max(param_err, err);
  }
  double worst = std::max(input_err, param_err);
  return {"grad/jmt_ccc_end_to_end", worst < kGradTol,
          "max_rel_err=" + fmt(worst)};
}

CheckResult check_softmax_properties(uint64_t seed) {
  double worst = 0.0;
  for (int s = 0; s < 50; ++s) {
    Rng rng(derive_seed(seed, "softmax:" + std::to_string(s)));
    Tensor x = Tensor::uniform({4, 7}, -30, 30, rng);
    Tensor y = softmax(x, 1);
    for (int64_t i = 0; i < 4; ++i) {
      double sum = 0.0;
      for (int64_t j = 0; j < 7; ++j) {
        if (y.at(i, j) < 0.0) worst = 1.0;
        sum += y.at(i, j);
      }
      worst = std::max(worst, std::fabs(sum - 1.0));
    }
  }
  return {"softmax/rows_sum_to_one", worst < 1e-9, "max_dev=" + fmt(worst)};
}

CheckResult check_attention_properties(uint64_t seed) {
  double worst_sum = 0.0, worst_perm = 0.0;
  for (int s = 0; s < 25; ++s) {
    Rng rng(derive_seed(seed, "attn:" + std::to_string(s)));
    int64_t d = 8;
    int heads = (s % 2) ? 2 : 4;
    MultiHeadAttention mha(d, heads,
                           (s % 3) ? ScalingVariant::SqrtDk : ScalingVariant::Dk,
                           rng);
    int64_t tq = 2 + (s % 3), tk = 2 + (s % 4);
    Tensor q = Tensor::uniform({tq, d}, -1, 1, rng);
    Tensor kv = Tensor::uniform({tk, d}, -1, 1, rng);
    std::vector<Tensor> weights;
    Tensor out = mha.forward(q, kv, &weights);
    for (const auto& w : weights)
      for (int64_t i = 0; i < tq; ++i) {
        double sum = 0.0;
        for (int64_t j = 0; j < tk; ++j) sum += w.at(i, j);
        worst_sum = std::max(worst_sum, std::fabs(sum - 1.0));
      }
    // Key/value row permutation must not change the output.
    std::vector<int64_t> perm(tk);
    for (int64_t i = 0; i < tk; ++i) perm[i] = (i + 1) % tk;
    std::vector<double> permuted(tk * d);
    for (int64_t i = 0; i < tk; ++i)
      for (int64_t j = 0; j < d; ++j)
        permuted[i * d + j] = kv.at(perm[i], j);
    Tensor kv_perm = Tensor::from_data({tk, d}, std::move(permuted));
    Tensor out_perm = mha.forward(q, kv_perm);
    for (int64_t i = 0; i < out.numel(); ++i)
      worst_perm =
          std::max(worst_perm, std::fabs(out.at(i / d, i % d) -
                                         out_perm.at(i / d, i % d)));
  }
  bool ok = worst_sum < 1e-9 && worst_perm < 1e-10;
  return {"attention/rows_and_permutation", ok,
          "row_dev=" + fmt(worst_sum) + " perm_dev=" + fmt(worst_perm)};
}

CheckResult check_phys_cnn_trace(uint64_t seed) {
  Rng rng(derive_seed(seed, "phys"));
  Phys1DCNN cnn(rng);
  Tensor x = Tensor::uniform({Phys1DCNN::kInputLength, 1}, -1, 1, rng);
  std::vector<Shape> trace;
  cnn.forward(x, Phys1DCNN::Output::Logits, &trace);
  const std::vector<Shape> expected = {
      {2816, 1}, {1406, 32}, {1406, 32}, {703, 32}, {699, 64},
      {699, 64}, {349, 64},  {512},      {2}};
  bool ok = trace == expected;
  return {"backbone/table_shape_trace", ok,
          ok ? "2816x1 -> 1406x32 -> 703x32 -> 699x64 -> 349x64 -> 512 -> 2"
         : "unexpected trace"};
}

CheckResult check_ccc_properties(uint64_t seed) {
  double worst = 0.0;
  for (int s = 0; s < 30; ++s) {
    Rng rng(derive_seed(seed, "ccc:" + std::to_string(s)));
    Tensor x = Tensor::uniform({32}, -1, 1, rng);
    Tensor y = Tensor::uniform({32}, -1, 1, rng);
    worst = std::max(worst, std::fabs(ccc(x, y) - ccc(y, x)));
    // Shared positive affine transforms leave CCC unchanged.
    std::uniform_real_distribution<double> scale(0.5, 2.0);
    double a = scale(rng), b = scale(rng) - 1.25;
    Tensor xs = add_scalar(mul_scalar(x, a), b);
    Tensor ys = add_scalar(mul_scalar(y, a), b);
    worst = std::max(worst, std::fabs(ccc(xs, ys) - ccc(x, y)));
    worst = std::max(worst, std::fabs(ccc(x, x) - 1.0));
  }
  // Stationary at perfection: gradient of the loss at pred == target.
  Rng rng(derive_seed(seed, "ccc:grad"));
  Tensor target = Tensor::uniform({16}, -1, 1, rng);
  Tensor pred = Tensor::from_data({16}, target.data(), true);
  ccc_loss(pred, target).backward();
  double grad_norm = 0.0;
  for (double g : pred.grad()) grad_norm += g * g;
  grad_norm = std::sqrt(grad_norm);
  bool ok = worst < 1e-12 && grad_norm < 1e-8;
  return {"ccc/identities", ok,
          "max_dev=" + fmt(worst) + " grad_norm_at_perfect=" + fmt(grad_norm)};
}

CheckResult check_finite_forward(uint64_t seed) {
  for (int s = 0; s < 40; ++s) {
    Rng rng(derive_seed(seed, "finite:" + std::to_string(s)));
    FusionConfig cfg;
    cfg.model_dim = 8 * (1 + s % 3);
    cfg.num_heads = (s % 2) ? 2 : 4;
    cfg.aggregation = (s % 3) ? AggregationMode::SelfAttentionStack
                              : AggregationMode::ConcatFc;
    cfg.prediction =
        (s % 2) ? PredictionMode::PerClip : PredictionMode::Pooled;
    cfg.head_output_dim = 2;
    auto model = make_model(static_cast<ModelKind>(s % 5), cfg, rng);
    int64_t t = 1 + s % 5;
    Tensor fa = Tensor::uniform({t, cfg.model_dim}, -3, 3, rng);
    Tensor fb = Tensor::uniform({t, cfg.model_dim}, -3, 3, rng);
    Rng fwd(0);
    Tensor out = model->forward(fa, fb, false, fwd);
    for (double v : out.data())
      if (!std::isfinite(v))
        return {"fusion/finite_forward", false,
                "non-finite output in case " + std::to_string(s)};
  }
  return {"fusion/finite_forward", true, "40 random configs"};
}

}  // namespace

std::vector<CheckResult> run_verification(uint64_t seed) {
  std::vector<CheckResult> results;
  results.push_back(check_op_gradients(seed));
  results.push_back(check_layer_gradients(seed));
  results.push_back(check_end_to_end(seed));
  results.push_back(check_softmax_properties(seed));
  results.push_back(check_attention_properties(seed));
  results.push_back(check_phys_cnn_trace(seed));
  results.push_back(check_ccc_properties(seed));
  results.push_back(check_finite_forward(seed));
  return results;
}

}  // namespace jmt
