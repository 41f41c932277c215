// SPDX-License-Identifier: Apache-2.0
#include "gradient_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "tractseg/losses.hpp"
#include "tractseg/ops.hpp"

namespace ref {

namespace {

using tractseg::Tensor;
using LibFn = std::function<Tensor(const std::vector<Tensor>&)>;
using RefFn = std::function<double(const std::vector<Array>&)>;

GradCheck merge(GradCheck a, const GradCheck& b) {
  if (a.failures == 0 && b.failures > 0) a.first_failure = b.first_failure;
  a.failures += b.failures;
  a.checked += b.checked;
  a.worst_excess = std::max(a.worst_excess, b.worst_excess);
  return a;
}

GradCheck check_all(const std::vector<Array>& inputs, const std::vector<bool>& differentiable,
                    const LibFn& lib, const RefFn& oracle) {
  std::vector<Tensor> ts;
  for (std::size_t i = 0; i < inputs.size(); ++i) ts.push_back(to_tensor(inputs[i], differentiable[i]));
  tractseg::backward(lib(ts));
  GradCheck all;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!differentiable[i]) continue;
    const auto g = ts[i].grad();
    std::vector<float> analytic(g.begin(), g.end());
    GradCheck r = check_gradient(analytic, inputs[i], [&](const Array& xi) {
      auto in = inputs;
      in[i] = xi;
      return oracle(in);
    });
    if (!r.ok()) r.first_failure = "input " + std::to_string(i) + ", " + r.first_failure;
    all = merge(all, r);
  }
  return all;
}

/// sum(R * op(...)) so every output element carries a distinct weight.
Tensor weighted(const Tensor& out, const Array& r) { return tractseg::sum(tractseg::mul(out, to_tensor(r))); }

double weighted(const Array& out, const Array& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.v.size(); ++i) s += out.v[i] * r.v[i];
  return s;
}

/// Values in [lo, hi] kept at least `gap` away from zero.
Array away_from_zero(std::vector<std::size_t> shape, std::mt19937_64& rng, double gap) {
  Array a = random_array(std::move(shape), rng);
  for (auto& x : a.v) {
    if (std::abs(x) < gap) x = static_cast<float>(x < 0 ? x - 2 * gap : x + 2 * gap);
  }
  return a;
}

/// Distinct values so no 2x2 window has a near-tie.
Array distinct_values(std::vector<std::size_t> shape, std::mt19937_64& rng) {
  Array a(std::move(shape));
  std::vector<double> vals(a.v.size());
  for (std::size_t i = 0; i < vals.size(); ++i) {
    vals[i] = static_cast<float>(-2.0 + 4.0 * static_cast<double>(i) / static_cast<double>(vals.size()));
  }
  std::shuffle(vals.begin(), vals.end(), rng);
  a.v = vals;
  return a;
}

Array probabilities(std::vector<std::size_t> shape, std::mt19937_64& rng) {
  return random_array(std::move(shape), rng, 0.05, 0.95);
}

using Trial = std::function<GradCheck(std::mt19937_64&)>;

OpResult run(const std::string& name, std::size_t trials, std::mt19937_64& rng, const Trial& trial) {
  OpResult r;
  r.op = name;
  r.trials = trials;
  r.worst_excess = -1.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const GradCheck g = trial(rng);
    r.worst_excess = std::max(r.worst_excess, g.worst_excess);
    if (!g.ok()) {
      if (r.failures == 0) r.detail = "trial " + std::to_string(t) + ": " + g.first_failure;
      ++r.failures;
    }
  }
  return r;
}

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
}

}  // namespace

std::vector<OpResult> gradient_suite(std::size_t trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<OpResult> out;

  out.push_back(run("conv2d", trials, rng, [](std::mt19937_64& g) {
    const std::size_t cin = pick(g, 1, 3), cout = pick(g, 1, 3), stride = pick(g, 1, 2), pad = pick(g, 0, 1);
    const std::size_t hw = pick(g, 4, 6);
    Array x = random_array({2, cin, hw, hw}, g), w = random_array({cout, cin, 3, 3}, g),
          b = random_array({cout}, g);
    const std::size_t o = (hw + 2 * pad - 3) / stride + 1;
    Array r = random_array({2, cout, o, o}, g);
    return check_all(
        {x, w, b}, {true, true, true},
        [&](const std::vector<Tensor>& t) { return weighted(tractseg::conv2d(t[0], t[1], t[2], {stride, pad, 1}), r); },
        [&](const std::vector<Array>& a) { return weighted(conv2d(a[0], a[1], &a[2], stride, pad), r); });
  }));

  out.push_back(run("conv2d_grouped", trials, rng, [](std::mt19937_64& g) {
    const std::size_t groups = pick(g, 2, 3);
    Array x = random_array({1, groups, 5, 5}, g), w = random_array({groups, 1, 3, 3}, g);
    Array r = random_array({1, groups, 5, 5}, g);
    return check_all(
        {x, w}, {true, true},
        [&](const std::vector<Tensor>& t) { return weighted(tractseg::conv2d(t[0], t[1], Tensor{}, {1, 1, groups}), r); },
        [&](const std::vector<Array>& a) { return weighted(conv2d(a[0], a[1], nullptr, 1, 1, groups), r); });
  }));

  out.push_back(run("conv_transpose2d", trials, rng, [](std::mt19937_64& g) {
    const std::size_t cin = pick(g, 1, 3), cout = pick(g, 1, 3), stride = pick(g, 1, 2), k = pick(g, 1, 3);
    const std::size_t hw = pick(g, 2, 4);
    Array x = random_array({2, cin, hw, hw}, g), w = random_array({cin, cout, k, k}, g);
    const std::size_t o = (hw - 1) * stride + k;
    Array r = random_array({2, cout, o, o}, g);
    return check_all(
        {x, w}, {true, true},
        [&](const std::vector<Tensor>& t) { return weighted(tractseg::conv_transpose2d(t[0], t[1], stride), r); },
        [&](const std::vector<Array>& a) { return weighted(conv_transpose2d(a[0], a[1], stride), r); });
  }));

  out.push_back(run("maxpool2d", trials, rng, [](std::mt19937_64& g) {
    Array x = distinct_values({2, 2, 4, 6}, g);
    Array r = random_array({2, 2, 2, 3}, g);
    return check_all(
        {x}, {true}, [&](const std::vector<Tensor>& t) { return weighted(tractseg::maxpool2d(t[0]), r); },
        [&](const std::vector<Array>& a) { return weighted(maxpool2d(a[0]), r); });
  }));

  out.push_back(run("relu", trials, rng, [](std::mt19937_64& g) {
    Array x = away_from_zero({2, 3, 4, 4}, g, 5e-3);
    Array r = random_array({2, 3, 4, 4}, g);
    return check_all(
        {x}, {true}, [&](const std::vector<Tensor>& t) { return weighted(tractseg::relu(t[0]), r); },
        [&](const std::vector<Array>& a) { return weighted(relu(a[0]), r); });
  }));

  out.push_back(run("sigmoid", trials, rng, [](std::mt19937_64& g) {
    Array x = random_array({2, 3, 4, 4}, g);
    Array r = random_array({2, 3, 4, 4}, g);
    return check_all(
        {x}, {true}, [&](const std::vector<Tensor>& t) { return weighted(tractseg::sigmoid(t[0]), r); },
        [&](const std::vector<Array>& a) { return weighted(sigmoid(a[0]), r); });
  }));

  out.push_back(run("concat_channels", trials, rng, [](std::mt19937_64& g) {
    const std::size_t ca = pick(g, 1, 3), cb = pick(g, 1, 3);
    Array a0 = random_array({2, ca, 3, 4}, g), b0 = random_array({2, cb, 3, 4}, g);
    Array r = random_array({2, ca + cb, 3, 4}, g);
    return check_all(
        {a0, b0}, {true, true},
        [&](const std::vector<Tensor>& t) { return weighted(tractseg::concat_channels(t[0], t[1]), r); },
        [&](const std::vector<Array>& a) { return weighted(concat_channels(a[0], a[1]), r); });
  }));

  out.push_back(run("batchnorm2d", trials, rng, [](std::mt19937_64& g) {
    const std::size_t c = pick(g, 1, 3);
    Array x = random_array({2, c, 3, 3}, g), gamma = random_array({c}, g, 0.5, 1.5), beta = random_array({c}, g);
    Array r = random_array({2, c, 3, 3}, g);
    return check_all(
        {x, gamma, beta}, {true, true, true},
        [&](const std::vector<Tensor>& t) {
          auto stats = tractseg::RunningStats::init(c);
          return weighted(tractseg::batchnorm2d(t[0], t[1], t[2], stats, true), r);
        },
        [&](const std::vector<Array>& a) { return weighted(batchnorm_train(a[0], a[1], a[2]), r); });
  }));

  out.push_back(run("batchnorm2d_eval", trials, rng, [](std::mt19937_64& g) {
    const std::size_t c = pick(g, 1, 3);
    Array x = random_array({2, c, 3, 3}, g), gamma = random_array({c}, g, 0.5, 1.5), beta = random_array({c}, g);
    Array mean = random_array({c}, g), var = random_array({c}, g, 0.5, 2.0);
    Array r = random_array({2, c, 3, 3}, g);
    return check_all(
        {x, gamma, beta}, {true, true, true},
        [&](const std::vector<Tensor>& t) {
          tractseg::RunningStats stats{to_tensor(mean), to_tensor(var)};
          return weighted(tractseg::batchnorm2d(t[0], t[1], t[2], stats, false), r);
        },
        [&](const std::vector<Array>& a) { return weighted(batchnorm_eval(a[0], a[1], a[2], mean, var), r); });
  }));

  auto loss_trial = [&](const std::string& name, std::function<Tensor(const Tensor&, const Tensor&)> lib,
                        std::function<double(const Array&, const Array&)> oracle) {
    out.push_back(run(name, trials, rng, [&](std::mt19937_64& g) {
      Array p = probabilities({2, 3, 4, 4}, g), t = random_binary({2, 3, 4, 4}, g);
      return check_all(
          {p, t}, {true, false}, [&](const std::vector<Tensor>& ts) { return lib(ts[0], ts[1]); },
          [&](const std::vector<Array>& a) { return oracle(a[0], a[1]); });
    }));
  };

  loss_trial("bce", [](const Tensor& p, const Tensor& t) { return tractseg::bce(p, t); },
             [](const Array& p, const Array& t) { return bce(p, t); });
  loss_trial("iou_soft", [](const Tensor& p, const Tensor& t) { return tractseg::iou_soft(p, t); },
             [](const Array& p, const Array& t) { return iou_soft(p, t); });
  loss_trial("tversky_loss",
             [](const Tensor& p, const Tensor& t) { return tractseg::tversky_loss(p, t, 0.3f, 0.7f); },
             [](const Array& p, const Array& t) { return tversky(p, t, 0.3, 0.7); });

  const tractseg::LossTag tags[] = {tractseg::LossTag::IoULoss, tractseg::LossTag::BceTversky,
                                    tractseg::LossTag::IoUTversky};
  for (auto tag : tags) {
    tractseg::LossKind kind;
    kind.tag = tag;
    loss_trial("combined_loss/" + std::string(tractseg::to_string(tag)),
               [kind](const Tensor& p, const Tensor& t) { return tractseg::combined_loss(kind, p, t); },
               [tag](const Array& p, const Array& t) {
                 const double tv = tversky(p, t, 0.5, 0.5);
                 switch (tag) {
                   case tractseg::LossTag::IoULoss:
                     return 1.0 - iou_soft(p, t);
                   case tractseg::LossTag::BceTversky:
                     return 0.4 * tv + 0.6 * bce(p, t);
                   case tractseg::LossTag::IoUTversky:
                     return 0.4 * tv + 0.6 * (1.0 - iou_soft(p, t));
                 }
                 return 0.0;
               });
  }
  return out;
}

GradCheck unet_gradient_check(const tractseg::UNetConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  tractseg::Model model = tractseg::Model::build(config);
  const Array x = random_array({1, 1, 32, 32}, rng);
  const Array t = random_binary({1, 3, 32, 32}, rng);
  model.zero_grad();
  tractseg::backward(tractseg::bce(tractseg::sigmoid(model.forward(to_tensor(x), true)), to_tensor(t)));

  auto params = model_params(model);
  GradCheck all;
  for (const auto& p : model.parameters()) {
    const auto g = p.tensor.grad();
    std::vector<float> analytic(g.begin(), g.end());
    GradCheck r = check_gradient(analytic, params.at(p.name), [&](const Array& v) {
      auto q = params;
      q[p.name] = v;
      return bce(sigmoid(unet_forward(q, config, x)), t);
    });
    if (!r.ok()) r.first_failure = p.name + " " + r.first_failure;
    all = merge(all, r);
  }
  return all;
}

}  // namespace ref
