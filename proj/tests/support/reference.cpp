// SPDX-License-Identifier: Apache-2.0
#include "reference.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ref {

Array::Array(std::vector<std::size_t> s, double fill) : shape(std::move(s)) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  v.assign(n, fill);
}

double& Array::at4(std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
  return v[((a * shape[1] + b) * shape[2] + c) * shape[3] + d];
}

double Array::at4(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const {
  return v[((a * shape[1] + b) * shape[2] + c) * shape[3] + d];
}

Array from_tensor(const tractseg::Tensor& t) {
  Array a;
  for (std::size_t i = 0; i < t.shape().rank(); ++i) a.shape.push_back(t.shape()[i]);
  a.v.assign(t.data().begin(), t.data().end());
  return a;
}

tractseg::Tensor to_tensor(const Array& a, bool requires_grad) {
  std::vector<float> f(a.v.begin(), a.v.end());
  return tractseg::Tensor::from_data(tractseg::Shape(a.shape), std::move(f), requires_grad);
}

Array random_array(std::vector<std::size_t> shape, std::mt19937_64& rng, double lo, double hi) {
  Array a(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  // Round through float so library and oracle see identical inputs.
  for (auto& x : a.v) x = static_cast<float>(d(rng));
  return a;
}

Array random_binary(std::vector<std::size_t> shape, std::mt19937_64& rng) {
  Array a(std::move(shape));
  for (auto& x : a.v) x = static_cast<double>(rng() & 1);
  return a;
}

Array conv2d(const Array& x, const Array& w, const Array* bias, std::size_t stride,
             std::size_t padding, std::size_t groups) {
  const std::size_t B = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3];
  const std::size_t Cout = w.shape[0], kH = w.shape[2], kW = w.shape[3];
  const std::size_t cin_g = Cin / groups, cout_g = Cout / groups;
  const std::size_t oH = (H + 2 * padding - kH) / stride + 1, oW = (W + 2 * padding - kW) / stride + 1;
  Array y({B, Cout, oH, oW});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t co = 0; co < Cout; ++co) {
      const std::size_t g = co / cout_g;
      for (std::size_t i = 0; i < oH; ++i)
        for (std::size_t j = 0; j < oW; ++j) {
          double acc = bias ? bias->v[co] : 0.0;
          for (std::size_t c = 0; c < cin_g; ++c)
            for (std::size_t ki = 0; ki < kH; ++ki)
              for (std::size_t kj = 0; kj < kW; ++kj) {
                const long ii = static_cast<long>(i * stride + ki) - static_cast<long>(padding);
                const long jj = static_cast<long>(j * stride + kj) - static_cast<long>(padding);
                if (ii < 0 || jj < 0 || ii >= static_cast<long>(H) || jj >= static_cast<long>(W)) continue;
                acc += x.at4(b, g * cin_g + c, static_cast<std::size_t>(ii), static_cast<std::size_t>(jj)) *
                       w.at4(co, c, ki, kj);
              }
          y.at4(b, co, i, j) = acc;
        }
    }
  return y;
}

Array conv_transpose2d(const Array& x, const Array& w, std::size_t stride) {
  const std::size_t B = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3];
  const std::size_t Cout = w.shape[1], kH = w.shape[2], kW = w.shape[3];
  Array y({B, Cout, (H - 1) * stride + kH, (W - 1) * stride + kW});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t ci = 0; ci < Cin; ++ci)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j)
          for (std::size_t co = 0; co < Cout; ++co)
            for (std::size_t ki = 0; ki < kH; ++ki)
              for (std::size_t kj = 0; kj < kW; ++kj)
                y.at4(b, co, i * stride + ki, j * stride + kj) += x.at4(b, ci, i, j) * w.at4(ci, co, ki, kj);
  return y;
}

Array maxpool2d(const Array& x) {
  const std::size_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  Array y({B, C, H / 2, W / 2});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < H / 2; ++i)
        for (std::size_t j = 0; j < W / 2; ++j) {
          double m = x.at4(b, c, 2 * i, 2 * j);
          m = std::max(m, x.at4(b, c, 2 * i, 2 * j + 1));
          m = std::max(m, x.at4(b, c, 2 * i + 1, 2 * j));
          m = std::max(m, x.at4(b, c, 2 * i + 1, 2 * j + 1));
          y.at4(b, c, i, j) = m;
        }
  return y;
}

Array relu(const Array& x) {
  Array y = x;
  for (auto& e : y.v) e = e > 0.0 ? e : 0.0;
  return y;
}

Array sigmoid(const Array& x) {
  Array y = x;
  for (auto& e : y.v) e = 1.0 / (1.0 + std::exp(-e));
  return y;
}

Array concat_channels(const Array& a, const Array& b) {
  const std::size_t B = a.shape[0], Ca = a.shape[1], Cb = b.shape[1], H = a.shape[2], W = a.shape[3];
  Array y({B, Ca + Cb, H, W});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        for (std::size_t c = 0; c < Ca; ++c) y.at4(n, c, i, j) = a.at4(n, c, i, j);
        for (std::size_t c = 0; c < Cb; ++c) y.at4(n, Ca + c, i, j) = b.at4(n, c, i, j);
      }
  return y;
}

Array add(const Array& a, const Array& b) {
  Array y = a;
  for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] += b.v[i];
  return y;
}

Array batchnorm_train(const Array& x, const Array& gamma, const Array& beta, double eps) {
  const std::size_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const double n = static_cast<double>(B * H * W);
  Array y = x;
  for (std::size_t c = 0; c < C; ++c) {
    double mean = 0.0;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) mean += x.at4(b, c, i, j);
    mean /= n;
    double var = 0.0;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) var += (x.at4(b, c, i, j) - mean) * (x.at4(b, c, i, j) - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j)
          y.at4(b, c, i, j) = gamma.v[c] * (x.at4(b, c, i, j) - mean) * inv + beta.v[c];
  }
  return y;
}

Array batchnorm_eval(const Array& x, const Array& gamma, const Array& beta, const Array& mean,
                     const Array& var, double eps) {
  const std::size_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  Array y = x;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j)
          y.at4(b, c, i, j) = gamma.v[c] * (x.at4(b, c, i, j) - mean.v[c]) / std::sqrt(var.v[c] + eps) + beta.v[c];
  return y;
}

double sum(const Array& x) {
  double s = 0.0;
  for (double e : x.v) s += e;
  return s;
}

namespace {

std::size_t group_count(const Array& a) {
  if (a.shape.size() == 4) return a.shape[0] * a.shape[1];
  if (a.shape.size() == 3) return a.shape[0];
  return 1;
}

template <typename F>
double mean_over_groups(const Array& p, const Array& t, F per_group) {
  const std::size_t g = group_count(p);
  const std::size_t len = p.v.size() / g;
  double total = 0.0;
  for (std::size_t k = 0; k < g; ++k) total += per_group(p.v.data() + k * len, t.v.data() + k * len, len);
  return total / static_cast<double>(g);
}

}  // namespace

double bce(const Array& p, const Array& t, double clamp) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.v.size(); ++i) {
    const double q = std::clamp(p.v[i], clamp, 1.0 - clamp);
    s -= t.v[i] * std::log(q) + (1.0 - t.v[i]) * std::log(1.0 - q);
  }
  return s / static_cast<double>(p.v.size());
}

double iou_soft(const Array& p, const Array& t, double eps) {
  return mean_over_groups(p, t, [eps](const double* a, const double* b, std::size_t n) {
    double inter = 0.0, sp = 0.0, st = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      inter += a[i] * b[i];
      sp += a[i];
      st += b[i];
    }
    return (inter + eps) / (sp + st - inter + eps);
  });
}

double tversky(const Array& p, const Array& t, double alpha, double beta, double eps) {
  return mean_over_groups(p, t, [=](const double* a, const double* b, std::size_t n) {
    double tp = 0.0, fp = 0.0, fn = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      tp += a[i] * b[i];
      fp += a[i] * (1.0 - b[i]);
      fn += (1.0 - a[i]) * b[i];
    }
    return 1.0 - (tp + eps) / (tp + alpha * fp + beta * fn + eps);
  });
}

double soft_dice_loss(const Array& p, const Array& t, double smooth) {
  return mean_over_groups(p, t, [smooth](const double* a, const double* b, std::size_t n) {
    double inter = 0.0, sp = 0.0, st = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      inter += a[i] * b[i];
      sp += a[i];
      st += b[i];
    }
    return 1.0 - (2.0 * inter + smooth) / (sp + st + smooth);
  });
}

double iou_brute(const tractseg::BinaryMask& a, const tractseg::BinaryMask& b) {
  std::size_t both = 0, either = 0;
  for (std::size_t r = 0; r < a.height; ++r)
    for (std::size_t c = 0; c < a.width; ++c) {
      const bool x = a.at(r, c) != 0, y = b.at(r, c) != 0;
      both += x && y;
      either += x || y;
    }
  if (either == 0) return 1.0;
  return static_cast<double>(both) / static_cast<double>(either);
}

namespace {

const Array& get(const std::map<std::string, Array>& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw std::runtime_error("reference unet: missing parameter " + name);
  return it->second;
}

Array bn(const std::map<std::string, Array>& p, const std::string& prefix, const Array& x) {
  return batchnorm_train(x, get(p, prefix + ".weight"), get(p, prefix + ".bias"));
}

Array block(const std::map<std::string, Array>& p, const tractseg::UNetConfig& cfg,
            const std::string& n, const Array& x, std::size_t in, std::size_t out) {
  using tractseg::BlockStyle;
  switch (cfg.block_style) {
    case BlockStyle::Plain: {
      Array h = relu(bn(p, n + ".bn1", conv2d(x, get(p, n + ".conv1.weight"), nullptr, 1, 1)));
      return relu(bn(p, n + ".bn2", conv2d(h, get(p, n + ".conv2.weight"), nullptr, 1, 1)));
    }
    case BlockStyle::Residual: {
      Array h = relu(bn(p, n + ".bn1", conv2d(x, get(p, n + ".conv1.weight"), nullptr, 1, 1)));
      h = bn(p, n + ".bn2", conv2d(h, get(p, n + ".conv2.weight"), nullptr, 1, 1));
      const Array s = in == out ? x : bn(p, n + ".shortcut_bn", conv2d(x, get(p, n + ".shortcut.weight"), nullptr, 1, 0));
      return relu(add(h, s));
    }
    case BlockStyle::InvertedResidual: {
      const std::size_t hidden = cfg.expansion * out;
      Array h = relu(bn(p, n + ".bn1", conv2d(x, get(p, n + ".expand.weight"), nullptr, 1, 0)));
      h = relu(bn(p, n + ".bn2", conv2d(h, get(p, n + ".depthwise.weight"), nullptr, 1, 1, hidden)));
      h = bn(p, n + ".bn3", conv2d(h, get(p, n + ".project.weight"), nullptr, 1, 0));
      return in == out ? add(h, x) : h;
    }
  }
  throw std::runtime_error("reference unet: unknown block style");
}

}  // namespace

Array unet_forward(const std::map<std::string, Array>& p, const tractseg::UNetConfig& cfg,
                   const Array& input) {
  auto width = [&](std::size_t l) { return cfg.base_channels << l; };
  std::vector<Array> skips;
  Array x = input;
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    x = block(p, cfg, "enc" + std::to_string(l), x, l == 0 ? cfg.in_channels : width(l - 1), width(l));
    if (l + 1 < cfg.depth) {
      skips.push_back(x);
      x = maxpool2d(x);
    }
  }
  for (std::size_t l = cfg.depth - 1; l-- > 0;) {
    const Array up = conv_transpose2d(x, get(p, "up" + std::to_string(l) + ".weight"), 2);
    x = block(p, cfg, "dec" + std::to_string(l), concat_channels(up, skips[l]), 2 * width(l), width(l));
  }
  const Array& hb = get(p, "head.bias");
  return conv2d(x, get(p, "head.weight"), &hb, 1, 0);
}

std::map<std::string, Array> model_params(const tractseg::Model& model) {
  std::map<std::string, Array> out;
  for (const auto& p : model.parameters()) out[p.name] = from_tensor(p.tensor);
  return out;
}

GradCheck check_gradient(const std::vector<float>& analytic, Array x,
                         const std::function<double(const Array&)>& f, double h, double abs_tol,
                         double rel_tol) {
  GradCheck r;
  auto central = [&](std::size_t i, double step) {
    const double orig = x.v[i];
    x.v[i] = orig + step;
    const double up = f(x);
    x.v[i] = orig - step;
    const double down = f(x);
    x.v[i] = orig;
    return (up - down) / (2.0 * step);
  };
  for (std::size_t i = 0; i < x.v.size(); ++i) {
    double numeric = central(i, h);
    double tol = std::max(abs_tol, rel_tol * std::abs(numeric));
    double diff = std::abs(static_cast<double>(analytic[i]) - numeric);
    if (diff > tol) {
      // A ReLU or max kink inside [x - h, x + h] spoils the estimate; the
      // double oracle tolerates a much smaller step.
      numeric = central(i, h * 1e-2);
      tol = std::max(abs_tol, rel_tol * std::abs(numeric));
      diff = std::abs(static_cast<double>(analytic[i]) - numeric);
    }
    r.worst_excess = std::max(r.worst_excess, diff - tol);
    ++r.checked;
    if (diff > tol) {
      if (r.failures == 0) {
        std::ostringstream os;
        os << "element " << i << ": analytic " << analytic[i] << " numeric " << numeric;
        r.first_failure = os.str();
      }
      ++r.failures;
    }
  }
  return r;
}

}  // namespace ref
