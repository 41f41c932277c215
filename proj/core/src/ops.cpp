// SPDX-License-Identifier: Apache-2.0
#include "tractseg/ops.hpp"

#include <array>
#include <cmath>
#include <string>

#include "kernels.hpp"
#include "tractseg/error.hpp"

namespace tractseg {

namespace {

using detail::make_result;
using detail::TensorImpl;

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.shape().rank() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + t.shape().str());
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " +
                         b.shape().str());
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              Conv2dOptions options) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  const auto& is = input.shape();
  const auto& ws = weight.shape();
  const std::size_t batch = is[0], cin = is[1], h = is[2], w = is[3];
  const std::size_t cout = ws[0], kh = ws[2], kw = ws[3];
  const std::size_t groups = options.groups;
  if (options.stride == 0) throw DimensionError("conv2d: stride must be positive");
  if (groups == 0 || cin % groups != 0 || cout % groups != 0) {
    throw DimensionError("conv2d: channels " + std::to_string(cin) + " -> " +
                         std::to_string(cout) + " not divisible by groups " +
                         std::to_string(groups));
  }
  if (ws[1] != cin / groups) {
    throw DimensionError("conv2d: weight " + ws.str() + " expects " +
                         std::to_string(ws[1] * groups) + " input channels, input has " +
                         std::to_string(cin));
  }
  if (kh > h + 2 * options.padding || kw > w + 2 * options.padding) {
    throw DimensionError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " larger than padded input " + is.str());
  }
  if (bias.defined() && (bias.shape().rank() != 1 || bias.shape()[0] != cout)) {
    throw DimensionError("conv2d: bias " + bias.shape().str() + " does not match " +
                         std::to_string(cout) + " output channels");
  }

  const std::size_t cin_g = cin / groups, cout_g = cout / groups;
  kernels::ConvGeometry geo{cin_g,
                            h,
                            w,
                            kh,
                            kw,
                            options.stride,
                            options.padding,
                            (h + 2 * options.padding - kh) / options.stride + 1,
                            (w + 2 * options.padding - kw) / options.stride + 1};
  const std::size_t plane = geo.out_h * geo.out_w;
  const std::size_t kcols = cin_g * kh * kw;

  std::vector<float> out(batch * cout * plane);
  std::vector<float> cols(kcols * plane);
  const float* x = input.data().data();
  const float* k = weight.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t g = 0; g < groups; ++g) {
      kernels::im2col(geo, x + (b * cin + g * cin_g) * h * w, cols.data());
      kernels::gemm_nn(cout_g, plane, kcols, k + g * cout_g * kcols, cols.data(),
                       out.data() + (b * cout + g * cout_g) * plane, false);
    }
    if (bias.defined()) {
      auto bv = bias.data();
      for (std::size_t c = 0; c < cout; ++c) {
        float* o = out.data() + (b * cout + c) * plane;
        for (std::size_t p = 0; p < plane; ++p) o[p] += bv[c];
      }
    }
  }

  auto in_impl = input.impl();
  auto w_impl = weight.impl();
  auto b_impl = bias.defined() ? bias.impl() : nullptr;
  auto rule = [=](std::span<const float> gy) {
    std::vector<float> col(kcols * plane);
    std::vector<float> dcol(kcols * plane);
    const float* xd = in_impl->data.data();
    const float* kd = w_impl->data.data();
    float* dx = in_impl->requires_grad ? in_impl->grad_buffer().data() : nullptr;
    float* dw = w_impl->requires_grad ? w_impl->grad_buffer().data() : nullptr;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t g = 0; g < groups; ++g) {
        const float* gy_g = gy.data() + (b * cout + g * cout_g) * plane;
        if (dw) {
          kernels::im2col(geo, xd + (b * cin + g * cin_g) * h * w, col.data());
          kernels::gemm_nt(cout_g, kcols, plane, gy_g, col.data(), dw + g * cout_g * kcols);
        }
        if (dx) {
          std::fill(dcol.begin(), dcol.end(), 0.0f);
          kernels::gemm_tn(kcols, plane, cout_g, kd + g * cout_g * kcols, gy_g, dcol.data());
          kernels::col2im(geo, dcol.data(), dx + (b * cin + g * cin_g) * h * w);
        }
      }
    }
    if (b_impl && b_impl->requires_grad) {
      auto db = b_impl->grad_buffer();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < cout; ++c) {
          const float* g = gy.data() + (b * cout + c) * plane;
          float acc = 0.0f;
          for (std::size_t p = 0; p < plane; ++p) acc += g[p];
          db[c] += acc;
        }
      }
    }
  };
  Shape out_shape{batch, cout, geo.out_h, geo.out_w};
  if (bias.defined()) {
    return make_result("conv2d", out_shape, std::move(out), {input, weight, bias}, rule);
  }
  return make_result("conv2d", out_shape, std::move(out), {input, weight}, rule);
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, std::size_t stride) {
  require_rank(input, 4, "conv_transpose2d input");
  require_rank(weight, 4, "conv_transpose2d weight");
  if (stride == 0) throw DimensionError("conv_transpose2d: stride must be positive");
  const auto& is = input.shape();
  const auto& ws = weight.shape();
  const std::size_t batch = is[0], cin = is[1], h = is[2], w = is[3];
  if (ws[0] != cin) {
    throw DimensionError("conv_transpose2d: weight " + ws.str() + " expects " +
                         std::to_string(ws[0]) + " input channels, input has " +
                         std::to_string(cin));
  }
  const std::size_t cout = ws[1], kh = ws[2], kw = ws[3];
  const std::size_t oh = (h - 1) * stride + kh, ow = (w - 1) * stride + kw;
  // Geometry of the forward conv2d this op is the adjoint of: it maps the
  // [Cout, oh, ow] output back onto the [Cin, h, w] input grid.
  kernels::ConvGeometry geo{cout, oh, ow, kh, kw, stride, 0, h, w};
  const std::size_t plane = h * w;
  const std::size_t kcols = cout * kh * kw;

  std::vector<float> out(batch * cout * oh * ow, 0.0f);
  std::vector<float> cols(kcols * plane);
  const float* x = input.data().data();
  const float* k = weight.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    std::fill(cols.begin(), cols.end(), 0.0f);
    kernels::gemm_tn(kcols, plane, cin, k, x + b * cin * plane, cols.data());
    kernels::col2im(geo, cols.data(), out.data() + b * cout * oh * ow);
  }

  auto in_impl = input.impl();
  auto w_impl = weight.impl();
  auto rule = [=](std::span<const float> gy) {
    std::vector<float> dcols(kcols * plane);
    const float* xd = in_impl->data.data();
    const float* kd = w_impl->data.data();
    float* dx = in_impl->requires_grad ? in_impl->grad_buffer().data() : nullptr;
    float* dw = w_impl->requires_grad ? w_impl->grad_buffer().data() : nullptr;
    for (std::size_t b = 0; b < batch; ++b) {
      kernels::im2col(geo, gy.data() + b * cout * oh * ow, dcols.data());
      if (dx) kernels::gemm_nn(cin, plane, kcols, kd, dcols.data(), dx + b * cin * plane, true);
      if (dw) kernels::gemm_nt(cin, kcols, plane, xd + b * cin * plane, dcols.data(), dw);
    }
  };
  return make_result("conv_transpose2d", Shape{batch, cout, oh, ow}, std::move(out),
                     {input, weight}, rule);
}

Tensor maxpool2d(const Tensor& input) {
  require_rank(input, 4, "maxpool2d input");
  const auto& s = input.shape();
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
  if (h % 2 != 0 || w % 2 != 0) {
    throw DimensionError("maxpool2d: spatial size " + std::to_string(h) + "x" +
                         std::to_string(w) +
                         " is odd; pad the input so every pooled level has even size "
                         "(multiples of 2^(depth-1))");
  }
  const std::size_t oh = h / 2, ow = w / 2;
  std::vector<float> out(planes * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  auto x = input.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const std::size_t base = p * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = base + (2 * i) * w + 2 * j;
        const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
        for (std::size_t c : cand) {
          if (x[c] > x[best]) best = c;
        }
        const std::size_t o = (p * oh + i) * ow + j;
        out[o] = x[best];
        argmax[o] = best;
      }
    }
  }
  auto in_impl = input.impl();
  return make_result("maxpool2d", Shape{s[0], s[1], oh, ow}, std::move(out), {input},
                     [in_impl, argmax = std::move(argmax)](std::span<const float> gy) {
                       auto dx = in_impl->grad_buffer();
                       for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += gy[o];
                     });
}

Tensor relu(const Tensor& input) {
  std::vector<float> out(input.numel());
  auto x = input.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
  auto in_impl = input.impl();
  return make_result("relu", input.shape(), std::move(out), {input},
                     [in_impl](std::span<const float> gy) {
                       auto dx = in_impl->grad_buffer();
                       const auto& xs = in_impl->data;
                       for (std::size_t i = 0; i < gy.size(); ++i) {
                         if (xs[i] > 0.0f) dx[i] += gy[i];
                       }
                     });
}

Tensor sigmoid(const Tensor& input) {
  std::vector<float> out(input.numel());
  auto x = input.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0f / (1.0f + std::exp(-x[i]));
  auto in_impl = input.impl();
  auto y = std::make_shared<std::vector<float>>(out);
  return make_result("sigmoid", input.shape(), std::move(out), {input},
                     [in_impl, y](std::span<const float> gy) {
                       auto dx = in_impl->grad_buffer();
                       for (std::size_t i = 0; i < gy.size(); ++i) {
                         dx[i] += gy[i] * (*y)[i] * (1.0f - (*y)[i]);
                       }
                     });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank(a, 4, "concat_channels lhs");
  require_rank(b, 4, "concat_channels rhs");
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as[0] != bs[0] || as[2] != bs[2] || as[3] != bs[3]) {
    throw DimensionError("concat_channels: batch/spatial mismatch " + as.str() + " vs " +
                         bs.str());
  }
  const std::size_t batch = as[0], ca = as[1], cb = bs[1], plane = as[2] * as[3];
  std::vector<float> out(batch * (ca + cb) * plane);
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t n = 0; n < batch; ++n) {
    std::copy_n(ad.begin() + n * ca * plane, ca * plane, out.begin() + n * (ca + cb) * plane);
    std::copy_n(bd.begin() + n * cb * plane, cb * plane,
                out.begin() + (n * (ca + cb) + ca) * plane);
  }
  auto a_impl = a.impl();
  auto b_impl = b.impl();
  return make_result("concat_channels", Shape{batch, ca + cb, as[2], as[3]}, std::move(out),
                     {a, b}, [=](std::span<const float> gy) {
                       for (std::size_t n = 0; n < batch; ++n) {
                         const float* src = gy.data() + n * (ca + cb) * plane;
                         if (a_impl->requires_grad) {
                           float* da = a_impl->grad_buffer().data() + n * ca * plane;
                           for (std::size_t i = 0; i < ca * plane; ++i) da[i] += src[i];
                         }
                         if (b_impl->requires_grad) {
                           float* db = b_impl->grad_buffer().data() + n * cb * plane;
                           src += ca * plane;
                           for (std::size_t i = 0; i < cb * plane; ++i) db[i] += src[i];
                         }
                       }
                     });
}

RunningStats RunningStats::init(std::size_t channels) {
  return {Tensor::zeros(Shape{channels}), Tensor::full(Shape{channels}, 1.0f)};
}

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   RunningStats& stats, bool training, BatchNormOptions options) {
  require_rank(input, 4, "batchnorm2d input");
  const auto& s = input.shape();
  const std::size_t batch = s[0], channels = s[1], plane = s[2] * s[3];
  for (const Tensor* t : std::array<const Tensor*, 4>{&gamma, &beta, &stats.mean, &stats.var}) {
    if (t->shape() != Shape{channels}) {
      throw DimensionError("batchnorm2d: per-channel tensor " + t->shape().str() +
                           " does not match " + std::to_string(channels) + " channels");
    }
  }
  const std::size_t count = batch * plane;
  if (training && count < 2) {
    throw DimensionError("batchnorm2d: training needs more than one value per channel");
  }

  auto x = input.data();
  std::vector<float> mean_c(channels), invstd_c(channels);
  if (training) {
    auto rm = stats.mean.mutable_data();
    auto rv = stats.var.mutable_data();
    for (std::size_t c = 0; c < channels; ++c) {
      double acc = 0.0;
      for (std::size_t n = 0; n < batch; ++n) {
        const float* p = x.data() + (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      }
      const double mu = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t n = 0; n < batch; ++n) {
        const float* p = x.data() + (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = p[i] - mu;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(count);
      mean_c[c] = static_cast<float>(mu);
      invstd_c[c] = static_cast<float>(1.0 / std::sqrt(var + options.eps));
      const double unbiased = sq / static_cast<double>(count - 1);
      rm[c] = static_cast<float>((1.0 - options.momentum) * rm[c] + options.momentum * mu);
      rv[c] = static_cast<float>((1.0 - options.momentum) * rv[c] + options.momentum * unbiased);
    }
  } else {
    auto rm = stats.mean.data();
    auto rv = stats.var.data();
    for (std::size_t c = 0; c < channels; ++c) {
      mean_c[c] = rm[c];
      invstd_c[c] = 1.0f / std::sqrt(rv[c] + options.eps);
    }
  }

  auto gv = gamma.data();
  auto bv = beta.data();
  std::vector<float> xhat(input.numel());
  std::vector<float> out(input.numel());
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t off = (n * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const float xh = (x[off + i] - mean_c[c]) * invstd_c[c];
        xhat[off + i] = xh;
        out[off + i] = gv[c] * xh + bv[c];
      }
    }
  }

  auto in_impl = input.impl();
  auto g_impl = gamma.impl();
  auto b_impl = beta.impl();
  auto rule = [=, xhat = std::move(xhat), invstd_c = std::move(invstd_c)](
                  std::span<const float> gy) {
    const auto& gdata = g_impl->data;
    for (std::size_t c = 0; c < channels; ++c) {
      double sum_gy = 0.0, sum_gy_xhat = 0.0;
      for (std::size_t n = 0; n < batch; ++n) {
        const std::size_t off = (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sum_gy += gy[off + i];
          sum_gy_xhat += static_cast<double>(gy[off + i]) * xhat[off + i];
        }
      }
      if (g_impl->requires_grad) g_impl->grad_buffer()[c] += static_cast<float>(sum_gy_xhat);
      if (b_impl->requires_grad) b_impl->grad_buffer()[c] += static_cast<float>(sum_gy);
      if (!in_impl->requires_grad) continue;
      auto dx = in_impl->grad_buffer();
      const float k = gdata[c] * invstd_c[c];
      if (training) {
        const float inv_n = 1.0f / static_cast<float>(count);
        const float mean_gy = static_cast<float>(sum_gy) * inv_n;
        const float mean_gy_xhat = static_cast<float>(sum_gy_xhat) * inv_n;
        for (std::size_t n = 0; n < batch; ++n) {
          const std::size_t off = (n * channels + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            dx[off + i] += k * (gy[off + i] - mean_gy - xhat[off + i] * mean_gy_xhat);
          }
        }
      } else {
        for (std::size_t n = 0; n < batch; ++n) {
          const std::size_t off = (n * channels + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) dx[off + i] += k * gy[off + i];
        }
      }
    }
  };
  return make_result("batchnorm2d", s, std::move(out), {input, gamma, beta}, rule);
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<float> out(a.numel());
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  auto a_impl = a.impl();
  auto b_impl = b.impl();
  return make_result("add", a.shape(), std::move(out), {a, b}, [=](std::span<const float> gy) {
    for (auto* impl : {a_impl.get(), b_impl.get()}) {
      if (!impl->requires_grad) continue;
      auto d = impl->grad_buffer();
      for (std::size_t i = 0; i < gy.size(); ++i) d[i] += gy[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<float> out(a.numel());
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  auto a_impl = a.impl();
  auto b_impl = b.impl();
  return make_result("mul", a.shape(), std::move(out), {a, b}, [=](std::span<const float> gy) {
    if (a_impl->requires_grad) {
      auto d = a_impl->grad_buffer();
      for (std::size_t i = 0; i < gy.size(); ++i) d[i] += gy[i] * b_impl->data[i];
    }
    if (b_impl->requires_grad) {
      auto d = b_impl->grad_buffer();
      for (std::size_t i = 0; i < gy.size(); ++i) d[i] += gy[i] * a_impl->data[i];
    }
  });
}

Tensor scale(const Tensor& a, float factor) {
  std::vector<float> out(a.numel());
  auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * factor;
  auto a_impl = a.impl();
  return make_result("scale", a.shape(), std::move(out), {a}, [=](std::span<const float> gy) {
    auto d = a_impl->grad_buffer();
    for (std::size_t i = 0; i < gy.size(); ++i) d[i] += gy[i] * factor;
  });
}

Tensor rsub(float value, const Tensor& a) {
  std::vector<float> out(a.numel());
  auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = value - ad[i];
  auto a_impl = a.impl();
  return make_result("rsub", a.shape(), std::move(out), {a}, [=](std::span<const float> gy) {
    auto d = a_impl->grad_buffer();
    for (std::size_t i = 0; i < gy.size(); ++i) d[i] -= gy[i];
  });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  auto a_impl = a.impl();
  return make_result("sum", Shape{1}, {static_cast<float>(acc)}, {a},
                     [=](std::span<const float> gy) {
                       auto d = a_impl->grad_buffer();
                       for (float& v : d) v += gy[0];
                     });
}

Tensor mean(const Tensor& a) {
  const float inv = 1.0f / static_cast<float>(a.numel());
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  auto a_impl = a.impl();
  return make_result("mean", Shape{1}, {static_cast<float>(acc / a.numel())}, {a},
                     [=](std::span<const float> gy) {
                       auto d = a_impl->grad_buffer();
                       for (float& v : d) v += gy[0] * inv;
                     });
}

}  // namespace tractseg
