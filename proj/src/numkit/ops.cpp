#include "plarseg/numkit/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace plarseg::numkit {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require_rank(const Tensor& t, int rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

bool wants(const std::shared_ptr<TensorImpl>& impl) { return impl->requires_grad; }

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int padding, int dilation) {
  require_rank(input, 3, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  const int cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int cout = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != cin) {
    throw DimensionError("conv2d: input has " + std::to_string(cin) + " channels, kernel expects " +
                         std::to_string(kernel.dim(1)));
  }
  if (kernel.dim(3) != k) throw DimensionError("conv2d: kernel must be square");
  if (bias.numel() != static_cast<std::size_t>(cout)) throw DimensionError("conv2d: bias length mismatch");
  if (padding < 0 || dilation < 1) throw DimensionError("conv2d: invalid padding or dilation");
  const int oh = h + 2 * padding - dilation * (k - 1);
  const int ow = w + 2 * padding - dilation * (k - 1);
  if (oh <= 0 || ow <= 0) throw DimensionError("conv2d: kernel larger than padded input");

  const int rows = cin * k * k;
  const int cols = oh * ow;
  auto col = std::make_shared<std::vector<float>>(static_cast<std::size_t>(rows) * cols, 0.0f);
  const auto x = input.data();
  for (int ci = 0; ci < cin; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* dst = col->data() + static_cast<std::size_t>((ci * k + ky) * k + kx) * cols;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy - padding + ky * dilation;
          if (iy < 0 || iy >= h) continue;
          const float* src = x.data() + (static_cast<std::size_t>(ci) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox - padding + kx * dilation;
            if (ix >= 0 && ix < w) dst[oy * ow + ox] = src[ix];
          }
        }
      }
    }
  }

  std::vector<float> out(static_cast<std::size_t>(cout) * cols);
  MapMat out_m(out.data(), cout, cols);
  ConstMapMat w_m(kernel.data().data(), cout, rows);
  ConstMapMat col_m(col->data(), rows, cols);
  out_m.noalias() = w_m * col_m;
  const auto b = bias.data();
  for (int co = 0; co < cout; ++co) out_m.row(co).array() += b[static_cast<std::size_t>(co)];

  auto in_i = input.impl(), k_i = kernel.impl(), b_i = bias.impl();
  return make_result(
      {cout, oh, ow}, std::move(out), {input, kernel, bias},
      [=](std::span<const float> g) {
        ConstMapMat g_m(g.data(), cout, cols);
        ConstMapMat colm(col->data(), rows, cols);
        if (wants(k_i)) {
          MapMat gw(grad_buffer(*k_i).data(), cout, rows);
          gw.noalias() += g_m * colm.transpose();
        }
        if (wants(b_i)) {
          auto gb = grad_buffer(*b_i);
          for (int co = 0; co < cout; ++co) gb[static_cast<std::size_t>(co)] += g_m.row(co).sum();
        }
        if (wants(in_i)) {
          ConstMapMat wm(k_i->data.data(), cout, rows);
          RowMat dcol = wm.transpose() * g_m;
          auto gx = grad_buffer(*in_i);
          for (int ci = 0; ci < cin; ++ci) {
            for (int ky = 0; ky < k; ++ky) {
              for (int kx = 0; kx < k; ++kx) {
                const float* src = dcol.data() + static_cast<std::size_t>((ci * k + ky) * k + kx) * cols;
                for (int oy = 0; oy < oh; ++oy) {
                  const int iy = oy - padding + ky * dilation;
                  if (iy < 0 || iy >= h) continue;
                  float* dst = gx.data() + (static_cast<std::size_t>(ci) * h + iy) * w;
                  for (int ox = 0; ox < ow; ++ox) {
                    const int ix = ox - padding + kx * dilation;
                    if (ix >= 0 && ix < w) dst[ix] += src[oy * ow + ox];
                  }
                }
              }
            }
          }
        }
      });
}

Tensor conv2d_same(const Tensor& input, const Tensor& kernel, const Tensor& bias, int dilation) {
  require_rank(kernel, 4, "conv2d kernel");
  const int k = kernel.dim(2);
  if (k % 2 == 0) throw DimensionError("conv2d_same: kernel size must be odd");
  return conv2d(input, kernel, bias, dilation * (k - 1) / 2, dilation);
}

Tensor relu(const Tensor& x) {
  const auto xd = x.data();
  std::vector<float> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = xd[i] > 0.0f ? xd[i] : 0.0f;
  auto xi = x.impl();
  return make_result(x.shape(), std::move(out), {x}, [xi](std::span<const float> g) {
    auto gx = grad_buffer(*xi);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xi->data[i] > 0.0f) gx[i] += g[i];
  });
}

Tensor sigmoid(const Tensor& x) {
  const auto xd = x.data();
  auto out = std::make_shared<std::vector<float>>(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) (*out)[i] = 1.0f / (1.0f + std::exp(-xd[i]));
  std::vector<float> copy = *out;
  auto xi = x.impl();
  return make_result(x.shape(), std::move(copy), {x}, [xi, out](std::span<const float> g) {
    auto gx = grad_buffer(*xi);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const float s = (*out)[i];
      gx[i] += g[i] * s * (1.0f - s);
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto ad = a.data(), bd = b.data();
  std::vector<float> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] + bd[i];
  auto ai = a.impl(), bi = b.impl();
  return make_result(a.shape(), std::move(out), {a, b}, [ai, bi](std::span<const float> g) {
    for (const auto& t : {ai, bi}) {
      if (!wants(t)) continue;
      auto gt = grad_buffer(*t);
      for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto ad = a.data(), bd = b.data();
  std::vector<float> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] * bd[i];
  auto ai = a.impl(), bi = b.impl();
  return make_result(a.shape(), std::move(out), {a, b}, [ai, bi](std::span<const float> g) {
    if (wants(ai)) {
      auto ga = grad_buffer(*ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bi->data[i];
    }
    if (wants(bi)) {
      auto gb = grad_buffer(*bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ai->data[i];
    }
  });
}

Tensor scale(const Tensor& x, float factor) {
  const auto xd = x.data();
  std::vector<float> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = xd[i] * factor;
  auto xi = x.impl();
  return make_result(x.shape(), std::move(out), {x}, [xi, factor](std::span<const float> g) {
    auto gx = grad_buffer(*xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
  });
}

Tensor square(const Tensor& x) { return mul(x, x); }

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  auto xi = x.impl();
  return make_scalar_result(acc, {x}, [xi](std::span<const float> g) {
    auto gx = grad_buffer(*xi);
    for (auto& v : gx) v += g[0];
  });
}

Tensor mean(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  const double n = static_cast<double>(x.numel());
  auto xi = x.impl();
  return make_scalar_result(acc / n, {x}, [xi, n](std::span<const float> g) {
    auto gx = grad_buffer(*xi);
    const auto s = static_cast<float>(g[0] / n);
    for (auto& v : gx) v += s;
  });
}

Tensor weighted_sum(const std::vector<Tensor>& scalars, const std::vector<float>& weights) {
  if (scalars.size() != weights.size() || scalars.empty()) throw DimensionError("weighted_sum: size mismatch");
  double acc = 0.0;
  std::vector<std::shared_ptr<TensorImpl>> impls;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    acc += static_cast<double>(weights[i]) * scalars[i].item_wide();
    impls.push_back(scalars[i].impl());
  }
  return make_scalar_result(acc, scalars, [impls, weights](std::span<const float> g) {
    for (std::size_t i = 0; i < impls.size(); ++i)
      if (wants(impls[i])) grad_buffer(*impls[i])[0] += g[0] * weights[i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) throw DimensionError("reshape: element count mismatch");
  std::vector<float> out(x.data().begin(), x.data().end());
  auto xi = x.impl();
  return make_result(std::move(shape), std::move(out), {x}, [xi](std::span<const float> g) {
    auto gx = grad_buffer(*xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Tensor select(const Tensor& x, int index) {
  if (index < 0 || static_cast<std::size_t>(index) >= x.numel()) throw DimensionError("select: index out of range");
  auto xi = x.impl();
  return make_result({1}, {x.data()[static_cast<std::size_t>(index)]}, {x}, [xi, index](std::span<const float> g) {
    grad_buffer(*xi)[static_cast<std::size_t>(index)] += g[0];
  });
}

Tensor lerp(const Tensor& lambda, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "lerp");
  if (lambda.numel() != 1) throw DimensionError("lerp: lambda must be a single element");
  const float lam = lambda.item();
  const auto ad = a.data(), bd = b.data();
  std::vector<float> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = lam * ad[i] + (1.0f - lam) * bd[i];
  auto li = lambda.impl(), ai = a.impl(), bi = b.impl();
  return make_result(a.shape(), std::move(out), {lambda, a, b}, [li, ai, bi](std::span<const float> g) {
    const float l = li->data[0];
    if (wants(li)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += static_cast<double>(g[i]) * (ai->data[i] - bi->data[i]);
      grad_buffer(*li)[0] += static_cast<float>(acc);
    }
    if (wants(ai)) {
      auto ga = grad_buffer(*ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * l;
    }
    if (wants(bi)) {
      auto gb = grad_buffer(*bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * (1.0f - l);
    }
  });
}

Tensor avg_pool2(const Tensor& x) {
  require_rank(x, 3, "avg_pool2");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % 2 || w % 2) throw DimensionError("avg_pool2: spatial size must be even, got " + shape_str(x.shape()));
  const int oh = h / 2, ow = w / 2;
  std::vector<float> out(static_cast<std::size_t>(c) * oh * ow);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx)
        out[(static_cast<std::size_t>(ch) * oh + y) * ow + xx] =
            0.25f * (x.at(ch, 2 * y, 2 * xx) + x.at(ch, 2 * y, 2 * xx + 1) + x.at(ch, 2 * y + 1, 2 * xx) +
                     x.at(ch, 2 * y + 1, 2 * xx + 1));
  auto xi = x.impl();
  return make_result({c, oh, ow}, std::move(out), {x}, [xi, c, h, w, oh, ow](std::span<const float> g) {
    auto gx = grad_buffer(*xi);
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          const float v = 0.25f * g[(static_cast<std::size_t>(ch) * oh + y) * ow + xx];
          const std::size_t base = (static_cast<std::size_t>(ch) * h + 2 * y) * w + 2 * xx;
          gx[base] += v;
          gx[base + 1] += v;
          gx[base + w] += v;
          gx[base + w + 1] += v;
        }
  });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 3, "global_avg_pool");
  const int c = x.dim(0);
  const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  std::vector<float> out(static_cast<std::size_t>(c));
  const auto xd = x.data();
  for (int ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (std::size_t i = 0; i < hw; ++i) acc += xd[ch * hw + i];
    out[static_cast<std::size_t>(ch)] = static_cast<float>(acc / static_cast<double>(hw));
  }
  auto xi = x.impl();
  return make_result({c, 1, 1}, std::move(out), {x}, [xi, c, hw](std::span<const float> g) {
    auto gx = grad_buffer(*xi);
    const float inv = 1.0f / static_cast<float>(hw);
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < hw; ++i) gx[ch * hw + i] += g[static_cast<std::size_t>(ch)] * inv;
  });
}

Tensor resize_nearest(const Tensor& x, int out_h, int out_w) {
  require_rank(x, 3, "resize_nearest");
  if (out_h <= 0 || out_w <= 0) throw DimensionError("resize_nearest: non-positive output size");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto index = std::make_shared<std::vector<std::size_t>>(static_cast<std::size_t>(out_h) * out_w);
  for (int y = 0; y < out_h; ++y)
    for (int xx = 0; xx < out_w; ++xx) {
      const int sy = static_cast<int>(static_cast<long long>(y) * h / out_h);
      const int sx = static_cast<int>(static_cast<long long>(xx) * w / out_w);
      (*index)[static_cast<std::size_t>(y) * out_w + xx] = static_cast<std::size_t>(sy) * w + sx;
    }
  const std::size_t in_plane = static_cast<std::size_t>(h) * w;
  const std::size_t out_plane = index->size();
  std::vector<float> out(static_cast<std::size_t>(c) * out_plane);
  const auto xd = x.data();
  for (int ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < out_plane; ++i) out[ch * out_plane + i] = xd[ch * in_plane + (*index)[i]];
  auto xi = x.impl();
  return make_result({c, out_h, out_w}, std::move(out), {x},
                     [xi, index, c, in_plane, out_plane](std::span<const float> g) {
                       auto gx = grad_buffer(*xi);
                       for (int ch = 0; ch < c; ++ch)
                         for (std::size_t i = 0; i < out_plane; ++i)
                           gx[ch * in_plane + (*index)[i]] += g[ch * out_plane + i];
                     });
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  const int h = parts[0].dim(1), w = parts[0].dim(2);
  int total = 0;
  for (const auto& p : parts) {
    require_rank(p, 3, "concat_channels");
    if (p.dim(1) != h || p.dim(2) != w) throw DimensionError("concat_channels: spatial size mismatch");
    total += p.dim(0);
  }
  std::vector<float> out;
  out.reserve(static_cast<std::size_t>(total) * h * w);
  std::vector<std::shared_ptr<TensorImpl>> impls;
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    impls.push_back(p.impl());
  }
  return make_result({total, h, w}, std::move(out), parts, [impls](std::span<const float> g) {
    std::size_t offset = 0;
    for (const auto& impl : impls) {
      const std::size_t n = impl->data.size();
      if (wants(impl)) {
        auto gi = grad_buffer(*impl);
        for (std::size_t i = 0; i < n; ++i) gi[i] += g[offset + i];
      }
      offset += n;
    }
  });
}

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  require_rank(x, 3, "group_norm");
  const int c = x.dim(0);
  if (gamma.numel() != static_cast<std::size_t>(c) || beta.numel() != static_cast<std::size_t>(c))
    throw DimensionError("group_norm: affine parameter length mismatch");
  const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  const std::size_t n = x.numel();
  const auto xd = x.data();
  double mu = 0.0;
  for (float v : xd) mu += v;
  mu /= static_cast<double>(n);
  double var = 0.0;
  for (float v : xd) var += (v - mu) * (v - mu);
  var /= static_cast<double>(n);
  const double inv_std = 1.0 / std::sqrt(var + eps);
  auto xhat = std::make_shared<std::vector<float>>(n);
  std::vector<float> out(n);
  const auto gd = gamma.data(), bd = beta.data();
  for (int ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < hw; ++i) {
      const std::size_t j = ch * hw + i;
      (*xhat)[j] = static_cast<float>((xd[j] - mu) * inv_std);
      out[j] = gd[static_cast<std::size_t>(ch)] * (*xhat)[j] + bd[static_cast<std::size_t>(ch)];
    }
  auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [xi, gi, bi, xhat, c, hw, n, inv_std](std::span<const float> g) {
                       if (wants(gi) || wants(bi)) {
                         for (int ch = 0; ch < c; ++ch) {
                           double sg = 0.0, sb = 0.0;
                           for (std::size_t i = 0; i < hw; ++i) {
                             const std::size_t j = ch * hw + i;
                             sg += static_cast<double>(g[j]) * (*xhat)[j];
                             sb += g[j];
                           }
                           if (wants(gi)) grad_buffer(*gi)[static_cast<std::size_t>(ch)] += static_cast<float>(sg);
                           if (wants(bi)) grad_buffer(*bi)[static_cast<std::size_t>(ch)] += static_cast<float>(sb);
                         }
                       }
                       if (!wants(xi)) return;
                       std::vector<double> dxhat(n);
                       double s1 = 0.0, s2 = 0.0;
                       for (int ch = 0; ch < c; ++ch)
                         for (std::size_t i = 0; i < hw; ++i) {
                           const std::size_t j = ch * hw + i;
                           dxhat[j] = static_cast<double>(g[j]) * gi->data[static_cast<std::size_t>(ch)];
                           s1 += dxhat[j];
                           s2 += dxhat[j] * (*xhat)[j];
                         }
                       auto gx = grad_buffer(*xi);
                       const double nn = static_cast<double>(n);
                       for (std::size_t j = 0; j < n; ++j)
                         gx[j] += static_cast<float>(inv_std / nn * (nn * dxhat[j] - s1 - (*xhat)[j] * s2));
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(weight, 2, "linear weight");
  const int m = weight.dim(0), n = weight.dim(1);
  if (x.numel() != static_cast<std::size_t>(n)) throw DimensionError("linear: input length mismatch");
  if (bias.numel() != static_cast<std::size_t>(m)) throw DimensionError("linear: bias length mismatch");
  std::vector<float> out(static_cast<std::size_t>(m));
  const auto xd = x.data(), wd = weight.data(), bd = bias.data();
  for (int i = 0; i < m; ++i) {
    double acc = bd[static_cast<std::size_t>(i)];
    for (int j = 0; j < n; ++j) acc += static_cast<double>(wd[static_cast<std::size_t>(i) * n + j]) * xd[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(i)] = static_cast<float>(acc);
  }
  auto xi = x.impl(), wi = weight.impl(), bi = bias.impl();
  return make_result({m}, std::move(out), {x, weight, bias}, [xi, wi, bi, m, n](std::span<const float> g) {
    if (wants(wi)) {
      auto gw = grad_buffer(*wi);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gw[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(i)] * xi->data[static_cast<std::size_t>(j)];
    }
    if (wants(bi)) {
      auto gb = grad_buffer(*bi);
      for (int i = 0; i < m; ++i) gb[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(i)];
    }
    if (wants(xi)) {
      auto gx = grad_buffer(*xi);
      for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int i = 0; i < m; ++i) acc += static_cast<double>(g[static_cast<std::size_t>(i)]) * wi->data[static_cast<std::size_t>(i) * n + j];
        gx[static_cast<std::size_t>(j)] += static_cast<float>(acc);
      }
    }
  });
}

Tensor softmax_cross_entropy_masked(const Tensor& logits, std::span<const std::uint8_t> targets, int ignore_id,
                                    LossDiagnostics* diag) {
  require_rank(logits, 3, "softmax_cross_entropy_masked");
  const int k = logits.dim(0);
  const std::size_t hw = static_cast<std::size_t>(logits.dim(1)) * logits.dim(2);
  if (targets.size() != hw) {
    throw DimensionError("softmax_cross_entropy_masked: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(hw) + " pixels");
  }
  const auto z = logits.data();
  // Probabilities are cached for the backward pass.
  auto prob = std::make_shared<std::vector<float>>(z.size(), 0.0f);
  double total = 0.0;
  std::size_t valid = 0;
  for (std::size_t p = 0; p < hw; ++p) {
    const int t = targets[p];
    if (t == ignore_id) continue;
    if (t < 0 || t >= k) throw DimensionError("softmax_cross_entropy_masked: target id out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) mx = std::max(mx, static_cast<double>(z[c * hw + p]));
    double denom = 0.0;
    for (int c = 0; c < k; ++c) denom += std::exp(z[c * hw + p] - mx);
    for (int c = 0; c < k; ++c) (*prob)[c * hw + p] = static_cast<float>(std::exp(z[c * hw + p] - mx) / denom);
    total += -(z[static_cast<std::size_t>(t) * hw + p] - mx - std::log(denom));
    ++valid;
  }
  if (diag) {
    diag->valid_pixels = valid;
    diag->all_ignored = valid == 0;
  }
  const double loss = valid ? total / static_cast<double>(valid) : 0.0;
  std::vector<std::uint8_t> tcopy(targets.begin(), targets.end());
  auto li = logits.impl();
  return make_scalar_result(loss, {logits},
                     [li, prob, tcopy = std::move(tcopy), k, hw, valid, ignore_id](std::span<const float> g) {
                       if (valid == 0) {
                         grad_buffer(*li);
                         return;
                       }
                       auto gz = grad_buffer(*li);
                       const float s = g[0] / static_cast<float>(valid);
                       for (std::size_t p = 0; p < hw; ++p) {
                         const int t = tcopy[p];
                         if (t == ignore_id) continue;
                         for (int c = 0; c < k; ++c) {
                           const std::size_t j = c * hw + p;
                           gz[j] += s * ((*prob)[j] - (c == t ? 1.0f : 0.0f));
                         }
                       }
                     });
}

Tensor sigmoid_bce_masked(const Tensor& logits, std::span<const float> targets, std::span<const std::uint8_t> valid,
                          LossDiagnostics* diag) {
  const std::size_t n = logits.numel();
  if (targets.size() != n || (!valid.empty() && valid.size() != n))
    throw DimensionError("sigmoid_bce_masked: target or mask size mismatch");
  const auto z = logits.data();
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!valid.empty() && !valid[i]) continue;
    const double zi = z[i], y = targets[i];
    // -[y log s(z) + (1-y) log(1-s(z))] = max(z,0) - z*y + log(1 + exp(-|z|))
    total += std::max(zi, 0.0) - zi * y + std::log1p(std::exp(-std::abs(zi)));
    ++count;
  }
  if (diag) {
    diag->valid_pixels = count;
    diag->all_ignored = count == 0;
  }
  const double loss = count ? total / static_cast<double>(count) : 0.0;
  std::vector<float> tcopy(targets.begin(), targets.end());
  std::vector<std::uint8_t> vcopy(valid.begin(), valid.end());
  auto li = logits.impl();
  return make_scalar_result(loss, {logits},
                     [li, tcopy = std::move(tcopy), vcopy = std::move(vcopy), count](std::span<const float> g) {
                       auto gz = grad_buffer(*li);
                       if (count == 0) return;
                       const double s = g[0] / static_cast<double>(count);
                       for (std::size_t i = 0; i < gz.size(); ++i) {
                         if (!vcopy.empty() && !vcopy[i]) continue;
                         const double sig = 1.0 / (1.0 + std::exp(-static_cast<double>(li->data[i])));
                         gz[i] += static_cast<float>(s * (sig - tcopy[i]));
                       }
                     });
}

Tensor softmax_channels(const Tensor& logits) {
  require_rank(logits, 3, "softmax_channels");
  const int k = logits.dim(0);
  const std::size_t hw = static_cast<std::size_t>(logits.dim(1)) * logits.dim(2);
  const auto z = logits.data();
  std::vector<float> out(z.size());
  for (std::size_t p = 0; p < hw; ++p) {
    float mx = z[p];
    for (int c = 1; c < k; ++c) mx = std::max(mx, z[c * hw + p]);
    double denom = 0.0;
    for (int c = 0; c < k; ++c) denom += std::exp(static_cast<double>(z[c * hw + p] - mx));
    for (int c = 0; c < k; ++c) out[c * hw + p] = static_cast<float>(std::exp(static_cast<double>(z[c * hw + p] - mx)) / denom);
  }
  return Tensor(logits.shape(), std::move(out));
}

std::vector<std::uint8_t> argmax_channels(const Tensor& scores) {
  require_rank(scores, 3, "argmax_channels");
  const int k = scores.dim(0);
  const std::size_t hw = static_cast<std::size_t>(scores.dim(1)) * scores.dim(2);
  const auto z = scores.data();
  std::vector<std::uint8_t> out(hw, 0);
  for (std::size_t p = 0; p < hw; ++p) {
    int best = 0;
    for (int c = 1; c < k; ++c)
      if (z[c * hw + p] > z[static_cast<std::size_t>(best) * hw + p]) best = c;
    out[p] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace plarseg::numkit
