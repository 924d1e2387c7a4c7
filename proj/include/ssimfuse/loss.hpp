#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "ssimfuse/config.hpp"
#include "ssimfuse/graph.hpp"
#include "ssimfuse/ops.hpp"

namespace ssimfuse {

enum class StructureTerm {
  Reference,  // s = (cov + Cs) / (sigma_i * sigma_j + Cs)
  Printed     // s = (cov + Cs) / (sigma_i + sigma_j + Cs)
};

struct SSIMParams {
  int window_size = 11;
  double sigma_g = 1.5;
  double dynamic_range = 1.0;
  double c_l = 1e-4;    // (0.01 L)^2
  double c_c = 9e-4;    // (0.03 L)^2
  double c_s = 4.5e-4;  // c_c / 2
  StructureTerm structure = StructureTerm::Reference;

  static SSIMParams standard(int window = 11, double sigma = 1.5, double range = 1.0) {
    SSIMParams p;
    p.window_size = window;
    p.sigma_g = sigma;
    p.dynamic_range = range;
    p.c_l = (0.01 * range) * (0.01 * range);
    p.c_c = (0.03 * range) * (0.03 * range);
    p.c_s = p.c_c / 2;
    return p;
  }

  static SSIMParams from_config(const FusionConfig& c) {
    SSIMParams p = standard(c.ssim_window, c.ssim_sigma);
    p.structure = c.ssim_structure == "printed" ? StructureTerm::Printed : StructureTerm::Reference;
    return p;
  }

  /// With the reference structure term and c_s = c_c/2 the product l*c*s
  /// reduces to the two-factor form, which stays smooth at zero variance.
  bool collapses() const { return structure == StructureTerm::Reference && c_s == c_c / 2; }

  void validate() const {
    if (window_size < 3 || window_size % 2 == 0) throw ArgumentError("ssim: window size must be odd and >= 3");
    if (!(sigma_g > 0)) throw ArgumentError("ssim: sigma_g must be positive");
    if (!(c_l > 0 && c_c > 0 && c_s > 0)) throw ArgumentError("ssim: stabilizing constants must be positive");
  }
};

namespace detail {

/// Valid-region correlation of one plane with a k*k kernel.
inline void valid_filter(const double* src, std::size_t h, std::size_t w, const std::vector<double>& kern,
                         std::size_t k, double* dst) {
  const std::size_t vh = h - k + 1, vw = w - k + 1;
  for (std::size_t y = 0; y < vh; ++y)
    for (std::size_t x = 0; x < vw; ++x) {
      double acc = 0;
      for (std::size_t u = 0; u < k; ++u) {
        const double* row = src + (y + u) * w + x;
        const double* kr = kern.data() + u * k;
        for (std::size_t v = 0; v < k; ++v) acc += kr[v] * row[v];
      }
      dst[y * vw + x] = acc;
    }
}

/// Adjoint of valid_filter: scatters window values back onto the full plane.
inline void valid_filter_adjoint_add(const double* m, std::size_t h, std::size_t w, const std::vector<double>& kern,
                                     std::size_t k, double* dst) {
  const std::size_t vh = h - k + 1, vw = w - k + 1;
  for (std::size_t y = 0; y < vh; ++y)
    for (std::size_t x = 0; x < vw; ++x) {
      const double mv = m[y * vw + x];
      for (std::size_t u = 0; u < k; ++u) {
        double* row = dst + (y + u) * w + x;
        const double* kr = kern.data() + u * k;
        for (std::size_t v = 0; v < k; ++v) row[v] += kr[v] * mv;
      }
    }
}

/// Per-window SSIM value and its partial derivatives with respect to the
/// local statistics (means, variances, covariance).
struct WindowSSIM {
  double value, d_mx, d_my, d_vx, d_vy, d_cxy;
};

inline WindowSSIM window_ssim(double mx, double my, double vx, double vy, double cxy, const SSIMParams& p) {
  WindowSSIM r{};
  if (p.collapses()) {
    const double a1 = 2 * mx * my + p.c_l, a2 = 2 * cxy + p.c_c;
    const double b1 = mx * mx + my * my + p.c_l, b2 = vx + vy + p.c_c;
    const double den = b1 * b2;
    r.value = a1 * a2 / den;
    r.d_mx = (2 * my * a2) / den - r.value * 2 * mx / b1;
    r.d_my = (2 * mx * a2) / den - r.value * 2 * my / b1;
    r.d_vx = -r.value / b2;
    r.d_vy = -r.value / b2;
    r.d_cxy = 2 * a1 / den;
    return r;
  }
  const double sx = std::sqrt(std::max(vx, 0.0)), sy = std::sqrt(std::max(vy, 0.0));
  const double dl = mx * mx + my * my + p.c_l;
  const double l = (2 * mx * my + p.c_l) / dl;
  const double dc = sx * sx + sy * sy + p.c_c;
  const double c = (2 * sx * sy + p.c_c) / dc;
  double s, ds_sx, ds_sy, ds_cxy;
  if (p.structure == StructureTerm::Reference) {
    const double d = sx * sy + p.c_s;
    s = (cxy + p.c_s) / d;
    ds_sx = -s * sy / d;
    ds_sy = -s * sx / d;
    ds_cxy = 1 / d;
  } else {
    const double d = sx + sy + p.c_s;
    s = (cxy + p.c_s) / d;
    ds_sx = -s / d;
    ds_sy = -s / d;
    ds_cxy = 1 / d;
  }
  r.value = l * c * s;
  r.d_mx = c * s * (2 * my - 2 * mx * l) / dl;
  r.d_my = c * s * (2 * mx - 2 * my * l) / dl;
  const double df_sx = l * (s * (2 * sy - 2 * sx * c) / dc + c * ds_sx);
  const double df_sy = l * (s * (2 * sx - 2 * sy * c) / dc + c * ds_sy);
  // Zero standard deviation: sqrt is not differentiable there; use 0.
  r.d_vx = sx > 0 ? df_sx / (2 * sx) : 0.0;
  r.d_vy = sy > 0 ? df_sy / (2 * sy) : 0.0;
  r.d_cxy = l * c * ds_cxy;
  return r;
}

}  // namespace detail

/// Mean SSIM over all valid Gaussian windows of every plane. Differentiable
/// with respect to both inputs.
template <class T>
Var<T> ssim(Var<T> i, Var<T> j, const SSIMParams& p = SSIMParams::standard()) {
  using namespace detail;
  p.validate();
  require_same_shape(i.shape(), j.shape(), "ssim");
  const Shape s = i.shape();
  const auto k = std::size_t(p.window_size);
  if (s.h < k || s.w < k)
    throw ShapeError("ssim: image " + s.str() + " smaller than window " + std::to_string(k));
  const std::vector<double> kern = gaussian_window(p.window_size, p.sigma_g).vec();

  const std::size_t planes = s.n * s.c, hw = s.plane();
  const std::size_t vh = s.h - k + 1, vw = s.w - k + 1, nv = vh * vw;
  // Per-window partials, pre-scaled by 1/N; filled during forward for reuse.
  struct Cache {
    std::vector<double> ax, ay, bx, by, cc;
  };
  auto cache = std::make_shared<Cache>();
  for (auto* v : {&cache->ax, &cache->ay, &cache->bx, &cache->by, &cache->cc}) v->assign(planes * nv, 0.0);

  const double inv_n = 1.0 / double(planes * nv);
  std::vector<double> x(hw), y(hw), xx(hw), yy(hw), xy(hw);
  std::vector<double> mx(nv), my(nv), exx(nv), eyy(nv), exy(nv);
  double total = 0;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    for (std::size_t q = 0; q < hw; ++q) {
      x[q] = double(i.tensor()[pl * hw + q]);
      y[q] = double(j.tensor()[pl * hw + q]);
      xx[q] = x[q] * x[q];
      yy[q] = y[q] * y[q];
      xy[q] = x[q] * y[q];
    }
    valid_filter(x.data(), s.h, s.w, kern, k, mx.data());
    valid_filter(y.data(), s.h, s.w, kern, k, my.data());
    valid_filter(xx.data(), s.h, s.w, kern, k, exx.data());
    valid_filter(yy.data(), s.h, s.w, kern, k, eyy.data());
    valid_filter(xy.data(), s.h, s.w, kern, k, exy.data());
    for (std::size_t q = 0; q < nv; ++q) {
      const double vx = exx[q] - mx[q] * mx[q];
      const double vy = eyy[q] - my[q] * my[q];
      const double cxy = exy[q] - mx[q] * my[q];
      const WindowSSIM w = window_ssim(mx[q], my[q], vx, vy, cxy, p);
      total += w.value;
      const std::size_t o = pl * nv + q;
      // Chain through v = E[x^2] - mu^2 and c = E[xy] - mu_x mu_y.
      cache->ax[o] = inv_n * (w.d_mx - 2 * mx[q] * w.d_vx - my[q] * w.d_cxy);
      cache->ay[o] = inv_n * (w.d_my - 2 * my[q] * w.d_vy - mx[q] * w.d_cxy);
      cache->bx[o] = inv_n * w.d_vx;
      cache->by[o] = inv_n * w.d_vy;
      cache->cc[o] = inv_n * w.d_cxy;
    }
  }

  const NodeId ii = i.id, ji = j.id;
  return i.graph->record(
      "ssim", {ii, ji}, Tensor<T>::scalar(T(total * inv_n)),
      [ii, ji, s, k, kern, cache, planes, hw, nv](Graph<T>& G, NodeId self) {
        const double up = double(G.node(self).value.grad()[0]);
        auto di = G.grad_target(ii);
        auto dj = G.grad_target(ji);
        const auto& iv = G.node(ii).value;
        const auto& jv = G.node(ji).value;
        std::vector<double> fa(hw), fb(hw), fc(hw);
        auto adjoint = [&](const std::vector<double>& src, std::size_t pl, std::vector<double>& dst) {
          std::fill(dst.begin(), dst.end(), 0.0);
          detail::valid_filter_adjoint_add(src.data() + pl * nv, s.h, s.w, kern, k, dst.data());
        };
        for (std::size_t pl = 0; pl < planes; ++pl) {
          adjoint(cache->cc, pl, fc);
          if (!di.empty()) {
            adjoint(cache->ax, pl, fa);
            adjoint(cache->bx, pl, fb);
            for (std::size_t q = 0; q < hw; ++q) {
              const std::size_t o = pl * hw + q;
              di[o] += T(up * (fa[q] + 2 * double(iv[o]) * fb[q] + double(jv[o]) * fc[q]));
            }
          }
          if (!dj.empty()) {
            adjoint(cache->ay, pl, fa);
            adjoint(cache->by, pl, fb);
            for (std::size_t q = 0; q < hw; ++q) {
              const std::size_t o = pl * hw + q;
              dj[o] += T(up * (fa[q] + 2 * double(jv[o]) * fb[q] + double(iv[o]) * fc[q]));
            }
          }
        }
      });
}

/// Sum of the root-mean-square deviations of `f` from `i1` and from `i2`.
template <class T>
Var<T> l2_term(Var<T> f, Var<T> i1, Var<T> i2) {
  require_same_shape(f.shape(), i1.shape(), "l2_term");
  require_same_shape(f.shape(), i2.shape(), "l2_term");
  const std::size_t n = f.tensor().size();
  auto rms = [&](const Tensor<T>& a) {
    double acc = 0;
    for (std::size_t q = 0; q < n; ++q) {
      const double d = double(f.tensor()[q]) - double(a[q]);
      acc += d * d;
    }
    return std::sqrt(acc / double(n));
  };
  const double r1 = rms(i1.tensor()), r2 = rms(i2.tensor());
  const NodeId fi = f.id, ai = i1.id, bi = i2.id;
  return f.graph->record("l2_term", {fi, ai, bi}, Tensor<T>::scalar(T(r1 + r2)),
                         [fi, ai, bi, r1, r2, n](Graph<T>& G, NodeId self) {
                           const double up = double(G.node(self).value.grad()[0]);
                           const auto& fv = G.node(fi).value;
                           auto df = G.grad_target(fi);
                           for (auto [src, r] : {std::pair{ai, r1}, std::pair{bi, r2}}) {
                             if (r == 0) continue;  // the norm has no gradient at zero
                             const auto& av = G.node(src).value;
                             auto da = G.grad_target(src);
                             const double k = up / (double(n) * r);
                             for (std::size_t q = 0; q < n; ++q) {
                               const double g = k * (double(fv[q]) - double(av[q]));
                               if (!df.empty()) df[q] += T(g);
                               if (!da.empty()) da[q] -= T(g);
                             }
                           }
                         });
}

/// Loss nodes of one fused image: L_SSIM components, the l2 term and the total.
template <class T>
struct LossTerms {
  Var<T> ssim_a;     // ssim(f, i1)
  Var<T> ssim_b;     // ssim(f, i2)
  Var<T> ssim_loss;  // (1 - ssim_a) + (1 - ssim_b)
  Var<T> l2;
  Var<T> total;
};

/// lambda * L_SSIM + (1 - lambda) * L_l2.
template <class T>
LossTerms<T> total_loss(Var<T> f, Var<T> i1, Var<T> i2, double lambda, const SSIMParams& p = SSIMParams::standard()) {
  if (!(lambda >= 0 && lambda <= 1)) throw ArgumentError("total_loss: lambda must lie in [0,1]");
  LossTerms<T> t;
  t.ssim_a = ssim(f, i1, p);
  t.ssim_b = ssim(f, i2, p);
  t.ssim_loss = linear_combination<T>({t.ssim_a, t.ssim_b}, {T(-1), T(-1)}, T(2));
  t.l2 = l2_term(f, i1, i2);
  t.total = linear_combination<T>({t.ssim_loss, t.l2}, {T(lambda), T(1 - lambda)});
  return t;
}

/// Plain-value SSIM between two images of equal shape.
template <class T>
double ssim_value(const Tensor<T>& a, const Tensor<T>& b, const SSIMParams& p = SSIMParams::standard()) {
  Graph<T> g;
  return double(ssim(g.constant(a), g.constant(b), p).tensor().item());
}

}  // namespace ssimfuse
