#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ssimfuse/graph.hpp"

namespace ssimfuse {

enum class Padding { Reflect, Zero };

inline const char* to_string(Padding p) { return p == Padding::Reflect ? "reflect" : "zero"; }

inline Padding padding_from_string(const std::string& s) {
  if (s == "reflect") return Padding::Reflect;
  if (s == "zero") return Padding::Zero;
  throw ArgumentError("unknown padding mode '" + s + "'");
}

enum class NormMode { Train, Infer };

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

/// Maps a padded coordinate back into [0, n). Returns -1 for zero padding
/// outside the image.
inline std::ptrdiff_t pad_index(std::ptrdiff_t i, std::ptrdiff_t n, Padding mode) {
  if (i >= 0 && i < n) return i;
  if (mode == Padding::Zero) return -1;
  if (i < 0) return -i;
  return 2 * (n - 1) - i;
}

// im2col buffers are tiled over output rows to bound memory on large images.
constexpr std::size_t kIm2colBudget = std::size_t(1) << 21;

struct ConvGeometry {
  std::size_t c, h, w, o, kh, kw, k, ph, pw, rows_per_tile;
};

inline ConvGeometry conv_geometry(const Shape& x, const Shape& wt, Padding mode) {
  if (wt.c != x.c)
    throw ShapeError("conv2d: input has " + std::to_string(x.c) + " channels, weight expects " +
                     std::to_string(wt.c));
  if (wt.h % 2 == 0 || wt.w % 2 == 0)
    throw ShapeError("conv2d: SAME padding needs odd kernel sizes, got " + wt.str());
  if (x.h == 0 || x.w == 0) throw ShapeError("conv2d: empty input " + x.str());
  const std::size_t ph = wt.h / 2, pw = wt.w / 2;
  // Reflection cannot reach further than one image extent minus the edge.
  if (mode == Padding::Reflect && (ph >= x.h || pw >= x.w))
    throw ShapeError("conv2d: kernel " + wt.str() + " larger than padded input " + x.str());
  ConvGeometry g{x.c, x.h, x.w, wt.n, wt.h, wt.w, x.c * wt.h * wt.w, ph, pw, 1};
  g.rows_per_tile = std::max<std::size_t>(1, kIm2colBudget / std::max<std::size_t>(1, g.k * g.w));
  g.rows_per_tile = std::min(g.rows_per_tile, g.h);
  return g;
}

/// Splits the output columns of kernel column `kx` into the border, where
/// `border(x, sx)` receives the padded source index (-1 for zero padding),
/// and the contiguous interior run handed to `interior(x0, x1, offset)`.
template <class Border, class Interior>
void for_columns(const ConvGeometry& g, std::size_t kx, Padding mode, Border&& border, Interior&& interior) {
  const std::ptrdiff_t w = std::ptrdiff_t(g.w);
  const std::ptrdiff_t offset = std::ptrdiff_t(kx) - std::ptrdiff_t(g.pw);
  const std::ptrdiff_t x0 = std::clamp<std::ptrdiff_t>(-offset, 0, w);
  const std::ptrdiff_t x1 = std::clamp<std::ptrdiff_t>(w - offset, x0, w);
  for (std::ptrdiff_t x = 0; x < x0; ++x) border(x, pad_index(x + offset, w, mode));
  interior(x0, x1, offset);
  for (std::ptrdiff_t x = x1; x < w; ++x) border(x, pad_index(x + offset, w, mode));
}

template <class T>
void im2col(const T* plane, const ConvGeometry& g, std::size_t y0, std::size_t y1, Padding mode,
            RowMat<T>& col) {
  const std::size_t cols = (y1 - y0) * g.w;
  col.resize(static_cast<Eigen::Index>(g.k), static_cast<Eigen::Index>(cols));
  std::size_t r = 0;
  for (std::size_t c = 0; c < g.c; ++c) {
    const T* src = plane + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx, ++r) {
        T* dst_row = col.data() + r * cols;
        for (std::size_t y = y0; y < y1; ++y) {
          T* dst = dst_row + (y - y0) * g.w;
          const auto sy = pad_index(std::ptrdiff_t(y + ky) - std::ptrdiff_t(g.ph), std::ptrdiff_t(g.h), mode);
          if (sy < 0) {
            std::fill(dst, dst + g.w, T(0));
            continue;
          }
          const T* srow = src + sy * std::ptrdiff_t(g.w);
          for_columns(
              g, kx, mode, [&](std::ptrdiff_t x, std::ptrdiff_t sx) { dst[x] = sx < 0 ? T(0) : srow[sx]; },
              [&](std::ptrdiff_t a, std::ptrdiff_t b, std::ptrdiff_t off) {
                std::copy(srow + a + off, srow + b + off, dst + a);
              });
        }
      }
    }
  }
}

template <class T>
void col2im_add(const RowMat<T>& col, const ConvGeometry& g, std::size_t y0, std::size_t y1, Padding mode,
                T* plane_grad) {
  const std::size_t cols = (y1 - y0) * g.w;
  std::size_t r = 0;
  for (std::size_t c = 0; c < g.c; ++c) {
    T* dst_plane = plane_grad + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx, ++r) {
        const T* src_row = col.data() + r * cols;
        for (std::size_t y = y0; y < y1; ++y) {
          const T* src = src_row + (y - y0) * g.w;
          const auto sy = pad_index(std::ptrdiff_t(y + ky) - std::ptrdiff_t(g.ph), std::ptrdiff_t(g.h), mode);
          if (sy < 0) continue;
          T* drow = dst_plane + sy * std::ptrdiff_t(g.w);
          for_columns(
              g, kx, mode,
              [&](std::ptrdiff_t x, std::ptrdiff_t sx) {
                if (sx >= 0) drow[sx] += src[x];
              },
              [&](std::ptrdiff_t a, std::ptrdiff_t b, std::ptrdiff_t off) {
                for (std::ptrdiff_t x = a; x < b; ++x) drow[x + off] += src[x];
              });
        }
      }
    }
  }
}

}  // namespace detail

/// Stride-1 cross-correlation with SAME-size output. Weight is (out, in, kh, kw),
/// bias holds one value per output channel.
template <class T>
Var<T> conv2d(Var<T> input, Var<T> weight, Var<T> bias, Padding mode = Padding::Reflect) {
  using namespace detail;
  Graph<T>& gr = *input.graph;
  const Shape xs = input.shape(), ws = weight.shape();
  const ConvGeometry g = conv_geometry(xs, ws, mode);
  if (bias.tensor().size() != g.o)
    throw ShapeError("conv2d: bias has " + std::to_string(bias.tensor().size()) + " values, expected " +
                     std::to_string(g.o));

  Tensor<T> out(Shape{xs.n, g.o, g.h, g.w});
  const auto& x = input.tensor();
  const auto& wt = weight.tensor();
  const auto& b = bias.tensor();
  Eigen::Map<const RowMat<T>> wmat(wt.data().data(), Eigen::Index(g.o), Eigen::Index(g.k));
  RowMat<T> col;
  const std::size_t hw = g.h * g.w;
  for (std::size_t n = 0; n < xs.n; ++n) {
    const T* plane = x.data().data() + n * g.c * hw;
    T* oplane = out.data().data() + n * g.o * hw;
    for (std::size_t y0 = 0; y0 < g.h; y0 += g.rows_per_tile) {
      const std::size_t y1 = std::min(g.h, y0 + g.rows_per_tile);
      im2col(plane, g, y0, y1, mode, col);
      StridedMap<T> omap(oplane + y0 * g.w, Eigen::Index(g.o), Eigen::Index((y1 - y0) * g.w),
                         Eigen::OuterStride<>(Eigen::Index(hw)));
      omap.noalias() = wmat * col;
      for (std::size_t o = 0; o < g.o; ++o) omap.row(Eigen::Index(o)).array() += b[o];
    }
  }

  const NodeId xi = input.id, wi = weight.id, bi = bias.id;
  return gr.record("conv2d", {xi, wi, bi}, std::move(out), [g, mode, xi, wi, bi](Graph<T>& G, NodeId self) {
    const auto& dy = G.node(self).value.grad();
    const auto& x = G.node(xi).value;
    const Shape xs = x.shape();
    auto dx = G.grad_target(xi);
    auto dw = G.grad_target(wi);
    auto db = G.grad_target(bi);
    Eigen::Map<const RowMat<T>> wmat(G.node(wi).value.data().data(), Eigen::Index(g.o), Eigen::Index(g.k));
    RowMat<T> col, dcol;
    const std::size_t hw = g.h * g.w;
    for (std::size_t n = 0; n < xs.n; ++n) {
      const T* plane = x.data().data() + n * g.c * hw;
      const T* dplane = dy.data() + n * g.o * hw;
      for (std::size_t y0 = 0; y0 < g.h; y0 += g.rows_per_tile) {
        const std::size_t y1 = std::min(g.h, y0 + g.rows_per_tile);
        ConstStridedMap<T> dmap(dplane + y0 * g.w, Eigen::Index(g.o), Eigen::Index((y1 - y0) * g.w),
                                Eigen::OuterStride<>(Eigen::Index(hw)));
        if (!db.empty()) {
          // Plain loop: Eigen's vectorized sum() peels by pointer alignment,
          // which would make results depend on heap layout.
          const std::size_t cols = (y1 - y0) * g.w;
          for (std::size_t o = 0; o < g.o; ++o) {
            const T* row = dplane + o * hw + y0 * g.w;
            T s = T(0);
            for (std::size_t i = 0; i < cols; ++i) s += row[i];
            db[o] += s;
          }
        }
        if (!dw.empty()) {
          im2col(plane, g, y0, y1, mode, col);
          Eigen::Map<RowMat<T>> dwmat(dw.data(), Eigen::Index(g.o), Eigen::Index(g.k));
          dwmat.noalias() += dmap * col.transpose();
        }
        if (!dx.empty()) {
          dcol.noalias() = wmat.transpose() * dmap;
          col2im_add(dcol, g, y0, y1, mode, dx.data() + n * g.c * hw);
        }
      }
    }
  });
}

/// max(x, slope*x); the derivative at exactly zero is taken as 1.
template <class T>
Var<T> leaky_relu(Var<T> input, T slope) {
  if (!(slope > T(0) && slope < T(1))) throw ArgumentError("leaky_relu: slope must lie in (0,1)");
  const auto& x = input.tensor();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] >= T(0) ? x[i] : slope * x[i];
  const NodeId xi = input.id;
  return input.graph->record("leaky_relu", {xi}, std::move(out), [xi, slope](Graph<T>& G, NodeId self) {
    auto dx = G.grad_target(xi);
    const auto& x = G.node(xi).value;
    const auto dy = G.node(self).value.grad();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += x[i] >= T(0) ? dy[i] : slope * dy[i];
  });
}

template <class T>
Var<T> tanh_act(Var<T> input) {
  const auto& x = input.tensor();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x[i]);
  const NodeId xi = input.id;
  return input.graph->record("tanh", {xi}, std::move(out), [xi](Graph<T>& G, NodeId self) {
    auto dx = G.grad_target(xi);
    const auto& y = G.node(self).value;
    const auto dy = y.grad();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * (T(1) - y[i] * y[i]);
  });
}

/// Running per-channel statistics of a normalization layer.
template <class T>
struct NormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;

  static NormState fresh(std::size_t channels) {
    return {Tensor<T>(Shape{1, channels, 1, 1}, T(0)), Tensor<T>(Shape{1, channels, 1, 1}, T(1))};
  }
};

struct NormOptions {
  double eps = 1e-5;
  /// Weight kept by the running statistics at each update.
  double momentum = 0.9;
};

/// Batch normalization over (batch, height, width) per channel. Train mode
/// normalizes with the current statistics and folds them into `state`; infer
/// mode applies the running statistics.
template <class T>
Var<T> norm_layer(Var<T> input, Var<T> scale, Var<T> shift, NormState<T>& state, NormMode mode,
                  NormOptions opt = {}) {
  const auto& x = input.tensor();
  const Shape s = x.shape();
  if (s.n == 0 || s.h == 0 || s.w == 0) throw ShapeError("norm_layer: zero extent in " + s.str());
  if (scale.tensor().size() != s.c || shift.tensor().size() != s.c)
    throw ShapeError("norm_layer: scale/shift need one value per channel of " + s.str());
  if (state.running_mean.size() != s.c || state.running_var.size() != s.c)
    throw ShapeError("norm_layer: running statistics do not match channels of " + s.str());

  const std::size_t hw = s.plane();
  const std::size_t count = s.n * hw;
  const T eps = T(opt.eps);
  std::vector<T> mean(s.c), inv_std(s.c);
  for (std::size_t c = 0; c < s.c; ++c) {
    if (mode == NormMode::Train) {
      T sum = 0;
      for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t i = 0; i < hw; ++i) sum += x[(n * s.c + c) * hw + i];
      const T m = sum / T(count);
      T sq = 0;
      for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t i = 0; i < hw; ++i) {
          const T d = x.data()[(n * s.c + c) * hw + i] - m;
          sq += d * d;
        }
      const T var = sq / T(count);
      mean[c] = m;
      inv_std[c] = T(1) / std::sqrt(var + eps);
      const T unbiased = count > 1 ? sq / T(count - 1) : var;
      const T mom = T(opt.momentum);
      state.running_mean[c] = mom * state.running_mean[c] + (T(1) - mom) * m;
      state.running_var[c] = mom * state.running_var[c] + (T(1) - mom) * unbiased;
    } else {
      mean[c] = state.running_mean[c];
      inv_std[c] = T(1) / std::sqrt(state.running_var[c] + eps);
    }
  }

  const auto& gamma = scale.tensor();
  const auto& beta = shift.tensor();
  Tensor<T> xhat(s), out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t base = (n * s.c + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        xhat[base + i] = (x[base + i] - mean[c]) * inv_std[c];
        out[base + i] = gamma[c] * xhat[base + i] + beta[c];
      }
    }

  const NodeId xi = input.id, gi = scale.id, bi = shift.id;
  return input.graph->record(
      "norm", {xi, gi, bi}, std::move(out),
      [xi, gi, bi, mode, s, hw, count, inv_std = std::move(inv_std), xhat = std::move(xhat)](Graph<T>& G,
                                                                                            NodeId self) {
        const auto dy = G.node(self).value.grad();
        const auto& gamma = G.node(gi).value;
        auto dx = G.grad_target(xi);
        auto dg = G.grad_target(gi);
        auto db = G.grad_target(bi);
        for (std::size_t c = 0; c < s.c; ++c) {
          T sum_dy = 0, sum_dy_xhat = 0;
          for (std::size_t n = 0; n < s.n; ++n) {
            const std::size_t base = (n * s.c + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              sum_dy += dy[base + i];
              sum_dy_xhat += dy[base + i] * xhat[base + i];
            }
          }
          if (!dg.empty()) dg[c] += sum_dy_xhat;
          if (!db.empty()) db[c] += sum_dy;
          if (dx.empty()) continue;
          const T k = gamma[c] * inv_std[c];
          if (mode == NormMode::Infer) {
            for (std::size_t n = 0; n < s.n; ++n) {
              const std::size_t base = (n * s.c + c) * hw;
              for (std::size_t i = 0; i < hw; ++i) dx[base + i] += k * dy[base + i];
            }
          } else {
            const T mdy = sum_dy / T(count), mdyx = sum_dy_xhat / T(count);
            for (std::size_t n = 0; n < s.n; ++n) {
              const std::size_t base = (n * s.c + c) * hw;
              for (std::size_t i = 0; i < hw; ++i)
                dx[base + i] += k * (dy[base + i] - mdy - xhat[base + i] * mdyx);
            }
          }
        }
      });
}

/// a*x + b elementwise.
template <class T>
Var<T> affine(Var<T> input, T a, T b) {
  const auto& x = input.tensor();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i] + b;
  const NodeId xi = input.id;
  return input.graph->record("affine", {xi}, std::move(out), [xi, a](Graph<T>& G, NodeId self) {
    auto dx = G.grad_target(xi);
    const auto dy = G.node(self).value.grad();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += a * dy[i];
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.tensor()[i] + b.tensor()[i];
  const NodeId ai = a.id, bi = b.id;
  return a.graph->record("add", {ai, bi}, std::move(out), [ai, bi](Graph<T>& G, NodeId self) {
    const auto dy = G.node(self).value.grad();
    for (NodeId in : {ai, bi}) {
      auto d = G.grad_target(in);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
    }
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.tensor()[i] * b.tensor()[i];
  const NodeId ai = a.id, bi = b.id;
  return a.graph->record("mul", {ai, bi}, std::move(out), [ai, bi](Graph<T>& G, NodeId self) {
    const auto dy = G.node(self).value.grad();
    const auto& av = G.node(ai).value;
    const auto& bv = G.node(bi).value;
    auto da = G.grad_target(ai);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i] * bv[i];
    auto db = G.grad_target(bi);
    for (std::size_t i = 0; i < db.size(); ++i) db[i] += dy[i] * av[i];
  });
}

template <class T>
Var<T> sum(Var<T> input) {
  T acc = 0;
  for (T v : input.value()) acc += v;
  const NodeId xi = input.id;
  return input.graph->record("sum", {xi}, Tensor<T>::scalar(acc), [xi](Graph<T>& G, NodeId self) {
    const T dy = G.node(self).value.grad()[0];
    for (T& d : G.grad_target(xi)) d += dy;
  });
}

template <class T>
Var<T> mean(Var<T> input) {
  return affine(sum(input), T(1) / T(input.tensor().size()), T(0));
}

/// sum_k coeffs[k] * terms[k] + offset, all terms of one shape.
template <class T>
Var<T> linear_combination(const std::vector<Var<T>>& terms, const std::vector<T>& coeffs, T offset = T(0)) {
  if (terms.empty() || terms.size() != coeffs.size())
    throw ArgumentError("linear_combination: need matching non-empty terms and coefficients");
  const Shape s = terms.front().shape();
  std::vector<NodeId> ids;
  for (const auto& t : terms) {
    require_same_shape(t.shape(), s, "linear_combination");
    ids.push_back(t.id);
  }
  Tensor<T> out(s);
  for (std::size_t i = 0; i < out.size(); ++i) {
    T acc = coeffs[0] * terms[0].tensor()[i];
    for (std::size_t k = 1; k < terms.size(); ++k) acc += coeffs[k] * terms[k].tensor()[i];
    out[i] = acc + offset;
  }
  return terms.front().graph->record("lincomb", ids, std::move(out), [ids, coeffs](Graph<T>& G, NodeId self) {
    const auto dy = G.node(self).value.grad();
    for (std::size_t k = 0; k < ids.size(); ++k) {
      auto d = G.grad_target(ids[k]);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += coeffs[k] * dy[i];
    }
  });
}

/// Normalized 2-D Gaussian kernel of odd `size`, shape (1,1,size,size).
inline Tensor<double> gaussian_window(int size, double sigma) {
  if (size < 3 || size % 2 == 0) throw ArgumentError("gaussian_window: size must be odd and >= 3");
  if (!(sigma > 0)) throw ArgumentError("gaussian_window: sigma must be positive");
  const int half = size / 2;
  std::vector<double> g1(static_cast<std::size_t>(size));
  double s1 = 0;
  for (int i = 0; i < size; ++i) {
    const double d = i - half;
    g1[std::size_t(i)] = std::exp(-(d * d) / (2 * sigma * sigma));
    s1 += g1[std::size_t(i)];
  }
  for (double& v : g1) v /= s1;
  const auto n = static_cast<std::size_t>(size);
  Tensor<double> k(Shape{1, 1, n, n});
  double total = 0;
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) total += (k.at(0, 0, y, x) = g1[y] * g1[x]);
  for (double& v : k.vec()) v /= total;
  return k;
}

}  // namespace ssimfuse
