#include "topoforge/nn/ops.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

namespace topoforge::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Output pixels per GEMM call; batches small feature maps so the products stay efficient.
constexpr int kColumnsPerChunk = 512;

struct ConvGeometry {
  int n, cin, h, w, cout, k, stride, pad, ho, wo;
  int patch() const { return cin * k * k; }
  int pixels() const { return ho * wo; }
  int chunk() const { return std::max(1, std::min(n, kColumnsPerChunk / pixels())); }
};

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad) {
  if (stride < 1 || pad < 0) throw ParameterError("conv2d: need stride >= 1 and pad >= 0");
  if (w.h() != w.w()) throw ParameterError("conv2d: kernel must be square");
  if (x.c() != w.c()) {
    throw ParameterError("conv2d: input has " + std::to_string(x.c()) + " channels, kernel expects " +
                         std::to_string(w.c()));
  }
  ConvGeometry g{x.n(), x.c(), x.h(), x.w(), w.n(), w.h(), stride, pad, 0, 0};
  g.ho = conv_output_size(g.h, g.k, stride, pad);
  g.wo = conv_output_size(g.w, g.k, stride, pad);
  return g;
}

// Valid output-column range [lo, hi) for kernel offset kx: 0 <= ox * stride - pad + kx < w.
inline void valid_columns(const ConvGeometry& g, int kx, int& lo, int& hi) {
  const int first = g.pad - kx;  // smallest ox * stride that lands inside
  lo = first <= 0 ? 0 : (first + g.stride - 1) / g.stride;
  const int last = g.w - 1 + g.pad - kx;
  hi = last < 0 ? 0 : std::min(g.wo, last / g.stride + 1);
  lo = std::min(lo, hi);
}

// cols(row = (ci, ky, kx), col = (sample, oy, ox)) for samples [n0, n0 + nc).
template <typename T>
void im2col(const Tensor<T>& x, const ConvGeometry& g, int n0, int nc, T* cols) {
  const int pixels = g.pixels();
  const std::size_t stride_row = static_cast<std::size_t>(nc) * pixels;
  for (int ci = 0; ci < g.cin; ++ci) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        int lo, hi;
        valid_columns(g, kx, lo, hi);
        T* row = cols + static_cast<std::size_t>((ci * g.k + ky) * g.k + kx) * stride_row;
        for (int s = 0; s < nc; ++s) {
          const T* src = x.plane_ptr(n0 + s, ci);
          T* dst = row + static_cast<std::size_t>(s) * pixels;
          for (int oy = 0; oy < g.ho; ++oy) {
            const int iy = oy * g.stride - g.pad + ky;
            T* out = dst + oy * g.wo;
            if (iy < 0 || iy >= g.h) {
              std::fill(out, out + g.wo, T(0));
              continue;
            }
            std::fill(out, out + lo, T(0));
            std::fill(out + hi, out + g.wo, T(0));
            const T* in = src + iy * g.w;
            const int shift = kx - g.pad;
            if (g.stride == 1) {
              std::copy(in + lo + shift, in + hi + shift, out + lo);
            } else {
              for (int ox = lo; ox < hi; ++ox) out[ox] = in[ox * g.stride + shift];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, int n0, int nc, Tensor<T>& dx) {
  const int pixels = g.pixels();
  const std::size_t stride_row = static_cast<std::size_t>(nc) * pixels;
  for (int ci = 0; ci < g.cin; ++ci) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        int lo, hi;
        valid_columns(g, kx, lo, hi);
        const T* row = cols + static_cast<std::size_t>((ci * g.k + ky) * g.k + kx) * stride_row;
        for (int s = 0; s < nc; ++s) {
          T* dst = dx.plane_ptr(n0 + s, ci);
          const T* src = row + static_cast<std::size_t>(s) * pixels;
          for (int oy = 0; oy < g.ho; ++oy) {
            const int iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.h) continue;
            const T* in = src + oy * g.wo;
            T* out = dst + iy * g.w;
            const int shift = kx - g.pad;
            for (int ox = lo; ox < hi; ++ox) out[ox * g.stride + shift] += in[ox];
          }
        }
      }
    }
  }
}

}  // namespace

int conv_output_size(int in, int kernel, int stride, int pad) {
  const int span = in + 2 * pad - kernel;
  if (span < 0) throw ParameterError("conv2d: kernel larger than padded input");
  return span / stride + 1;
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const NoDeduce<Tensor<T>>* bias, int stride,
                         int pad) {
  const ConvGeometry g = conv_geometry(x, w, stride, pad);
  if (bias && (bias->size() != static_cast<std::size_t>(g.cout))) {
    throw ParameterError("conv2d: bias length differs from output channels");
  }
  Tensor<T> y(g.n, g.cout, g.ho, g.wo);
  const int pixels = g.pixels();
  const int chunk = g.chunk();
  std::vector<T> cols(static_cast<std::size_t>(g.patch()) * chunk * pixels);
  RowMat<T> out;
  const Eigen::Map<const RowMat<T>> wmat(w.data(), g.cout, g.patch());
  for (int n0 = 0; n0 < g.n; n0 += chunk) {
    const int nc = std::min(chunk, g.n - n0);
    const int cols_n = nc * pixels;
    im2col(x, g, n0, nc, cols.data());
    const Eigen::Map<const RowMat<T>> cmat(cols.data(), g.patch(), cols_n);
    out.noalias() = wmat * cmat;
    for (int s = 0; s < nc; ++s) {
      for (int co = 0; co < g.cout; ++co) {
        const T b = bias ? (*bias)[co] : T(0);
        const T* src = out.data() + static_cast<std::size_t>(co) * cols_n + s * pixels;
        T* dst = y.plane_ptr(n0 + s, co);
        for (int p = 0; p < pixels; ++p) dst[p] = src[p] + b;
      }
    }
  }
  return y;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, int stride,
                     int pad, NoDeduce<Tensor<T>>* dx, Tensor<T>& dw, NoDeduce<Tensor<T>>* db) {
  const ConvGeometry g = conv_geometry(x, w, stride, pad);
  if (dy.n() != g.n || dy.c() != g.cout || dy.h() != g.ho || dy.w() != g.wo) {
    throw ParameterError("conv2d backward: gradient shape " + dy.shape_string() + " does not match output");
  }
  w.require_same(dw, "conv2d backward (dw)");
  if (dx) *dx = Tensor<T>::zeros_like(x);
  const int pixels = g.pixels();
  const int chunk = g.chunk();
  std::vector<T> cols(static_cast<std::size_t>(g.patch()) * chunk * pixels);
  RowMat<T> grad(g.cout, static_cast<Eigen::Index>(chunk) * pixels);
  RowMat<T> dcols;
  const Eigen::Map<const RowMat<T>> wmat(w.data(), g.cout, g.patch());
  Eigen::Map<RowMat<T>> dwmat(dw.data(), g.cout, g.patch());
  for (int n0 = 0; n0 < g.n; n0 += chunk) {
    const int nc = std::min(chunk, g.n - n0);
    const int cols_n = nc * pixels;
    for (int s = 0; s < nc; ++s) {
      for (int co = 0; co < g.cout; ++co) {
        const T* src = dy.plane_ptr(n0 + s, co);
        std::copy(src, src + pixels, grad.data() + static_cast<std::size_t>(co) * cols_n + s * pixels);
      }
    }
    const Eigen::Map<const RowMat<T>> gmat(grad.data(), g.cout, cols_n);
    if (db) {
      for (int co = 0; co < g.cout; ++co) (*db)[co] += gmat.row(co).sum();
    }
    im2col(x, g, n0, nc, cols.data());
    const Eigen::Map<const RowMat<T>> cmat(cols.data(), g.patch(), cols_n);
    dwmat.noalias() += gmat * cmat.transpose();
    if (dx) {
      dcols.noalias() = wmat.transpose() * gmat;
      col2im_add(dcols.data(), g, n0, nc, *dx);
    }
  }
}

template <typename T>
BatchNormState<T>::BatchNormState(int channels_, bool affine_)
    : channels(channels_),
      affine(affine_),
      running_mean(1, channels_, 1, 1, T(0)),
      running_var(1, channels_, 1, 1, T(1)) {
  if (affine) {
    scale = Tensor<T>(1, channels, 1, 1, T(1));
    shift = Tensor<T>(1, channels, 1, 1, T(0));
  }
}

template <typename T>
void batch_statistics(const Tensor<T>& x, std::vector<double>& mean, std::vector<double>& var) {
  const int c_count = x.c();
  const std::size_t plane = x.plane();
  const double count = static_cast<double>(x.n()) * plane;
  mean.assign(c_count, 0.0);
  var.assign(c_count, 0.0);
  for (int c = 0; c < c_count; ++c) {
    double s = 0.0;
    for (int n = 0; n < x.n(); ++n) {
      const T* p = x.plane_ptr(n, c);
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
    }
    const double mu = s / count;
    double q = 0.0;
    for (int n = 0; n < x.n(); ++n) {
      const T* p = x.plane_ptr(n, c);
      for (std::size_t i = 0; i < plane; ++i) q += (p[i] - mu) * (p[i] - mu);
    }
    mean[c] = mu;
    var[c] = q / count;
  }
}

template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, BatchNormState<T>& st, BatchNormCache<T>& cache) {
  if (x.c() != st.channels) {
    throw ParameterError("batchnorm: input has " + std::to_string(x.c()) + " channels, state has " +
                         std::to_string(st.channels));
  }
  const std::size_t plane = x.plane();
  const std::size_t count = static_cast<std::size_t>(x.n()) * plane;
  std::vector<double> mean(st.channels), var(st.channels);
  if (st.training) {
    if (count < 2) throw ParameterError("batchnorm: training mode needs N*H*W >= 2");
    batch_statistics(x, mean, var);
    const double unbias = static_cast<double>(count) / static_cast<double>(count - 1);
    for (int c = 0; c < st.channels; ++c) {
      st.running_mean[c] = static_cast<T>((1 - st.momentum) * st.running_mean[c] + st.momentum * mean[c]);
      st.running_var[c] =
          static_cast<T>((1 - st.momentum) * st.running_var[c] + st.momentum * var[c] * unbias);
    }
    st.stats_ready = true;
  } else {
    if (!st.stats_ready) throw StateError("batchnorm: evaluation mode before running statistics exist");
    for (int c = 0; c < st.channels; ++c) {
      mean[c] = st.running_mean[c];
      var[c] = st.running_var[c];
    }
  }
  cache.training = st.training;
  cache.xhat = Tensor<T>::zeros_like(x);
  cache.inv_std.assign(st.channels, T(0));
  Tensor<T> y = Tensor<T>::zeros_like(x);
  for (int c = 0; c < st.channels; ++c) {
    const T inv = static_cast<T>(1.0 / std::sqrt(var[c] + static_cast<double>(st.eps)));
    const T mu = static_cast<T>(mean[c]);
    cache.inv_std[c] = inv;
    const T g = st.affine ? st.scale[c] : T(1);
    const T b = st.affine ? st.shift[c] : T(0);
    for (int n = 0; n < x.n(); ++n) {
      const T* src = x.plane_ptr(n, c);
      T* xh = cache.xhat.plane_ptr(n, c);
      T* dst = y.plane_ptr(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        xh[i] = (src[i] - mu) * inv;
        dst[i] = g * xh[i] + b;
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> batchnorm_backward(const Tensor<T>& dy, const BatchNormState<T>& st,
                             const BatchNormCache<T>& cache, Tensor<T>* dscale, Tensor<T>* dshift) {
  dy.require_same(cache.xhat, "batchnorm backward");
  if (st.affine && (!dscale || !dshift)) throw ParameterError("batchnorm backward: missing affine grads");
  const std::size_t plane = dy.plane();
  const double count = static_cast<double>(dy.n()) * plane;
  Tensor<T> dx = Tensor<T>::zeros_like(dy);
  for (int c = 0; c < st.channels; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int n = 0; n < dy.n(); ++n) {
      const T* g = dy.plane_ptr(n, c);
      const T* xh = cache.xhat.plane_ptr(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += g[i];
        sum_dy_xhat += g[i] * xh[i];
      }
    }
    const T gamma = st.affine ? st.scale[c] : T(1);
    if (st.affine) {
      (*dscale)[c] += static_cast<T>(sum_dy_xhat);
      (*dshift)[c] += static_cast<T>(sum_dy);
    }
    const T inv = cache.inv_std[c];
    if (cache.training) {
      const T mean_dy = static_cast<T>(sum_dy / count);
      const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / count);
      for (int n = 0; n < dy.n(); ++n) {
        const T* g = dy.plane_ptr(n, c);
        const T* xh = cache.xhat.plane_ptr(n, c);
        T* out = dx.plane_ptr(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          out[i] = gamma * inv * (g[i] - mean_dy - xh[i] * mean_dy_xhat);
        }
      }
    } else {
      for (int n = 0; n < dy.n(); ++n) {
        const T* g = dy.plane_ptr(n, c);
        T* out = dx.plane_ptr(n, c);
        for (std::size_t i = 0; i < plane; ++i) out[i] = gamma * inv * g[i];
      }
    }
  }
  return dx;
}

template <typename T>
Tensor<T> maxpool2_forward(const Tensor<T>& x, std::vector<std::uint32_t>& argmax) {
  if (x.h() % 2 != 0 || x.w() % 2 != 0) {
    throw ParameterError("maxpool2: spatial dims must be even, got " + x.shape_string());
  }
  Tensor<T> y(x.n(), x.c(), x.h() / 2, x.w() / 2);
  argmax.resize(y.size());
  std::size_t o = 0;
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      for (int oy = 0; oy < y.h(); ++oy) {
        for (int ox = 0; ox < y.w(); ++ox, ++o) {
          std::size_t best = x.offset(n, c, 2 * oy, 2 * ox);
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const std::size_t idx = x.offset(n, c, 2 * oy + dy, 2 * ox + dx);
              if (x[idx] > x[best]) best = idx;
            }
          }
          y[o] = x[best];
          argmax[o] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> maxpool2_backward(const Tensor<T>& dy, const std::vector<std::uint32_t>& argmax,
                            const std::array<int, 4>& in) {
  if (argmax.size() != dy.size()) throw ParameterError("maxpool2 backward: argmax size mismatch");
  Tensor<T> dx(in[0], in[1], in[2], in[3]);
  for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax[i]] += dy[i];
  return dx;
}

template <typename T>
Tensor<T> upsample2_forward(const Tensor<T>& x) {
  Tensor<T> y(x.n(), x.c(), 2 * x.h(), 2 * x.w());
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const T* src = x.plane_ptr(n, c);
      T* dst = y.plane_ptr(n, c);
      for (int oy = 0; oy < y.h(); ++oy) {
        for (int ox = 0; ox < y.w(); ++ox) dst[oy * y.w() + ox] = src[(oy / 2) * x.w() + ox / 2];
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& dy) {
  if (dy.h() % 2 != 0 || dy.w() % 2 != 0) throw ParameterError("upsample2 backward: odd gradient dims");
  Tensor<T> dx(dy.n(), dy.c(), dy.h() / 2, dy.w() / 2);
  for (int n = 0; n < dy.n(); ++n) {
    for (int c = 0; c < dy.c(); ++c) {
      const T* src = dy.plane_ptr(n, c);
      T* dst = dx.plane_ptr(n, c);
      for (int oy = 0; oy < dy.h(); ++oy) {
        for (int ox = 0; ox < dy.w(); ++ox) dst[(oy / 2) * dx.w() + ox / 2] += src[oy * dy.w() + ox];
      }
    }
  }
  return dx;
}

template <typename T>
Tensor<T> resize_nearest(const Tensor<T>& x, int height, int width) {
  Tensor<T> y(x.n(), x.c(), height, width);
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      for (int oy = 0; oy < height; ++oy) {
        const int iy = static_cast<int>(static_cast<long long>(oy) * x.h() / height);
        for (int ox = 0; ox < width; ++ox) {
          const int ix = static_cast<int>(static_cast<long long>(ox) * x.w() / width);
          y.at(n, c, oy, ox) = x.at(n, c, iy, ix);
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.vec()) v = v > T(0) ? v : T(0);
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& dy, const Tensor<T>& y) {
  dy.require_same(y, "relu backward");
  Tensor<T> dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (!(y[i] > T(0))) dx[i] = T(0);
  }
  return dx;
}

template <typename T>
Tensor<T> sigmoid_forward(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.vec()) {
    if (v >= T(0)) {
      v = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      v = e / (T(1) + e);
    }
  }
  return y;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& dy, const Tensor<T>& y) {
  dy.require_same(y, "sigmoid backward");
  Tensor<T> dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= y[i] * (T(1) - y[i]);
  return dx;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
    throw ParameterError("concat_channels: " + a.shape_string() + " vs " + b.shape_string());
  }
  Tensor<T> y(a.n(), a.c() + b.c(), a.h(), a.w());
  const std::size_t plane = a.plane();
  for (int n = 0; n < a.n(); ++n) {
    std::copy(a.plane_ptr(n, 0), a.plane_ptr(n, 0) + a.c() * plane, y.plane_ptr(n, 0));
    std::copy(b.plane_ptr(n, 0), b.plane_ptr(n, 0) + b.c() * plane, y.plane_ptr(n, a.c()));
  }
  return y;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& dy, int channels) {
  if (channels < 1 || channels >= dy.c()) throw ParameterError("split_channels: bad split point");
  Tensor<T> a(dy.n(), channels, dy.h(), dy.w());
  Tensor<T> b(dy.n(), dy.c() - channels, dy.h(), dy.w());
  const std::size_t plane = dy.plane();
  for (int n = 0; n < dy.n(); ++n) {
    std::copy(dy.plane_ptr(n, 0), dy.plane_ptr(n, 0) + channels * plane, a.plane_ptr(n, 0));
    std::copy(dy.plane_ptr(n, channels), dy.plane_ptr(n, 0) + dy.c() * plane, b.plane_ptr(n, 0));
  }
  return {std::move(a), std::move(b)};
}

template <typename T>
LossResult<T> mae_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  pred.require_same(target, "mae_loss");
  LossResult<T> r;
  r.grad = Tensor<T>::zeros_like(pred);
  const double count = static_cast<double>(pred.size());
  const T unit = static_cast<T>(1.0 / count);
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const T d = pred[i] - target[i];
    total += std::abs(static_cast<double>(d));
    r.grad[i] = d > T(0) ? unit : (d < T(0) ? -unit : T(0));
  }
  r.loss = total / count;
  return r;
}

#define TOPOFORGE_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, int, int); \
  template void conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int,    \
                                Tensor<T>*, Tensor<T>&, Tensor<T>*);                               \
  template struct BatchNormState<T>;                                                               \
  template void batch_statistics(const Tensor<T>&, std::vector<double>&, std::vector<double>&);    \
  template Tensor<T> batchnorm_forward(const Tensor<T>&, BatchNormState<T>&, BatchNormCache<T>&);  \
  template Tensor<T> batchnorm_backward(const Tensor<T>&, const BatchNormState<T>&,                \
                                        const BatchNormCache<T>&, Tensor<T>*, Tensor<T>*);         \
  template Tensor<T> maxpool2_forward(const Tensor<T>&, std::vector<std::uint32_t>&);              \
  template Tensor<T> maxpool2_backward(const Tensor<T>&, const std::vector<std::uint32_t>&,        \
                                       const std::array<int, 4>&);                                 \
  template Tensor<T> upsample2_forward(const Tensor<T>&);                                          \
  template Tensor<T> upsample2_backward(const Tensor<T>&);                                         \
  template Tensor<T> resize_nearest(const Tensor<T>&, int, int);                                   \
  template Tensor<T> relu_forward(const Tensor<T>&);                                               \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> sigmoid_forward(const Tensor<T>&);                                            \
  template Tensor<T> sigmoid_backward(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                          \
  template std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>&, int);                  \
  template LossResult<T> mae_loss(const Tensor<T>&, const Tensor<T>&);

TOPOFORGE_INSTANTIATE_OPS(float)
TOPOFORGE_INSTANTIATE_OPS(double)

}  // namespace topoforge::nn
