#pragma once

// Naive loop implementations used as independent oracles for the nn kernels.
// Written for clarity, not speed; double precision only.

#include <cmath>
#include <cstdint>
#include <vector>

#include "topoforge/nn/layers.hpp"

namespace reference {

using topoforge::nn::Tensor;
using T64 = Tensor<double>;

inline T64 conv(const T64& x, const T64& w, const T64* b, int stride, int pad) {
  const int k = w.h();
  const int ho = (x.h() + 2 * pad - k) / stride + 1;
  const int wo = (x.w() + 2 * pad - k) / stride + 1;
  T64 y(x.n(), w.n(), ho, wo);
  for (int n = 0; n < x.n(); ++n)
    for (int co = 0; co < w.n(); ++co)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double s = b ? (*b)[co] : 0.0;
          for (int ci = 0; ci < x.c(); ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
                if (iy >= 0 && iy < x.h() && ix >= 0 && ix < x.w()) s += w.at(co, ci, ky, kx) * x.at(n, ci, iy, ix);
              }
          y.at(n, co, oy, ox) = s;
        }
  return y;
}

/// Batch-statistics normalization without affine.
inline T64 normalize(const T64& x, double eps) {
  T64 y = x;
  const double count = static_cast<double>(x.n()) * x.h() * x.w();
  for (int c = 0; c < x.c(); ++c) {
    double mu = 0.0;
    for (int n = 0; n < x.n(); ++n)
      for (int i = 0; i < x.h(); ++i)
        for (int j = 0; j < x.w(); ++j) mu += x.at(n, c, i, j);
    mu /= count;
    double var = 0.0;
    for (int n = 0; n < x.n(); ++n)
      for (int i = 0; i < x.h(); ++i)
        for (int j = 0; j < x.w(); ++j) var += (x.at(n, c, i, j) - mu) * (x.at(n, c, i, j) - mu);
    var /= count;
    for (int n = 0; n < x.n(); ++n)
      for (int i = 0; i < x.h(); ++i)
        for (int j = 0; j < x.w(); ++j) y.at(n, c, i, j) = (x.at(n, c, i, j) - mu) / std::sqrt(var + eps);
  }
  return y;
}

/// ReLU that also records the sign of every input into pattern.
inline T64 relu(const T64& x, std::vector<std::int8_t>* pattern) {
  T64 y = x;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (pattern) pattern->push_back(x[i] > 0 ? 1 : 0);
    y[i] = x[i] > 0 ? x[i] : 0.0;
  }
  return y;
}

inline T64 spade(const T64& h, const T64& m, const topoforge::nn::Spade<double>& s,
                 std::vector<std::int8_t>* pattern) {
  const T64 xhat = normalize(h, s.norm.state.eps);
  const T64 a = relu(conv(m, s.shared.weight, &s.shared.bias, 1, 1), pattern);
  const T64 g = conv(a, s.gamma.weight, &s.gamma.bias, 1, 1);
  const T64 b = conv(a, s.beta.weight, &s.beta.bias, 1, 1);
  T64 y = xhat;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = g[i] * xhat[i] + b[i];
  return y;
}

inline T64 resblock(const T64& h, const T64& m, const topoforge::nn::SpadeResBlock<double>& blk,
                    std::vector<std::int8_t>* pattern) {
  const auto bias = [](const topoforge::nn::Conv2d<double>& c) { return c.has_bias() ? &c.bias : nullptr; };
  T64 t = relu(spade(h, m, blk.spade0, pattern), pattern);
  t = conv(t, blk.conv0.weight, bias(blk.conv0), 1, 1);
  t = relu(spade(t, m, blk.spade1, pattern), pattern);
  T64 y = conv(t, blk.conv1.weight, bias(blk.conv1), 1, 1);
  if (blk.learned_skip()) {
    const T64 s = relu(spade(h, m, blk.spade_skip, pattern), pattern);
    const T64 sk = conv(s, blk.conv_skip.weight, nullptr, 1, 0);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += sk[i];
  } else {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += h[i];
  }
  return y;
}

}  // namespace reference
