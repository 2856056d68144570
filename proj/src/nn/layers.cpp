#include "topoforge/nn/layers.hpp"

#include <cmath>

namespace topoforge::nn {

template <typename T>
void kaiming_normal(Tensor<T>& w, Rng& rng) {
  const double fan_in = static_cast<double>(w.c()) * w.h() * w.w();
  const double std = std::sqrt(2.0 / fan_in);
  for (auto& v : w.vec()) v = static_cast<T>(std * rng.normal());
}

// ---- Conv2d

template <typename T>
Conv2d<T>::Conv2d(int in, int out, int kernel, int pad_, bool with_bias, int stride_)
    : weight(out, in, kernel, kernel), dweight(out, in, kernel, kernel), stride(stride_), pad(pad_) {
  if (with_bias) {
    bias = Tensor<T>(1, out, 1, 1);
    dbias = Tensor<T>(1, out, 1, 1);
  }
}

template <typename T>
void Conv2d<T>::init(Rng& rng) {
  kaiming_normal(weight, rng);
  if (has_bias()) bias.fill(T(0));
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) {
  x_ = x;
  return conv2d_forward(x, weight, has_bias() ? &bias : nullptr, stride, pad);
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy, bool need_dx) {
  if (x_.empty()) throw StateError("conv2d backward before forward");
  Tensor<T> dx;
  conv2d_backward(x_, weight, dy, stride, pad, need_dx ? &dx : nullptr, dweight,
                  has_bias() ? &dbias : nullptr);
  return dx;
}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix, ParamList<T>& out) {
  out.push_back({prefix + ".weight", &weight, &dweight});
  if (has_bias()) out.push_back({prefix + ".bias", &bias, &dbias});
}

// ---- BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(int channels, bool affine) : state(channels, affine) {
  if (affine) {
    dscale = Tensor<T>(1, channels, 1, 1);
    dshift = Tensor<T>(1, channels, 1, 1);
  }
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x) {
  return batchnorm_forward(x, state, cache_);
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& dy) {
  if (cache_.xhat.empty()) throw StateError("batchnorm backward before forward");
  return batchnorm_backward(dy, state, cache_, state.affine ? &dscale : nullptr,
                            state.affine ? &dshift : nullptr);
}

template <typename T>
void BatchNorm2d<T>::collect(const std::string& prefix, ParamList<T>& out) {
  if (state.affine) {
    out.push_back({prefix + ".scale", &state.scale, &dscale});
    out.push_back({prefix + ".shift", &state.shift, &dshift});
  }
  out.push_back({prefix + ".running_mean", &state.running_mean, nullptr});
  out.push_back({prefix + ".running_var", &state.running_var, nullptr});
}

// ---- Spade

template <typename T>
Spade<T>::Spade(int channels, int label_channels, int hidden)
    : norm(channels, false),
      shared(label_channels, hidden, 3, 1),
      gamma(hidden, channels, 3, 1),
      beta(hidden, channels, 3, 1) {}

template <typename T>
void Spade<T>::init(Rng& rng) {
  shared.init(rng);
  gamma.init(rng);
  beta.init(rng);
}

template <typename T>
Tensor<T> Spade<T>::forward(const Tensor<T>& h, const Tensor<T>& mask) {
  if (h.c() != gamma.out_channels()) {
    throw ParameterError("spade: feature map has " + std::to_string(h.c()) +
                         " channels but the modulation produces " + std::to_string(gamma.out_channels()));
  }
  if (mask.n() != h.n() || mask.h() != h.h() || mask.w() != h.w()) {
    throw ParameterError("spade: mask stack " + mask.shape_string() + " not resized to feature map " +
                         h.shape_string());
  }
  xhat_ = norm.forward(h);
  act_ = relu_forward(shared.forward(mask));
  g_ = gamma.forward(act_);
  Tensor<T> y = beta.forward(act_);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += g_[i] * xhat_[i];
  return y;
}

template <typename T>
Tensor<T> Spade<T>::backward(const Tensor<T>& dy) {
  if (xhat_.empty()) throw StateError("spade backward before forward");
  Tensor<T> dxhat = dy, dg = dy;
  for (std::size_t i = 0; i < dy.size(); ++i) {
    dxhat[i] *= g_[i];
    dg[i] *= xhat_[i];
  }
  Tensor<T> dact = gamma.backward(dg);
  dact += beta.backward(dy);
  shared.backward(relu_backward(dact, act_), false);
  return norm.backward(dxhat);
}

template <typename T>
void Spade<T>::collect(const std::string& prefix, ParamList<T>& out) {
  shared.collect(prefix + ".shared", out);
  gamma.collect(prefix + ".gamma", out);
  beta.collect(prefix + ".beta", out);
  norm.collect(prefix + ".norm", out);
}

// ---- SpadeResBlock

template <typename T>
SpadeResBlock<T>::SpadeResBlock(int in, int out, int label_channels, int hidden)
    : spade0(in, label_channels, hidden),
      spade1(std::min(in, out), label_channels, hidden),
      conv0(in, std::min(in, out), 3, 1),
      conv1(std::min(in, out), out, 3, 1),
      in_(in),
      out_(out) {
  if (learned_skip()) {
    spade_skip = Spade<T>(in, label_channels, hidden);
    conv_skip = Conv2d<T>(in, out, 1, 0, false);
  }
}

template <typename T>
void SpadeResBlock<T>::init(Rng& rng) {
  spade0.init(rng);
  conv0.init(rng);
  spade1.init(rng);
  conv1.init(rng);
  if (learned_skip()) {
    spade_skip.init(rng);
    conv_skip.init(rng);
  }
}

template <typename T>
Tensor<T> SpadeResBlock<T>::forward(const Tensor<T>& h, const Tensor<T>& mask) {
  if (h.c() != in_) {
    throw ParameterError("spade resblock: expected " + std::to_string(in_) + " channels, got " +
                         std::to_string(h.c()));
  }
  r0_ = relu_forward(spade0.forward(h, mask));
  Tensor<T> mid = conv0.forward(r0_);
  r1_ = relu_forward(spade1.forward(mid, mask));
  Tensor<T> y = conv1.forward(r1_);
  if (learned_skip()) {
    rs_ = relu_forward(spade_skip.forward(h, mask));
    y += conv_skip.forward(rs_);
  } else {
    y += h;
  }
  return y;
}

template <typename T>
Tensor<T> SpadeResBlock<T>::backward(const Tensor<T>& dy) {
  Tensor<T> d = conv1.backward(dy);
  d = spade1.backward(relu_backward(d, r1_));
  d = conv0.backward(d);
  Tensor<T> dh = spade0.backward(relu_backward(d, r0_));
  if (learned_skip()) {
    Tensor<T> ds = conv_skip.backward(dy);
    dh += spade_skip.backward(relu_backward(ds, rs_));
  } else {
    dh += dy;
  }
  return dh;
}

template <typename T>
void SpadeResBlock<T>::collect(const std::string& prefix, ParamList<T>& out) {
  spade0.collect(prefix + ".spade0", out);
  conv0.collect(prefix + ".conv0", out);
  spade1.collect(prefix + ".spade1", out);
  conv1.collect(prefix + ".conv1", out);
  if (learned_skip()) {
    spade_skip.collect(prefix + ".spade_skip", out);
    conv_skip.collect(prefix + ".conv_skip", out);
  }
}

template <typename T>
void SpadeResBlock<T>::set_training(bool on) {
  spade0.set_training(on);
  spade1.set_training(on);
  if (learned_skip()) spade_skip.set_training(on);
}

template <typename T>
void SpadeResBlock<T>::for_each_norm(const std::function<void(BatchNorm2d<T>&)>& fn) {
  fn(spade0.norm);
  fn(spade1.norm);
  if (learned_skip()) fn(spade_skip.norm);
}

// ---- ConvReluBlock

template <typename T>
ConvReluBlock<T>::ConvReluBlock(int in, int out)
    : conv0(in, std::min(in, out), 3, 1), conv1(std::min(in, out), out, 3, 1) {}

template <typename T>
void ConvReluBlock<T>::init(Rng& rng) {
  conv0.init(rng);
  conv1.init(rng);
}

template <typename T>
Tensor<T> ConvReluBlock<T>::forward(const Tensor<T>& h, const Tensor<T>&) {
  r0_ = relu_forward(conv0.forward(h));
  r1_ = relu_forward(conv1.forward(r0_));
  return r1_;
}

template <typename T>
Tensor<T> ConvReluBlock<T>::backward(const Tensor<T>& dy) {
  Tensor<T> d = conv1.backward(relu_backward(dy, r1_));
  return conv0.backward(relu_backward(d, r0_));
}

template <typename T>
void ConvReluBlock<T>::collect(const std::string& prefix, ParamList<T>& out) {
  conv0.collect(prefix + ".conv0", out);
  conv1.collect(prefix + ".conv1", out);
}

// ---- Adam

template <typename T>
Adam<T>::Adam(ParamList<T> params, double lr_, double beta1_, double beta2_, double eps_)
    : lr(lr_), beta1(beta1_), beta2(beta2_), eps(eps_) {
  for (auto& p : params) {
    if (!p.trainable()) continue;
    p.value->require_same(*p.grad, "adam");
    m_.emplace_back(p.value->size(), 0.0);
    v_.emplace_back(p.value->size(), 0.0);
    params_.push_back(p);
  }
}

template <typename T>
void Adam<T>::step() {
  ++step_;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor<T>& w = *params_[k].value;
    const Tensor<T>& g = *params_[k].grad;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
      v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] = static_cast<T>(w[i] - lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.grad->fill(T(0));
}

#define TOPOFORGE_INSTANTIATE_LAYERS(T)                  \
  template void kaiming_normal(Tensor<T>&, Rng&);        \
  template class Conv2d<T>;                              \
  template class BatchNorm2d<T>;                         \
  template class Spade<T>;                               \
  template class SpadeResBlock<T>;                       \
  template class ConvReluBlock<T>;                       \
  template class Adam<T>;

TOPOFORGE_INSTANTIATE_LAYERS(float)
TOPOFORGE_INSTANTIATE_LAYERS(double)

}  // namespace topoforge::nn
