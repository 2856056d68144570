#pragma once

// Layers with cached activations for one static forward/backward pass.
// A layer instance is single-threaded: forward() stores what backward() needs.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "topoforge/nn/ops.hpp"
#include "topoforge/rng.hpp"

namespace topoforge::nn {

/// Named view of a parameter (grad != null) or a buffer such as a running mean (grad == null).
template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value = nullptr;
  Tensor<T>* grad = nullptr;
  bool trainable() const { return grad != nullptr; }
};

template <typename T>
using ParamList = std::vector<ParamRef<T>>;

/// Kaiming-normal weights (std = sqrt(2 / fan_in)).
template <typename T>
void kaiming_normal(Tensor<T>& w, Rng& rng);

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in, int out, int kernel, int pad, bool bias = true, int stride = 1);

  void init(Rng& rng);
  Tensor<T> forward(const Tensor<T>& x);
  /// Accumulates weight/bias gradients; returns dx unless need_dx is false (then empty).
  Tensor<T> backward(const Tensor<T>& dy, bool need_dx = true);
  void collect(const std::string& prefix, ParamList<T>& out);

  int in_channels() const { return weight.c(); }
  int out_channels() const { return weight.n(); }
  bool has_bias() const { return !bias.empty(); }

  Tensor<T> weight, bias, dweight, dbias;
  int stride = 1;
  int pad = 0;

 private:
  Tensor<T> x_;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(int channels, bool affine);

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);
  void collect(const std::string& prefix, ParamList<T>& out);
  void set_training(bool on) { state.training = on; }

  BatchNormState<T> state;
  Tensor<T> dscale, dshift;

 private:
  BatchNormCache<T> cache_;
};

/// Spatially adaptive normalization: parameter-free BN of h, modulated by
/// gamma(m) and beta(m) from a small conv net on the mask stack m.
template <typename T>
class Spade {
 public:
  Spade() = default;
  Spade(int channels, int label_channels = 3, int hidden = 64);

  void init(Rng& rng);
  Tensor<T> forward(const Tensor<T>& h, const Tensor<T>& mask);
  Tensor<T> backward(const Tensor<T>& dy);
  void collect(const std::string& prefix, ParamList<T>& out);
  void set_training(bool on) { norm.set_training(on); }

  BatchNorm2d<T> norm;
  Conv2d<T> shared, gamma, beta;

 private:
  Tensor<T> xhat_, act_, g_;
};

/// Shared interface of the decoder blocks so network variants can swap them.
template <typename T>
class DecoderBlock {
 public:
  virtual ~DecoderBlock() = default;
  virtual void init(Rng& rng) = 0;
  virtual Tensor<T> forward(const Tensor<T>& h, const Tensor<T>& mask) = 0;
  virtual Tensor<T> backward(const Tensor<T>& dy) = 0;
  virtual void collect(const std::string& prefix, ParamList<T>& out) = 0;
  virtual void set_training(bool on) = 0;
  virtual void for_each_norm(const std::function<void(BatchNorm2d<T>&)>& fn) = 0;
};

/// Main branch SPADE -> ReLU -> conv3x3 twice (width in -> min(in, out) -> out).
/// Skip is the identity when in == out, else SPADE -> ReLU -> bias-free conv1x1.
template <typename T>
class SpadeResBlock final : public DecoderBlock<T> {
 public:
  SpadeResBlock(int in, int out, int label_channels = 3, int hidden = 64);

  void init(Rng& rng) override;
  Tensor<T> forward(const Tensor<T>& h, const Tensor<T>& mask) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  void collect(const std::string& prefix, ParamList<T>& out) override;
  void set_training(bool on) override;
  void for_each_norm(const std::function<void(BatchNorm2d<T>&)>& fn) override;

  bool learned_skip() const { return in_ != out_; }

  Spade<T> spade0, spade1, spade_skip;
  Conv2d<T> conv0, conv1, conv_skip;

 private:
  int in_ = 0, out_ = 0;
  Tensor<T> r0_, r1_, rs_;
};

/// Plain conv3x3 -> ReLU -> conv3x3 -> ReLU; the mask is ignored.
template <typename T>
class ConvReluBlock final : public DecoderBlock<T> {
 public:
  ConvReluBlock(int in, int out);

  void init(Rng& rng) override;
  Tensor<T> forward(const Tensor<T>& h, const Tensor<T>& mask) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  void collect(const std::string& prefix, ParamList<T>& out) override;
  void set_training(bool) override {}
  void for_each_norm(const std::function<void(BatchNorm2d<T>&)>&) override {}

  Conv2d<T> conv0, conv1;

 private:
  Tensor<T> r0_, r1_;
};

/// Bias-corrected Adam over a fixed parameter list.
template <typename T>
class Adam {
 public:
  explicit Adam(ParamList<T> params, double lr = 0.01, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  void step();
  void zero_grad();
  long steps() const { return step_; }

  double lr, beta1, beta2, eps;

 private:
  ParamList<T> params_;
  std::vector<std::vector<double>> m_, v_;
  long step_ = 0;
};

}  // namespace topoforge::nn
