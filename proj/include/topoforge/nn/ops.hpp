#pragma once

// Stateless forward/backward kernels. Backward functions overwrite input
// gradients and accumulate (+=) parameter gradients.

#include <cstdint>
#include <type_traits>
#include <vector>

#include "topoforge/nn/tensor.hpp"

namespace topoforge::nn {

/// Lets optional tensor pointers accept nullptr without breaking deduction.
template <typename T>
using NoDeduce = std::type_identity_t<T>;

/// Cross-correlation. w is (Cout, Cin, k, k); bias is (1, Cout, 1, 1) or null.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const NoDeduce<Tensor<T>>* bias, int stride,
                         int pad);

/// dx may be null when the input gradient is not needed; db may be null for bias-free convs.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, int stride,
                     int pad, NoDeduce<Tensor<T>>* dx, Tensor<T>& dw, NoDeduce<Tensor<T>>* db);

int conv_output_size(int in, int kernel, int stride, int pad);

template <typename T>
struct BatchNormState {
  int channels = 0;
  bool affine = true;
  Tensor<T> scale;         ///< (1, C, 1, 1), affine only
  Tensor<T> shift;         ///< (1, C, 1, 1), affine only
  Tensor<T> running_mean;  ///< (1, C, 1, 1)
  Tensor<T> running_var;   ///< (1, C, 1, 1)
  T eps = T(1e-5);
  T momentum = T(0.1);
  bool training = true;
  bool stats_ready = false;  ///< running statistics hold at least one update

  BatchNormState() = default;
  BatchNormState(int channels, bool affine);
};

template <typename T>
struct BatchNormCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;
  bool training = true;
};

/// Per-channel batch statistics (mean, biased variance) over N, H, W.
template <typename T>
void batch_statistics(const Tensor<T>& x, std::vector<double>& mean, std::vector<double>& var);

template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, BatchNormState<T>& state, BatchNormCache<T>& cache);

/// dscale/dshift are required iff state.affine.
template <typename T>
Tensor<T> batchnorm_backward(const Tensor<T>& dy, const BatchNormState<T>& state,
                             const BatchNormCache<T>& cache, Tensor<T>* dscale, Tensor<T>* dshift);

/// 2x2 max pooling with stride 2; argmax receives the flat input index of each output.
template <typename T>
Tensor<T> maxpool2_forward(const Tensor<T>& x, std::vector<std::uint32_t>& argmax);

template <typename T>
Tensor<T> maxpool2_backward(const Tensor<T>& dy, const std::vector<std::uint32_t>& argmax,
                            const std::array<int, 4>& input_dims);

template <typename T>
Tensor<T> upsample2_forward(const Tensor<T>& x);

template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& dy);

/// Nearest-neighbour resize: out(y, x) = in(floor(y * H / h), floor(x * W / w)).
template <typename T>
Tensor<T> resize_nearest(const Tensor<T>& x, int height, int width);

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x);

/// Gradient through ReLU given its output.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& dy, const Tensor<T>& y);

template <typename T>
Tensor<T> sigmoid_forward(const Tensor<T>& x);

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& dy, const Tensor<T>& y);

/// Channel concatenation [a, b].
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// Splits dy of a concatenation back into the leading `channels` and the rest.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& dy, int channels);

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> grad;
};

/// Mean absolute error; the subgradient at zero is zero.
template <typename T>
LossResult<T> mae_loss(const Tensor<T>& pred, const Tensor<T>& target);

}  // namespace topoforge::nn
