#pragma once

// Differentiable layer ops used by the U-Net family. Shapes are NCHW unless
// noted; every op validates shapes and throws DomainError on mismatch.

#include <cstddef>
#include <vector>

#include "mtcurv/tensor.hpp"

namespace mtcurv::tensor {

/// Cross-correlation. weight [F, C, k, k], bias [F] or undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride = 1, std::size_t padding = 0);

/// 2x2 window, stride 2. H and W must be even.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input);

/// 2x2 / stride-2 transposed convolution, the adjoint of conv2d(stride 2)
/// with the same weight. weight [C_in, F, 2, 2], bias [F] or undefined.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& weight,
                           const Tensor<T>& bias);

enum class Mode { Train, Eval };

/// Running statistics of one batch-norm layer.
template <typename T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  bool initialized = false;  // set by the first train-mode pass
  double momentum = 0.9;     // running = momentum * running + (1 - momentum) * batch
  double eps = 1e-5;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, T{0}), running_var(channels, T{1}) {}
};

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BatchNormState<T>& state, Mode mode);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
/// Elementwise sum of equal shapes.
template <typename T>
Tensor<T> add(const Tensor<T>& x, const Tensor<T>& y);
/// Elementwise product of equal shapes.
template <typename T>
Tensor<T> mul(const Tensor<T>& x, const Tensor<T>& y);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);
/// Concatenate [N,C1,H,W] and [N,C2,H,W] along channels.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& x, const Tensor<T>& y);
/// [N,C,H,W] -> [N,C].
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);
/// x [N, in] * W^T + b, W [out, in], b [out] or undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);
/// x [N,C,H,W] times per-(n, c) gate [N,C].
template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& gate);
/// Sum of all elements (double accumulation) as a scalar.
template <typename T>
Tensor<T> sum(const Tensor<T>& x);

}  // namespace mtcurv::tensor
