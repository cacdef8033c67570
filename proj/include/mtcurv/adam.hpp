#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mtcurv/tensor.hpp"

namespace mtcurv::tensor {

template <typename T>
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> first_moment;   // one per parameter, same order
  std::vector<std::vector<T>> second_moment;
};

/// One bias-corrected Adam update of every parameter in place. Parameters
/// without a gradient are treated as having a zero gradient. Throws
/// NumericFailure on a non-finite gradient (before touching any state).
template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state);

/// Same update on raw buffers.
template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v,
                 const AdamState<T>& state);

}  // namespace mtcurv::tensor
