#pragma once

// Differentiable regression losses over [..., H, W] tensors. Each term is a
// fused op: the forward pass accumulates in double and the backward pass
// writes d(loss)/d(pred) directly. Targets are treated as constants.

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mtcurv/tensor.hpp"

namespace mtcurv::losses {

using tensor::Tensor;

enum class Term { Mse, Grad, Huber, Laplacian };

std::string_view term_name(Term term);
Term parse_term(std::string_view name);

struct LossTerm {
  Term kind = Term::Mse;
  double weight = 1.0;
  bool operator==(const LossTerm&) const = default;
};

struct LossSpec {
  std::vector<LossTerm> terms{{Term::Mse, 1.0}};
  double huber_delta = 0.1;

  /// "mse", "mse_grad", "huber_grad", "mse_lap".
  static LossSpec preset(std::string_view name);
  static const std::vector<std::string>& preset_names();
  /// Preset name if the terms match one exactly, otherwise "custom".
  std::string name() const;
  void validate() const;
  bool operator==(const LossSpec&) const = default;
};

/// mean((pred - target)^2)
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target);

/// mean over pixels of |grad(pred) - grad(target)|^2, forward differences.
template <typename T>
Tensor<T> grad_loss(const Tensor<T>& pred, const Tensor<T>& target);

/// mean of 0.5 r^2 for |r| <= delta, else delta (|r| - 0.5 delta).
template <typename T>
Tensor<T> huber_loss(const Tensor<T>& pred, const Tensor<T>& target, double delta);

/// mean((lap(pred) - lap(target))^2), 5-point stencil with replicate padding.
template <typename T>
Tensor<T> laplacian_loss(const Tensor<T>& pred, const Tensor<T>& target);

template <typename T>
struct CompositeLoss {
  Tensor<T> total;
  /// Unweighted value of each term, in spec order.
  std::vector<std::pair<std::string, double>> components;
};

template <typename T>
CompositeLoss<T> composite_loss(const LossSpec& spec, const Tensor<T>& pred,
                                const Tensor<T>& target);

}  // namespace mtcurv::losses
