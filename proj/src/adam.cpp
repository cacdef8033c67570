#include "mtcurv/adam.hpp"

#include <cmath>
#include <string>

namespace mtcurv::tensor {

template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v,
                 const AdamState<T>& state) {
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const double b1 = state.beta1, b2 = state.beta2, lr = state.lr, eps = state.eps;
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(param.size()); ++i) {
    const double g = grad.empty() ? 0.0 : static_cast<double>(grad[i]);
    const double mi = b1 * m[i] + (1.0 - b1) * g;
    const double vi = b2 * v[i] + (1.0 - b2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double mhat = mi / c1;
    const double vhat = vi / c2;
    param[i] = static_cast<T>(param[i] - lr * mhat / (std::sqrt(vhat) + eps));
  }
}

template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state) {
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (const T& g : params[p].grad())
      if (!std::isfinite(g))
        throw NumericFailure("adam_step: non-finite gradient in parameter " + std::to_string(p));
  }
  if (state.first_moment.size() != params.size()) {
    state.first_moment.assign(params.size(), {});
    state.second_moment.assign(params.size(), {});
    for (std::size_t p = 0; p < params.size(); ++p) {
      state.first_moment[p].assign(params[p].numel(), T{0});
      state.second_moment[p].assign(params[p].numel(), T{0});
    }
  }
  ++state.step;
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (state.first_moment[p].size() != params[p].numel())
      throw DomainError("adam_step: moment shape does not match parameter " + std::to_string(p));
    adam_update<T>(params[p].values(), params[p].grad(), state.first_moment[p],
                   state.second_moment[p], state);
  }
}

template void adam_step<float>(std::span<Tensor<float>>, AdamState<float>&);
template void adam_step<double>(std::span<Tensor<double>>, AdamState<double>&);
template void adam_update<float>(std::span<float>, std::span<const float>, std::span<float>,
                                 std::span<float>, const AdamState<float>&);
template void adam_update<double>(std::span<double>, std::span<const double>, std::span<double>,
                                  std::span<double>, const AdamState<double>&);

}  // namespace mtcurv::tensor
