#pragma once

// Central finite-difference checks of reverse-mode gradients (64-bit).

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mtcurv/tensor.hpp"

namespace mtcurv::gradcheck {

using tensor::Tensor;
using LossFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

struct Options {
  double step = 1e-3;
  double tolerance = 1e-3;
  /// Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  /// Entries probed per input; 0 means all of them.
  std::size_t max_entries_per_input = 0;
  std::uint64_t seed = 1;
  /// Judge by ||a - n|| / max(||a||, ||n||) over all probes instead of the
  /// worst single entry.
  bool vector_error = false;
};

struct Result {
  std::string name;
  double max_rel_error = 0;
  double vector_rel_error = 0;
  double tolerance = 0;
  std::size_t probed = 0;
  bool passed = false;
};

double relative_error(double analytic, double numeric, double floor);

/// Runs `loss` once with gradients, then re-evaluates it at x +/- step for
/// each probed entry of each input. Inputs must be parameters.
Result check(const std::string& name, std::vector<Tensor<double>> inputs, const LossFn& loss,
             const Options& options = {});

/// Probes an explicit list of (input, flat index) entries.
struct Probe {
  std::size_t input;
  std::size_t index;
};
Result check_entries(const std::string& name, std::vector<Tensor<double>> inputs,
                     const LossFn& loss, const std::vector<Probe>& probes,
                     const Options& options = {});

/// Random parameter tensor with values uniform in [lo, hi), each with a
/// random sign when `signed_values` (keeps inputs away from ReLU kinks when
/// lo > 0).
Tensor<double> random_parameter(tensor::Shape shape, std::uint64_t seed, double lo = -1.0,
                                double hi = 1.0, bool signed_values = false);

/// The per-op suite used by `mtcurv selfcheck` and the tests.
std::vector<Result> op_suite(std::uint64_t seed = 1);

/// Full model + MSE on one 1x1xSxS image; `samples` random parameter entries.
Result model_check(const std::string& arch, std::size_t image_size, std::size_t samples,
                   std::uint64_t seed, const Options& options, std::size_t base_filters = 32,
                   std::size_t depth = 4);

}  // namespace mtcurv::gradcheck
