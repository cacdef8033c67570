#include "mtcurv/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mtcurv/error.hpp"
#include "mtcurv/losses.hpp"
#include "mtcurv/model.hpp"
#include "mtcurv/ops.hpp"

namespace mtcurv::gradcheck {

using tensor::Shape;

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

Result check_entries(const std::string& name, std::vector<Tensor<double>> inputs,
                     const LossFn& loss, const std::vector<Probe>& probes,
                     const Options& options) {
  for (auto& t : inputs) t.zero_grad();
  const Tensor<double> l = loss(inputs);
  tensor::backward(l);

  Result r;
  r.name = name;
  r.tolerance = options.tolerance;
  tensor::NoGradGuard guard;
  double diff2 = 0, a2 = 0, n2 = 0;
  for (const Probe& p : probes) {
    Tensor<double>& t = inputs.at(p.input);
    const double analytic = t.has_grad() ? t.grad()[p.index] : 0.0;
    double& x = t.values()[p.index];
    const double x0 = x;
    x = x0 + options.step;
    const double plus = loss(inputs).item();
    x = x0 - options.step;
    const double minus = loss(inputs).item();
    x = x0;
    const double numeric = (plus - minus) / (2.0 * options.step);
    const double err = relative_error(analytic, numeric, options.floor);
    if (!(err <= r.max_rel_error)) r.max_rel_error = std::isnan(err) ? INFINITY : err;
    diff2 += (analytic - numeric) * (analytic - numeric);
    a2 += analytic * analytic;
    n2 += numeric * numeric;
    ++r.probed;
  }
  r.vector_rel_error = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), options.floor});
  if (std::isnan(r.vector_rel_error)) r.vector_rel_error = INFINITY;
  r.passed = (options.vector_error ? r.vector_rel_error : r.max_rel_error) <= options.tolerance;
  return r;
}

Result check(const std::string& name, std::vector<Tensor<double>> inputs, const LossFn& loss,
             const Options& options) {
  std::mt19937_64 rng(options.seed);
  std::vector<Probe> probes;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::size_t n = inputs[i].numel();
    if (options.max_entries_per_input == 0 || n <= options.max_entries_per_input) {
      for (std::size_t k = 0; k < n; ++k) probes.push_back({i, k});
    } else {
      for (std::size_t k = 0; k < options.max_entries_per_input; ++k)
        probes.push_back({i, static_cast<std::size_t>(rng() % n)});
    }
  }
  return check_entries(name, std::move(inputs), loss, probes, options);
}

Tensor<double> random_parameter(Shape shape, std::uint64_t seed, double lo, double hi,
                                bool signed_values) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) {
    x = u(rng);
    if (signed_values && (rng() & 1)) x = -x;
  }
  return Tensor<double>::parameter(std::move(shape), std::move(v));
}

namespace {

using namespace tensor;

// sum(y * r) with a fixed random r, so every output entry gets a distinct weight.
Tensor<double> project(const Tensor<double>& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> r(y.numel());
  for (auto& x : r) x = u(rng);
  return sum(mul(y, Tensor<double>(y.shape(), std::move(r))));
}

// Distinct values spaced 0.05 apart in shuffled order: no ties within a
// pooling window survive a 1e-3 perturbation.
Tensor<double> spaced_parameter(Shape shape, std::uint64_t seed) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = 0.05 * static_cast<double>(i) - 0.025 * n;
  std::shuffle(v.begin(), v.end(), std::mt19937_64(seed));
  return Tensor<double>::parameter(std::move(shape), std::move(v));
}

}  // namespace

std::vector<Result> op_suite(std::uint64_t seed) {
  std::vector<Result> out;
  Options o;
  o.seed = seed;
  auto s = [&](std::uint64_t k) { return seed * 1000 + k; };

  for (std::size_t k : {1, 2, 3}) {
    const std::size_t pad = k == 3 ? 1 : 0;
    for (std::size_t stride : {1, 2}) {
      auto x = random_parameter({2, 3, 6, 6}, s(k * 10 + stride));
      auto w = random_parameter({4, 3, k, k}, s(k * 10 + stride + 100));
      auto b = random_parameter({4}, s(k * 10 + stride + 200));
      out.push_back(check("conv2d k" + std::to_string(k) + " s" + std::to_string(stride),
                          {x, w, b},
                          [&](const std::vector<Tensor<double>>& in) {
                            return project(conv2d(in[0], in[1], in[2], stride, pad), s(k));
                          },
                          o));
    }
  }
  {
    auto x = spaced_parameter({2, 2, 4, 6}, s(300));
    out.push_back(check("maxpool2d", {x},
                        [&](const std::vector<Tensor<double>>& in) {
                          return project(maxpool2d(in[0]), s(301));
                        },
                        o));
  }
  {
    auto x = random_parameter({2, 3, 3, 4}, s(310));
    auto w = random_parameter({3, 2, 2, 2}, s(311));
    auto b = random_parameter({2}, s(312));
    out.push_back(check("conv_transpose2d", {x, w, b},
                        [&](const std::vector<Tensor<double>>& in) {
                          return project(conv_transpose2d(in[0], in[1], in[2]), s(313));
                        },
                        o));
  }
  {
    auto x = random_parameter({3, 2, 3, 3}, s(320));
    auto g = random_parameter({2}, s(321), 0.5, 1.5);
    auto b = random_parameter({2}, s(322));
    out.push_back(check("batchnorm2d", {x, g, b},
                        [&](const std::vector<Tensor<double>>& in) {
                          BatchNormState<double> st(2);
                          return project(batchnorm2d(in[0], in[1], in[2], st, Mode::Train), s(323));
                        },
                        o));
  }
  {
    auto x = random_parameter({2, 3, 4, 4}, s(330), 0.05, 1.0, true);
    out.push_back(check("relu", {x},
                        [&](const std::vector<Tensor<double>>& in) {
                          return project(relu(in[0]), s(331));
                        },
                        o));
  }
  {
    auto x = random_parameter({2, 3, 4}, s(340), -3.0, 3.0);
    out.push_back(check("sigmoid", {x},
                        [&](const std::vector<Tensor<double>>& in) {
                          return project(sigmoid(in[0]), s(341));
                        },
                        o));
  }
  {
    auto x = random_parameter({2, 3, 4}, s(350));
    auto y = random_parameter({2, 3, 4}, s(351));
    out.push_back(check("add", {x, y},
                        [&](const std::vector<Tensor<double>>& in) {
                          return project(add(in[0], in[1]), s(352));
                        },
                        o));
    out.push_back(check("mul", {x, y},
                        [&](const std::vector<Tensor<double>>& in) {
                          return project(mul(in[0], in[1]), s(353));
                        },
                        o));
    out.push_back(check("scale", {x},
                        [&](const std::vector<Tensor<double>>& in) {
                          return project(scale(in[0], -1.7), s(354));
                        },
                        o));
    out.push_back(check("sum", {x},
                        [&](const std::vector<Tensor<double>>& in) { return sum(in[0]); }, o));
  }
  {
    auto x = random_parameter({2, 2, 3, 3}, s(360));
    auto y = random_parameter({2, 3, 3, 3}, s(361));
    out.push_back(check("concat_channels", {x, y},
                        [&](const std::vector<Tensor<double>>& in) {
                          return project(concat_channels(in[0], in[1]), s(362));
                        },
                        o));
    out.push_back(check("global_avg_pool", {y},
                        [&](const std::vector<Tensor<double>>& in) {
                          return project(global_avg_pool(in[0]), s(363));
                        },
                        o));
    auto gate = random_parameter({2, 3}, s(364));
    out.push_back(check("scale_channels", {y, gate},
                        [&](const std::vector<Tensor<double>>& in) {
                          return project(scale_channels(in[0], in[1]), s(365));
                        },
                        o));
  }
  {
    auto x = random_parameter({3, 5}, s(370));
    auto w = random_parameter({4, 5}, s(371));
    auto b = random_parameter({4}, s(372));
    out.push_back(check("linear", {x, w, b},
                        [&](const std::vector<Tensor<double>>& in) {
                          return project(linear(in[0], in[1], in[2]), s(373));
                        },
                        o));
  }
  {
    auto x = random_parameter({2, 6, 4}, s(380), 0.0, 1.0);
    auto t = random_parameter({2, 6, 4}, s(381), 0.0, 1.0);
    const Tensor<double> target(t.shape(), std::vector<double>(t.values().begin(), t.values().end()));
    out.push_back(check("mse_loss", {x},
                        [&](const std::vector<Tensor<double>>& in) {
                          return losses::mse_loss(in[0], target);
                        },
                        o));
    out.push_back(check("grad_loss", {x},
                        [&](const std::vector<Tensor<double>>& in) {
                          return losses::grad_loss(in[0], target);
                        },
                        o));
    out.push_back(check("laplacian_loss", {x},
                        [&](const std::vector<Tensor<double>>& in) {
                          return losses::laplacian_loss(in[0], target);
                        },
                        o));
    // Residuals on both sides of delta, none within 5e-3 of the kink.
    std::vector<double> p(t.numel());
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double mag = (i % 2 == 0) ? 0.02 + 0.01 * (i % 5) : 0.2 + 0.05 * (i % 7);
      p[i] = t.values()[i] + ((i / 2) % 2 ? mag : -mag);
    }
    auto ph = Tensor<double>::parameter(t.shape(), p);
    out.push_back(check("huber_loss", {ph},
                        [&](const std::vector<Tensor<double>>& in) {
                          return losses::huber_loss(in[0], target, 0.1);
                        },
                        o));
  }
  return out;
}

Result model_check(const std::string& arch, std::size_t image_size, std::size_t samples,
                   std::uint64_t seed, const Options& options, std::size_t base_filters,
                   std::size_t depth) {
  model::ModelSpec spec;
  spec.arch = model::parse_arch(arch);
  spec.base_filters = base_filters;
  spec.depth = depth;
  spec.bottleneck_filters = base_filters << depth;
  model::Model<double> m(spec, seed);

  std::mt19937_64 rng(seed + 17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Shape shape{1, 1, image_size, image_size};
  std::vector<double> img(image_size * image_size), tgt(img.size());
  for (auto& v : img) v = u(rng);
  for (auto& v : tgt) v = u(rng);
  const Tensor<double> image(shape, img), target(shape, tgt);

  auto params = m.parameter_tensors();
  std::vector<Probe> probes;
  for (std::size_t k = 0; k < samples; ++k) {
    const std::size_t i = rng() % params.size();
    probes.push_back({i, static_cast<std::size_t>(rng() % params[i].numel())});
  }
  return check_entries(
      arch + " forward + mse", params,
      [&](const std::vector<Tensor<double>>&) {
        return losses::mse_loss(m.forward(image, tensor::Mode::Train), target);
      },
      probes, options);
}

}  // namespace mtcurv::gradcheck
