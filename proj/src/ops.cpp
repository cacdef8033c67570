#include "mtcurv/ops.hpp"

#include <algorithm>
#include <cmath>

#include "mtcurv/kernels.hpp"

namespace mtcurv::tensor {
namespace {

using kernels::Trans;

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw DomainError(std::string(op) + ": " + detail);
}

template <typename T>
void require_rank(const char* op, const Tensor<T>& t, std::size_t rank, const char* name) {
  if (!t.defined()) shape_error(op, std::string(name) + " is undefined");
  if (t.rank() != rank)
    shape_error(op, std::string(name) + " must have rank " + std::to_string(rank) + ", got " +
                        to_string(t.shape()));
}

template <typename T>
bool wants_grad(const Node<T>* n) {
  return n != nullptr && n->requires_grad;
}

inline long long ll(std::size_t v) { return static_cast<long long>(v); }

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding) {
  constexpr const char* op = "conv2d";
  require_rank(op, input, 4, "input");
  require_rank(op, weight, 4, "weight");
  const std::size_t filters = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != input.dim(1))
    shape_error(op, "weight " + to_string(weight.shape()) + " does not match input " +
                        to_string(input.shape()));
  if (weight.dim(3) != k) shape_error(op, "kernel must be square");
  if (stride == 0) shape_error(op, "stride must be positive");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != filters))
    shape_error(op, "bias must have shape [" + std::to_string(filters) + "]");
  if (input.dim(2) + 2 * padding < k || input.dim(3) + 2 * padding < k)
    shape_error(op, "kernel larger than padded input");

  kernels::ConvShape s{input.dim(0), input.dim(1), input.dim(2), input.dim(3), k, stride, padding};
  const std::size_t oh = s.out_height(), ow = s.out_width(), positions = s.positions();
  const std::size_t patch = s.patch();

  std::vector<T> col(patch * positions);
  kernels::im2col<T>(s, input.values(), col);
  std::vector<T> out_cp(filters * positions);
  kernels::gemm<T>(Trans::No, Trans::No, filters, positions, patch, weight.values(), col, out_cp,
                   false);
  col = {};
  std::vector<T> out(s.batch * filters * oh * ow);
  kernels::unfold_batch<T>(s.batch, filters, oh * ow, out_cp, out);
  if (bias.defined()) {
    const auto b = bias.values();
    const std::size_t plane = oh * ow;
#pragma omp parallel for schedule(static)
    for (long long nf = 0; nf < ll(s.batch * filters); ++nf) {
      const T bv = b[static_cast<std::size_t>(nf) % filters];
      T* dst = out.data() + static_cast<std::size_t>(nf) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] += bv;
    }
  }
  check_finite<T>(out, op);

  Node<T>* xn = &input.node();
  Node<T>* wn = &weight.node();
  Node<T>* bn = bias.defined() ? &bias.node() : nullptr;
  return make_result<T>(
      {s.batch, filters, oh, ow}, std::move(out), op, {input, weight, bias},
      [=](Node<T>& self) {
        std::vector<T> dy(filters * positions);
        kernels::fold_batch<T>(s.batch, filters, oh * ow, self.grad, dy);
        if (wants_grad(wn)) {
          std::vector<T> col(patch * positions);
          kernels::im2col<T>(s, xn->value, col);
          auto dw = wn->grad_buffer();
          kernels::gemm<T>(Trans::No, Trans::Yes, filters, patch, positions, dy, col, dw, true);
          if (testing::active_fault() == testing::Fault::Conv2dBackward)
            for (T& g : dw) g = g * T(1.5) + T(0.01);
        }
        if (wants_grad(bn)) {
          auto db = bn->grad_buffer();
          for (std::size_t f = 0; f < filters; ++f) {
            double acc = 0.0;
            const T* row = dy.data() + f * positions;
            for (std::size_t p = 0; p < positions; ++p) acc += row[p];
            db[f] += static_cast<T>(acc);
          }
        }
        if (wants_grad(xn)) {
          std::vector<T> dcol(patch * positions);
          kernels::gemm<T>(Trans::Yes, Trans::No, patch, positions, filters, wn->value, dy, dcol,
                           false);
          kernels::col2im<T>(s, dcol, xn->grad_buffer());
        }
      });
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input) {
  constexpr const char* op = "maxpool2d";
  require_rank(op, input, 4, "input");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % 2 != 0 || w % 2 != 0)
    shape_error(op, "spatial dims must be even, got " + to_string(input.shape()));
  const std::size_t out_count = n * c * (h / 2) * (w / 2);
  std::vector<T> out(out_count);
  std::vector<std::size_t> argmax(out_count);
  kernels::maxpool2x2<T>(n * c, h, w, input.values(), out, argmax);

  Node<T>* xn = &input.node();
  return make_result<T>({n, c, h / 2, w / 2}, std::move(out), op, {input},
                        [xn, argmax = std::move(argmax)](Node<T>& self) {
                          auto dx = xn->grad_buffer();
                          // Windows are disjoint, so every target is written once.
#pragma omp parallel for schedule(static)
                          for (long long i = 0; i < ll(argmax.size()); ++i)
                            dx[argmax[static_cast<std::size_t>(i)]] +=
                                self.grad[static_cast<std::size_t>(i)];
                        });
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& weight,
                           const Tensor<T>& bias) {
  constexpr const char* op = "conv_transpose2d";
  require_rank(op, input, 4, "input");
  require_rank(op, weight, 4, "weight");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (weight.dim(0) != c || weight.dim(2) != 2 || weight.dim(3) != 2)
    shape_error(op, "weight must be [" + std::to_string(c) + ", F, 2, 2], got " +
                        to_string(weight.shape()));
  const std::size_t filters = weight.dim(1);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != filters))
    shape_error(op, "bias must have shape [" + std::to_string(filters) + "]");

  const std::size_t plane = h * w, cols = n * plane, taps = filters * 4;
  std::vector<T> xc(c * cols);
  kernels::fold_batch<T>(n, c, plane, input.values(), xc);
  std::vector<T> g(taps * cols);
  kernels::gemm<T>(Trans::Yes, Trans::No, taps, cols, c, weight.values(), xc, g, false);

  const std::size_t oh = 2 * h, ow = 2 * w;
  std::vector<T> out(n * filters * oh * ow);
  const T* bptr = bias.defined() ? bias.values().data() : nullptr;
#pragma omp parallel for schedule(static)
  for (long long nf = 0; nf < ll(n * filters); ++nf) {
    const std::size_t b = static_cast<std::size_t>(nf) / filters;
    const std::size_t f = static_cast<std::size_t>(nf) % filters;
    const T bv = bptr ? bptr[f] : T{0};
    T* dst = out.data() + static_cast<std::size_t>(nf) * oh * ow;
    for (std::size_t t = 0; t < 4; ++t) {
      const std::size_t a = t / 2, bb = t % 2;
      const T* src = g.data() + (f * 4 + t) * cols + b * plane;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          dst[(2 * y + a) * ow + 2 * x + bb] = src[y * w + x] + bv;
    }
  }
  check_finite<T>(out, op);

  Node<T>* xn = &input.node();
  Node<T>* wn = &weight.node();
  Node<T>* bn = bias.defined() ? &bias.node() : nullptr;
  return make_result<T>(
      {n, filters, oh, ow}, std::move(out), op, {input, weight, bias},
      [=, xc = std::move(xc)](Node<T>& self) {
        std::vector<T> dg(taps * cols);
#pragma omp parallel for schedule(static)
        for (long long ft = 0; ft < ll(taps); ++ft) {
          const std::size_t f = static_cast<std::size_t>(ft) / 4;
          const std::size_t t = static_cast<std::size_t>(ft) % 4;
          const std::size_t a = t / 2, bb = t % 2;
          for (std::size_t b = 0; b < n; ++b) {
            const T* src = self.grad.data() + (b * filters + f) * oh * ow;
            T* dst = dg.data() + static_cast<std::size_t>(ft) * cols + b * plane;
            for (std::size_t y = 0; y < h; ++y)
              for (std::size_t x = 0; x < w; ++x) dst[y * w + x] = src[(2 * y + a) * ow + 2 * x + bb];
          }
        }
        if (wants_grad(wn))
          kernels::gemm<T>(Trans::No, Trans::Yes, c, taps, cols, xc, dg, wn->grad_buffer(), true);
        if (wants_grad(bn)) {
          auto db = bn->grad_buffer();
          for (std::size_t f = 0; f < filters; ++f) {
            double acc = 0.0;
            for (std::size_t t = 0; t < 4; ++t) {
              const T* row = dg.data() + (f * 4 + t) * cols;
              for (std::size_t p = 0; p < cols; ++p) acc += row[p];
            }
            db[f] += static_cast<T>(acc);
          }
        }
        if (wants_grad(xn)) {
          std::vector<T> dxc(c * cols);
          kernels::gemm<T>(Trans::No, Trans::No, c, cols, taps, wn->value, dg, dxc, false);
          auto dx = xn->grad_buffer();
#pragma omp parallel for schedule(static)
          for (long long bc = 0; bc < ll(n * c); ++bc) {
            const std::size_t b = static_cast<std::size_t>(bc) / c;
            const std::size_t ch = static_cast<std::size_t>(bc) % c;
            const T* src = dxc.data() + ch * cols + b * plane;
            T* dst = dx.data() + static_cast<std::size_t>(bc) * plane;
            for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
          }
        }
      });
}

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BatchNormState<T>& state, Mode mode) {
  constexpr const char* op = "batchnorm2d";
  require_rank(op, input, 4, "input");
  const std::size_t n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
  require_rank(op, gamma, 1, "gamma");
  require_rank(op, beta, 1, "beta");
  if (gamma.dim(0) != c || beta.dim(0) != c || state.running_mean.size() != c ||
      state.running_var.size() != c)
    shape_error(op, "channel count " + std::to_string(c) + " does not match parameters");
  if (mode == Mode::Eval && !state.initialized)
    throw DomainError("batchnorm2d: eval mode before any train step (running stats uninitialised)");

  const std::size_t m = n * plane;
  std::vector<T> mean(c), invstd(c);
  const auto x = input.values();

  if (mode == Mode::Train) {
    std::vector<double> batch_var(c);
#pragma omp parallel for schedule(static)
    for (long long ch = 0; ch < ll(c); ++ch) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = x.data() + (b * c + static_cast<std::size_t>(ch)) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(m);
      double ss = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = x.data() + (b * c + static_cast<std::size_t>(ch)) * plane;
        for (std::size_t i = 0; i < plane; ++i) ss += (p[i] - mu) * (p[i] - mu);
      }
      const double var = ss / static_cast<double>(m);
      mean[ch] = static_cast<T>(mu);
      invstd[ch] = static_cast<T>(1.0 / std::sqrt(var + state.eps));
      batch_var[ch] = var;
    }
    const double mom = state.momentum;
    const double unbias = m > 1 ? static_cast<double>(m) / static_cast<double>(m - 1) : 1.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      state.running_mean[ch] =
          static_cast<T>(mom * state.running_mean[ch] + (1.0 - mom) * mean[ch]);
      state.running_var[ch] =
          static_cast<T>(mom * state.running_var[ch] + (1.0 - mom) * batch_var[ch] * unbias);
    }
    state.initialized = true;
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = state.running_mean[ch];
      invstd[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(state.running_var[ch]) + state.eps));
    }
  }

  std::vector<T> out(x.size());
  const auto g = gamma.values(), bt = beta.values();
#pragma omp parallel for schedule(static)
  for (long long bc = 0; bc < ll(n * c); ++bc) {
    const std::size_t ch = static_cast<std::size_t>(bc) % c;
    const T* p = x.data() + static_cast<std::size_t>(bc) * plane;
    T* o = out.data() + static_cast<std::size_t>(bc) * plane;
    for (std::size_t i = 0; i < plane; ++i) o[i] = g[ch] * ((p[i] - mean[ch]) * invstd[ch]) + bt[ch];
  }
  check_finite<T>(out, op);

  Node<T>* xn = &input.node();
  Node<T>* gn = &gamma.node();
  Node<T>* bn = &beta.node();
  return make_result<T>(
      input.shape(), std::move(out), op, {input, gamma, beta},
      [=, mean = std::move(mean), invstd = std::move(invstd)](Node<T>& self) {
        const auto& dy = self.grad;
        const auto& xv = xn->value;
        std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
#pragma omp parallel for schedule(static)
        for (long long ch = 0; ch < ll(c); ++ch) {
          double s1 = 0.0, s2 = 0.0;
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + static_cast<std::size_t>(ch)) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              const double xhat = (xv[off + i] - mean[ch]) * static_cast<double>(invstd[ch]);
              s1 += dy[off + i];
              s2 += dy[off + i] * xhat;
            }
          }
          sum_dy[ch] = s1;
          sum_dy_xhat[ch] = s2;
        }
        if (wants_grad(gn)) {
          auto dg = gn->grad_buffer();
          for (std::size_t ch = 0; ch < c; ++ch) dg[ch] += static_cast<T>(sum_dy_xhat[ch]);
        }
        if (wants_grad(bn)) {
          auto db = bn->grad_buffer();
          for (std::size_t ch = 0; ch < c; ++ch) db[ch] += static_cast<T>(sum_dy[ch]);
        }
        if (wants_grad(xn)) {
          auto dx = xn->grad_buffer();
          const auto& gv = gn->value;
          const double inv_m = 1.0 / static_cast<double>(m);
#pragma omp parallel for schedule(static)
          for (long long bc = 0; bc < ll(n * c); ++bc) {
            const std::size_t ch = static_cast<std::size_t>(bc) % c;
            const std::size_t off = static_cast<std::size_t>(bc) * plane;
            const double gi = static_cast<double>(gv[ch]) * invstd[ch];
            for (std::size_t i = 0; i < plane; ++i) {
              if (mode == Mode::Train) {
                const double xhat = (xv[off + i] - mean[ch]) * static_cast<double>(invstd[ch]);
                dx[off + i] += static_cast<T>(
                    gi * (dy[off + i] - inv_m * sum_dy[ch] - xhat * inv_m * sum_dy_xhat[ch]));
              } else {
                dx[off + i] += static_cast<T>(gi * dy[off + i]);
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  const auto xv = x.values();
  std::vector<T> out(xv.size());
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < ll(xv.size()); ++i) out[i] = xv[i] > T{0} ? xv[i] : T{0};
  Node<T>* xn = &x.node();
  return make_result<T>(x.shape(), std::move(out), "relu", {x}, [xn](Node<T>& self) {
    auto dx = xn->grad_buffer();
    const auto& xv = xn->value;
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < ll(dx.size()); ++i)
      if (xv[i] > T{0}) dx[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  const auto xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = T{1} / (T{1} + std::exp(-xv[i]));
  Node<T>* xn = &x.node();
  return make_result<T>(x.shape(), std::move(out), "sigmoid", {x}, [xn](Node<T>& self) {
    auto dx = xn->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const T y = self.value[i];
      dx[i] += self.grad[i] * y * (T{1} - y);
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& x, const Tensor<T>& y) {
  if (x.shape() != y.shape())
    shape_error("add", to_string(x.shape()) + " vs " + to_string(y.shape()));
  const auto xv = x.values(), yv = y.values();
  std::vector<T> out(xv.size());
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < ll(xv.size()); ++i) out[i] = xv[i] + yv[i];
  Node<T>* xn = &x.node();
  Node<T>* yn = &y.node();
  return make_result<T>(x.shape(), std::move(out), "add", {x, y}, [xn, yn](Node<T>& self) {
    for (Node<T>* p : {xn, yn}) {
      if (!wants_grad(p)) continue;
      auto d = p->grad_buffer();
#pragma omp parallel for schedule(static)
      for (long long i = 0; i < ll(d.size()); ++i) d[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& x, const Tensor<T>& y) {
  if (x.shape() != y.shape())
    shape_error("mul", to_string(x.shape()) + " vs " + to_string(y.shape()));
  const auto xv = x.values(), yv = y.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * yv[i];
  Node<T>* xn = &x.node();
  Node<T>* yn = &y.node();
  return make_result<T>(x.shape(), std::move(out), "mul", {x, y}, [xn, yn](Node<T>& self) {
    if (wants_grad(xn)) {
      auto d = xn->grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * yn->value[i];
    }
    if (wants_grad(yn)) {
      auto d = yn->grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * xn->value[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  const auto xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * factor;
  Node<T>* xn = &x.node();
  return make_result<T>(x.shape(), std::move(out), "scale", {x}, [xn, factor](Node<T>& self) {
    auto d = xn->grad_buffer();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& x, const Tensor<T>& y) {
  constexpr const char* op = "concat_channels";
  require_rank(op, x, 4, "x");
  require_rank(op, y, 4, "y");
  if (x.dim(0) != y.dim(0) || x.dim(2) != y.dim(2) || x.dim(3) != y.dim(3))
    shape_error(op, to_string(x.shape()) + " vs " + to_string(y.shape()));
  const std::size_t n = x.dim(0), c1 = x.dim(1), c2 = y.dim(1), plane = x.dim(2) * x.dim(3);
  std::vector<T> out(n * (c1 + c2) * plane);
  for (std::size_t b = 0; b < n; ++b) {
    std::copy_n(x.values().data() + b * c1 * plane, c1 * plane,
                out.data() + b * (c1 + c2) * plane);
    std::copy_n(y.values().data() + b * c2 * plane, c2 * plane,
                out.data() + (b * (c1 + c2) + c1) * plane);
  }
  Node<T>* xn = &x.node();
  Node<T>* yn = &y.node();
  return make_result<T>({n, c1 + c2, x.dim(2), x.dim(3)}, std::move(out), op, {x, y},
                        [=](Node<T>& self) {
                          for (std::size_t b = 0; b < n; ++b) {
                            const T* g = self.grad.data() + b * (c1 + c2) * plane;
                            if (wants_grad(xn)) {
                              T* d = xn->grad_buffer().data() + b * c1 * plane;
                              for (std::size_t i = 0; i < c1 * plane; ++i) d[i] += g[i];
                            }
                            if (wants_grad(yn)) {
                              T* d = yn->grad_buffer().data() + b * c2 * plane;
                              for (std::size_t i = 0; i < c2 * plane; ++i) d[i] += g[c1 * plane + i];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require_rank("global_avg_pool", x, 4, "x");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  std::vector<T> out(n * c);
  for (std::size_t i = 0; i < n * c; ++i) {
    double s = 0.0;
    const T* p = x.values().data() + i * plane;
    for (std::size_t j = 0; j < plane; ++j) s += p[j];
    out[i] = static_cast<T>(s / static_cast<double>(plane));
  }
  Node<T>* xn = &x.node();
  return make_result<T>({n, c}, std::move(out), "global_avg_pool", {x}, [=](Node<T>& self) {
    auto d = xn->grad_buffer();
    const T inv = static_cast<T>(1.0 / static_cast<double>(plane));
    for (std::size_t i = 0; i < n * c; ++i) {
      const T g = self.grad[i] * inv;
      for (std::size_t j = 0; j < plane; ++j) d[i * plane + j] += g;
    }
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  constexpr const char* op = "linear";
  require_rank(op, x, 2, "x");
  require_rank(op, weight, 2, "weight");
  const std::size_t n = x.dim(0), in = x.dim(1), outf = weight.dim(0);
  if (weight.dim(1) != in)
    shape_error(op, "weight " + to_string(weight.shape()) + " vs input " + to_string(x.shape()));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != outf))
    shape_error(op, "bias must have shape [" + std::to_string(outf) + "]");
  std::vector<T> out(n * outf);
  const auto xv = x.values(), wv = weight.values();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < outf; ++o) {
      double s = bias.defined() ? static_cast<double>(bias.values()[o]) : 0.0;
      for (std::size_t i = 0; i < in; ++i) s += static_cast<double>(xv[b * in + i]) * wv[o * in + i];
      out[b * outf + o] = static_cast<T>(s);
    }
  check_finite<T>(out, op);
  Node<T>* xn = &x.node();
  Node<T>* wn = &weight.node();
  Node<T>* bn = bias.defined() ? &bias.node() : nullptr;
  return make_result<T>({n, outf}, std::move(out), op, {x, weight, bias}, [=](Node<T>& self) {
    const auto& g = self.grad;
    if (wants_grad(wn)) {
      auto dw = wn->grad_buffer();
      for (std::size_t o = 0; o < outf; ++o)
        for (std::size_t i = 0; i < in; ++i) {
          double s = 0.0;
          for (std::size_t b = 0; b < n; ++b) s += static_cast<double>(g[b * outf + o]) * xn->value[b * in + i];
          dw[o * in + i] += static_cast<T>(s);
        }
    }
    if (wants_grad(bn)) {
      auto db = bn->grad_buffer();
      for (std::size_t o = 0; o < outf; ++o) {
        double s = 0.0;
        for (std::size_t b = 0; b < n; ++b) s += g[b * outf + o];
        db[o] += static_cast<T>(s);
      }
    }
    if (wants_grad(xn)) {
      auto dx = xn->grad_buffer();
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < in; ++i) {
          double s = 0.0;
          for (std::size_t o = 0; o < outf; ++o) s += static_cast<double>(g[b * outf + o]) * wn->value[o * in + i];
          dx[b * in + i] += static_cast<T>(s);
        }
    }
  });
}

template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& gate) {
  constexpr const char* op = "scale_channels";
  require_rank(op, x, 4, "x");
  require_rank(op, gate, 2, "gate");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (gate.dim(0) != n || gate.dim(1) != c)
    shape_error(op, "gate " + to_string(gate.shape()) + " vs input " + to_string(x.shape()));
  std::vector<T> out(x.numel());
  const auto xv = x.values(), gv = gate.values();
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < ll(n * c); ++i)
    for (std::size_t j = 0; j < plane; ++j)
      out[static_cast<std::size_t>(i) * plane + j] = xv[static_cast<std::size_t>(i) * plane + j] * gv[i];
  Node<T>* xn = &x.node();
  Node<T>* gn = &gate.node();
  return make_result<T>(x.shape(), std::move(out), op, {x, gate}, [=](Node<T>& self) {
    const auto& g = self.grad;
    if (wants_grad(xn)) {
      auto dx = xn->grad_buffer();
#pragma omp parallel for schedule(static)
      for (long long i = 0; i < ll(n * c); ++i)
        for (std::size_t j = 0; j < plane; ++j)
          dx[static_cast<std::size_t>(i) * plane + j] += g[static_cast<std::size_t>(i) * plane + j] * gn->value[i];
    }
    if (wants_grad(gn)) {
      auto dg = gn->grad_buffer();
      for (std::size_t i = 0; i < n * c; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < plane; ++j)
          s += static_cast<double>(g[i * plane + j]) * xn->value[i * plane + j];
        dg[i] += static_cast<T>(s);
      }
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double s = 0.0;
  for (const T& v : x.values()) s += v;
  Node<T>* xn = &x.node();
  return make_result<T>({}, {static_cast<T>(s)}, "sum", {x}, [xn](Node<T>& self) {
    auto d = xn->grad_buffer();
    const T g = self.grad[0];
    for (T& v : d) v += g;
  });
}

#define MTCURV_INSTANTIATE(T)                                                                  \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                               std::size_t, std::size_t);                                      \
  template Tensor<T> maxpool2d<T>(const Tensor<T>&);                                           \
  template Tensor<T> conv_transpose2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> batchnorm2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                    BatchNormState<T>&, Mode);                                 \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                             \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                            \
  template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                                     \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> scale_channels<T>(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> sum<T>(const Tensor<T>&);

MTCURV_INSTANTIATE(float)
MTCURV_INSTANTIATE(double)
#undef MTCURV_INSTANTIATE

}  // namespace mtcurv::tensor
