#include "mtcurv/losses.hpp"

#include <cmath>

#include "mtcurv/geometry.hpp"
#include "mtcurv/ops.hpp"

namespace mtcurv::losses {

using tensor::Node;
using tensor::Shape;

std::string_view term_name(Term term) {
  switch (term) {
    case Term::Mse: return "mse";
    case Term::Grad: return "grad";
    case Term::Huber: return "huber";
    case Term::Laplacian: return "laplacian";
  }
  return "unknown";
}

Term parse_term(std::string_view name) {
  for (Term t : {Term::Mse, Term::Grad, Term::Huber, Term::Laplacian})
    if (term_name(t) == name) return t;
  throw DomainError("unknown loss term '" + std::string(name) + "'");
}

const std::vector<std::string>& LossSpec::preset_names() {
  static const std::vector<std::string> names{"mse", "mse_grad", "huber_grad", "mse_lap"};
  return names;
}

LossSpec LossSpec::preset(std::string_view name) {
  LossSpec s;
  if (name == "mse") s.terms = {{Term::Mse, 1.0}};
  else if (name == "mse_grad") s.terms = {{Term::Mse, 1.0}, {Term::Grad, 1.0}};
  else if (name == "huber_grad") s.terms = {{Term::Huber, 1.0}, {Term::Grad, 1.0}};
  else if (name == "mse_lap") s.terms = {{Term::Mse, 1.0}, {Term::Laplacian, 1.0}};
  else
    throw DomainError("unknown loss preset '" + std::string(name) +
                      "' (expected mse, mse_grad, huber_grad or mse_lap)");
  return s;
}

std::string LossSpec::name() const {
  for (const auto& n : preset_names()) {
    LossSpec p = preset(n);
    if (p.terms == terms) return n;
  }
  return "custom";
}

void LossSpec::validate() const {
  if (terms.empty()) throw DomainError("loss spec needs at least one term");
  for (const auto& t : terms)
    if (!(t.weight > 0.0) || !std::isfinite(t.weight))
      throw DomainError("loss term weights must be positive and finite");
  if (!(huber_delta > 0.0)) throw DomainError("huber_delta must be > 0");
}

namespace {

struct Planes {
  std::size_t count, height, width;
};

template <typename T>
Planes check_pair(const char* op, const Tensor<T>& pred, const Tensor<T>& target,
                  std::size_t min_side) {
  if (!pred.defined() || !target.defined()) throw DomainError(std::string(op) + ": undefined input");
  if (pred.shape() != target.shape())
    throw DomainError(std::string(op) + ": shape mismatch " + tensor::to_string(pred.shape()) +
                      " vs " + tensor::to_string(target.shape()));
  if (pred.rank() < 2) throw DomainError(std::string(op) + ": need at least [H, W]");
  const std::size_t h = pred.dim(pred.rank() - 2), w = pred.dim(pred.rank() - 1);
  if (h < min_side || w < min_side)
    throw DomainError(std::string(op) + ": spatial dims must be at least " +
                      std::to_string(min_side) + "x" + std::to_string(min_side));
  return {pred.numel() / (h * w), h, w};
}

template <typename T>
std::vector<T> residual(const Tensor<T>& pred, const Tensor<T>& target) {
  auto p = pred.values();
  auto t = target.values();
  std::vector<T> r(p.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = p[i] - t[i];
  return r;
}

template <typename T>
Tensor<T> scalar_result(double value, const char* op, const Tensor<T>& pred,
                        std::function<void(Node<T>&)> fn) {
  return tensor::make_result<T>(Shape{}, {static_cast<T>(value)}, op, {pred}, std::move(fn));
}

}  // namespace

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  check_pair("mse_loss", pred, target, 1);
  auto r = residual(pred, target);
  double acc = 0.0;
  for (T v : r) acc += static_cast<double>(v) * v;
  const double n = static_cast<double>(r.size());
  Node<T>* pn = &pred.node();
  return scalar_result<T>(acc / n, "mse_loss", pred, [pn, r = std::move(r), n](Node<T>& self) {
    const double g = self.grad[0] * 2.0 / n;
    auto dp = pn->grad_buffer();
    for (std::size_t i = 0; i < r.size(); ++i) dp[i] += static_cast<T>(g * r[i]);
  });
}

template <typename T>
Tensor<T> grad_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  const Planes pl = check_pair("grad_loss", pred, target, 2);
  auto r = residual(pred, target);
  const std::size_t plane = pl.height * pl.width;
  std::vector<T> dx(r.size()), dy(r.size());
  double acc = 0.0;
  for (std::size_t p = 0; p < pl.count; ++p) {
    std::span<const T> rp(r.data() + p * plane, plane);
    std::span<T> xp(dx.data() + p * plane, plane), yp(dy.data() + p * plane, plane);
    geometry::grad_xy<T>(pl.height, pl.width, rp, xp, yp);
  }
  for (std::size_t i = 0; i < r.size(); ++i)
    acc += static_cast<double>(dx[i]) * dx[i] + static_cast<double>(dy[i]) * dy[i];
  const double n = static_cast<double>(r.size());
  Node<T>* pn = &pred.node();
  return scalar_result<T>(
      acc / n, "grad_loss", pred,
      [pn, pl, plane, dx = std::move(dx), dy = std::move(dy), n](Node<T>& self) {
        const T g = static_cast<T>(self.grad[0] * 2.0 / n);
        std::vector<T> gx(dx.size()), gy(dy.size());
        for (std::size_t i = 0; i < dx.size(); ++i) {
          gx[i] = g * dx[i];
          gy[i] = g * dy[i];
        }
        auto dp = pn->grad_buffer();
        for (std::size_t p = 0; p < pl.count; ++p)
          geometry::grad_xy_adjoint<T>(
              pl.height, pl.width, std::span<const T>(gx.data() + p * plane, plane),
              std::span<const T>(gy.data() + p * plane, plane), dp.subspan(p * plane, plane));
      });
}

template <typename T>
Tensor<T> huber_loss(const Tensor<T>& pred, const Tensor<T>& target, double delta) {
  if (!(delta > 0.0)) throw DomainError("huber_loss: delta must be > 0");
  check_pair("huber_loss", pred, target, 1);
  auto r = residual(pred, target);
  double acc = 0.0;
  for (T v : r) {
    const double a = std::abs(static_cast<double>(v));
    acc += a <= delta ? 0.5 * a * a : delta * (a - 0.5 * delta);
  }
  const double n = static_cast<double>(r.size());
  Node<T>* pn = &pred.node();
  return scalar_result<T>(acc / n, "huber_loss", pred,
                          [pn, r = std::move(r), n, delta](Node<T>& self) {
                            const double g = self.grad[0] / n;
                            auto dp = pn->grad_buffer();
                            for (std::size_t i = 0; i < r.size(); ++i) {
                              const double v = r[i];
                              const double d = std::abs(v) <= delta ? v : std::copysign(delta, v);
                              dp[i] += static_cast<T>(g * d);
                            }
                          });
}

template <typename T>
Tensor<T> laplacian_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  const Planes pl = check_pair("laplacian_loss", pred, target, 3);
  auto r = residual(pred, target);
  const std::size_t plane = pl.height * pl.width;
  std::vector<T> lap(r.size());
  for (std::size_t p = 0; p < pl.count; ++p)
    geometry::laplacian<T>(pl.height, pl.width, std::span<const T>(r.data() + p * plane, plane),
                           std::span<T>(lap.data() + p * plane, plane));
  double acc = 0.0;
  for (T v : lap) acc += static_cast<double>(v) * v;
  const double n = static_cast<double>(r.size());
  Node<T>* pn = &pred.node();
  return scalar_result<T>(acc / n, "laplacian_loss", pred,
                          [pn, pl, plane, lap = std::move(lap), n](Node<T>& self) {
                            const T g = static_cast<T>(self.grad[0] * 2.0 / n);
                            std::vector<T> gl(lap.size());
                            for (std::size_t i = 0; i < lap.size(); ++i) gl[i] = g * lap[i];
                            auto dp = pn->grad_buffer();
                            for (std::size_t p = 0; p < pl.count; ++p)
                              geometry::laplacian_adjoint<T>(
                                  pl.height, pl.width,
                                  std::span<const T>(gl.data() + p * plane, plane),
                                  dp.subspan(p * plane, plane));
                          });
}

template <typename T>
CompositeLoss<T> composite_loss(const LossSpec& spec, const Tensor<T>& pred,
                                const Tensor<T>& target) {
  spec.validate();
  CompositeLoss<T> out;
  for (const auto& term : spec.terms) {
    Tensor<T> v;
    switch (term.kind) {
      case Term::Mse: v = mse_loss(pred, target); break;
      case Term::Grad: v = grad_loss(pred, target); break;
      case Term::Huber: v = huber_loss(pred, target, spec.huber_delta); break;
      case Term::Laplacian: v = laplacian_loss(pred, target); break;
    }
    out.components.emplace_back(std::string(term_name(term.kind)), static_cast<double>(v.item()));
    auto weighted = term.weight == 1.0 ? v : tensor::scale(v, static_cast<T>(term.weight));
    out.total = out.total.defined() ? tensor::add(out.total, weighted) : weighted;
  }
  return out;
}

#define MTCURV_INSTANTIATE(T)                                                              \
  template Tensor<T> mse_loss<T>(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> grad_loss<T>(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> huber_loss<T>(const Tensor<T>&, const Tensor<T>&, double);             \
  template Tensor<T> laplacian_loss<T>(const Tensor<T>&, const Tensor<T>&);                 \
  template CompositeLoss<T> composite_loss<T>(const LossSpec&, const Tensor<T>&,            \
                                              const Tensor<T>&);
MTCURV_INSTANTIATE(float)
MTCURV_INSTANTIATE(double)
#undef MTCURV_INSTANTIATE

}  // namespace mtcurv::losses
