#include <omp.h>

#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "mtcurv/adam.hpp"
#include "mtcurv/gradcheck.hpp"
#include "mtcurv/kernels.hpp"
#include "mtcurv/ops.hpp"
#include "mtcurv/reference.hpp"

using namespace mtcurv;
using namespace mtcurv::tensor;
namespace k = mtcurv::kernels;

namespace {

template <typename T = float>
std::vector<T> random_values(std::size_t n, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(u(rng));
  return v;
}

template <typename T>
Tensor<T> rnd(Shape s, std::uint64_t seed) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return Tensor<T>(s, random_values<T>(n, seed));
}

double max_abs_diff(std::span<const float> a, std::span<const float> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - b[i]));
  return m;
}

// Same computation at 1 thread and at several; results must match bitwise.
template <typename F>
void across_threads(F&& f) {
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const auto one = f();
  omp_set_num_threads(4);
  const auto four = f();
  omp_set_num_threads(saved);
  CHECK(one == four);
}

}  // namespace

TEST_SUITE("tensorcore") {
  TEST_CASE("gemm matches the serial reference for every transpose") {
    for (auto ta : {k::Trans::No, k::Trans::Yes})
      for (auto tb : {k::Trans::No, k::Trans::Yes}) {
        const std::size_t m = 37, n = 53, kk = 29;
        const auto a = random_values(m * kk, 1), b = random_values(kk * n, 2);
        auto c = random_values(m * n, 3), r = c;
        k::gemm<float>(ta, tb, m, n, kk, a, b, c, true);
        k::reference::gemm<float>(ta, tb, m, n, kk, a, b, r, true);
        CHECK(max_abs_diff(c, r) <= 1e-4);
      }
  }

  TEST_CASE("kernels are bit-identical across thread counts") {
    across_threads([] {
      const auto a = random_values(64 * 70, 1), b = random_values(70 * 90, 2);
      std::vector<float> c(64 * 90);
      k::gemm<float>(k::Trans::No, k::Trans::Yes, 64, 90, 70, a, b, c, false);
      return c;
    });
    across_threads([] {
      const auto x = rnd<float>({2, 5, 12, 12}, 4), w = rnd<float>({6, 5, 3, 3}, 5),
                 b = rnd<float>({6}, 6);
      const auto y = conv2d(x, w, b, 1, 1);
      return std::vector<float>(y.values().begin(), y.values().end());
    });
    across_threads([] {
      const auto in = random_values<double>(40 * 33, 7), taps = random_values<double>(11, 8);
      std::vector<double> out(30 * 23);
      k::separable_filter(40, 33, in, taps, k::Border::Valid, out);
      return out;
    });
  }

  TEST_CASE("conv2d examples") {
    const auto x = rnd<float>({1, 1, 4, 5}, 1);
    const auto id = conv2d(x, Tensor<float>({1, 1, 1, 1}, 1.0f), Tensor<float>({1}, 0.0f));
    CHECK(max_abs_diff(id.values(), x.values()) == 0.0);

    const auto c = conv2d(Tensor<float>({1, 1, 5, 5}, 0.5f), Tensor<float>({1, 1, 3, 3}, 1.0f),
                          Tensor<float>(), 1, 1);
    for (std::size_t i = 1; i < 4; ++i)
      for (std::size_t j = 1; j < 4; ++j) CHECK(c.values()[i * 5 + j] == doctest::Approx(4.5f));

    for (std::size_t kern : {1, 2, 3})
      for (std::size_t stride : {1, 2}) {
        const std::size_t pad = kern == 3 ? 1 : 0;
        const auto in = rnd<float>({1, 2, 5, 5}, 10 + kern), w = rnd<float>({3, 2, kern, kern}, 20),
                   b = rnd<float>({3}, 30);
        const auto y = conv2d(in, w, b, stride, pad);
        k::ConvShape s{1, 2, 5, 5, kern, stride, pad};
        const auto ref = k::reference::conv2d<float>(s, 3, in.values(), w.values(), b.values());
        CHECK(y.shape() == Shape{1, 3, s.out_height(), s.out_width()});
        CHECK(max_abs_diff(y.values(), ref) <= 1e-5);
      }
    CHECK_THROWS_AS(conv2d(x, Tensor<float>({1, 2, 3, 3}), Tensor<float>()), DomainError);
  }

  TEST_CASE("maxpool examples") {
    const auto y = maxpool2d(Tensor<float>({1, 1, 2, 2}, {1, 2, 3, 4}));
    CHECK(y.values()[0] == 4.0f);

    auto x = Tensor<float>::parameter({1, 1, 4, 4}, std::vector<float>(16, 2.0f));
    const auto p = maxpool2d(x);
    for (float v : p.values()) CHECK(v == 2.0f);
    backward(sum(p));
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        CHECK(x.grad()[i * 4 + j] == ((i % 2 == 0 && j % 2 == 0) ? 1.0f : 0.0f));

    const auto r = rnd<float>({2, 3, 8, 8}, 3);
    const auto m = maxpool2d(r);
    CHECK(max_abs_diff(m.values(), k::reference::maxpool2x2<float>(6, 8, 8, r.values())) == 0.0);
    CHECK_THROWS_AS(maxpool2d(Tensor<float>({1, 1, 3, 4})), DomainError);
  }

  TEST_CASE("transposed convolution") {
    const auto w = rnd<float>({1, 1, 2, 2}, 1);
    const auto y = conv_transpose2d(Tensor<float>({1, 1, 1, 1}, 1.0f), w, Tensor<float>());
    CHECK(max_abs_diff(y.values(), w.values()) == 0.0);
    CHECK(conv_transpose2d(rnd<float>({1, 3, 4, 4}, 2), rnd<float>({3, 2, 2, 2}, 3), Tensor<float>())
              .shape() == Shape{1, 2, 8, 8});

    // <convT(x), y> == <x, conv_stride2(y)> with the same weight.
    const auto x = rnd<double>({2, 3, 4, 5}, 4), wt = rnd<double>({3, 2, 2, 2}, 5),
               yy = rnd<double>({2, 2, 8, 10}, 6);
    const auto lhs = conv_transpose2d(x, wt, Tensor<double>());
    const auto rhs = conv2d(yy, wt, Tensor<double>(), 2, 0);
    double a = 0, b = 0;
    for (std::size_t i = 0; i < lhs.numel(); ++i) a += lhs.values()[i] * yy.values()[i];
    for (std::size_t i = 0; i < x.numel(); ++i) b += x.values()[i] * rhs.values()[i];
    CHECK(std::abs(a - b) <= 1e-4);

    const auto xf = rnd<float>({1, 2, 3, 3}, 7), wf = rnd<float>({2, 3, 2, 2}, 8),
               bf = rnd<float>({3}, 9);
    const auto yf = conv_transpose2d(xf, wf, bf);
    const auto ref = k::reference::conv_transpose2x2<float>(1, 2, 3, 3, 3, xf.values(), wf.values(),
                                                            bf.values());
    CHECK(max_abs_diff(yf.values(), ref) <= 1e-5);
  }

  TEST_CASE("batchnorm") {
    const auto x = rnd<float>({3, 2, 4, 4}, 1);
    BatchNormState<float> st(2);
    const auto y = batchnorm2d(x, Tensor<float>({2}, 1.0f), Tensor<float>({2}, 0.0f), st, Mode::Train);
    for (std::size_t c = 0; c < 2; ++c) {
      double m = 0, v = 0;
      for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t i = 0; i < 16; ++i) m += y.values()[(n * 2 + c) * 16 + i];
      m /= 48;
      for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t i = 0; i < 16; ++i) v += std::pow(y.values()[(n * 2 + c) * 16 + i] - m, 2);
      v /= 48;
      CHECK(std::abs(m) <= 1e-5);
      CHECK(std::abs(v - 1) <= 1e-3);
    }
    BatchNormState<float> s2(2);
    const auto z = batchnorm2d(y, Tensor<float>({2}, 2.0f), Tensor<float>({2}, 3.0f), s2, Mode::Train);
    double m = 0, v = 0;
    for (float q : z.values()) m += q;
    m /= z.numel();
    for (float q : z.values()) v += (q - m) * (q - m);
    CHECK(m == doctest::Approx(3.0).epsilon(1e-4));
    CHECK(std::sqrt(v / z.numel()) == doctest::Approx(2.0).epsilon(1e-3));

    BatchNormState<float> fresh(2);
    CHECK_THROWS_AS(batchnorm2d(x, Tensor<float>({2}, 1.0f), Tensor<float>({2}, 0.0f), fresh, Mode::Eval),
                    DomainError);
    CHECK_NOTHROW(batchnorm2d(x, Tensor<float>({2}, 1.0f), Tensor<float>({2}, 0.0f), st, Mode::Eval));
  }

  TEST_CASE("elementwise examples") {
    const auto r = relu(Tensor<float>({2}, {-1.0f, 2.0f}));
    CHECK(r.values()[0] == 0.0f);
    CHECK(r.values()[1] == 2.0f);
    CHECK(sigmoid(Tensor<float>({1}, 0.0f)).values()[0] == 0.5f);
    const auto g = global_avg_pool(Tensor<float>({2, 3, 4, 4}, 1.25f));
    CHECK(g.shape() == Shape{2, 3});
    for (float v : g.values()) CHECK(v == 1.25f);
    CHECK_THROWS_AS(add(Tensor<float>({2}), Tensor<float>({3})), DomainError);
    CHECK_THROWS_AS(concat_channels(Tensor<float>({1, 1, 2, 2}), Tensor<float>({1, 1, 2, 3})),
                    DomainError);
  }

  TEST_CASE("backward examples") {
    auto x = Tensor<float>::parameter({3}, {1.0f, -2.0f, 0.5f});
    backward(sum(x));
    for (float g : x.grad()) CHECK(g == 1.0f);
    x.zero_grad();
    backward(sum(mul(x, x)));
    for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == 2.0f * x.values()[i]);
    CHECK_THROWS_AS(backward(mul(x, x)), DomainError);

    // Reuse accumulates.
    x.zero_grad();
    backward(sum(add(x, x)));
    for (float g : x.grad()) CHECK(g == 2.0f);
  }

  TEST_CASE("backward is linear") {
    auto x = Tensor<double>::parameter({2, 2, 4, 4}, random_values<double>(64, 1));
    const auto w = rnd<double>({3, 2, 3, 3}, 2);
    auto l1 = [&] { return sum(mul(conv2d(x, w, Tensor<double>(), 1, 1), conv2d(x, w, Tensor<double>(), 1, 1))); };
    auto l2 = [&] { return sum(sigmoid(x)); };
    backward(l1());
    const std::vector<double> g1(x.grad().begin(), x.grad().end());
    x.zero_grad();
    backward(l2());
    const std::vector<double> g2(x.grad().begin(), x.grad().end());
    x.zero_grad();
    backward(add(scale(l1(), 0.3), scale(l2(), -1.7)));
    for (std::size_t i = 0; i < g1.size(); ++i)
      CHECK(std::abs(x.grad()[i] - (0.3 * g1[i] - 1.7 * g2[i])) <= 1e-5);
  }

  TEST_CASE("every op passes the finite-difference check on 10 inputs") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed)
      for (const auto& r : gradcheck::op_suite(seed)) {
        INFO(r.name, " seed ", seed, " error ", r.max_rel_error);
        CHECK(r.passed);
        CHECK(r.max_rel_error <= 1e-3);
      }
  }

  TEST_CASE("fault injection breaks the conv2d check") {
    testing::inject_fault(testing::Fault::Conv2dBackward);
    bool conv_failed = false;
    for (const auto& r : gradcheck::op_suite(1))
      if (r.name.rfind("conv2d", 0) == 0) conv_failed = conv_failed || !r.passed;
    testing::inject_fault(testing::Fault::None);
    CHECK(conv_failed);
  }

  TEST_CASE("forward and gradients are deterministic") {
    auto run = [] {
      auto x = Tensor<float>::parameter({2, 3, 8, 8}, random_values(384, 1));
      const auto w = rnd<float>({4, 3, 3, 3}, 2);
      BatchNormState<float> st(4);
      backward(sum(relu(batchnorm2d(conv2d(x, w, Tensor<float>(), 1, 1), Tensor<float>({4}, 1.0f),
                                    Tensor<float>({4}, 0.0f), st, Mode::Train))));
      return std::vector<float>(x.grad().begin(), x.grad().end());
    };
    CHECK(run() == run());
    across_threads(run);
  }

  TEST_CASE("adam") {
    auto p = Tensor<float>::parameter({3}, {1.0f, 2.0f, 3.0f});
    std::vector<Tensor<float>> ps{p};
    AdamState<float> st;
    p.grad_mut();  // zero gradient
    adam_step<float>(ps, st);
    CHECK(p.values()[0] == 1.0f);
    CHECK(p.values()[2] == 3.0f);

    auto q = Tensor<float>::parameter({2}, {0.0f, 0.0f});
    std::vector<Tensor<float>> qs{q};
    AdamState<float> sq;
    q.grad_mut()[0] = 0.7f;
    q.grad_mut()[1] = -3.0f;
    adam_step<float>(qs, sq);
    CHECK(std::abs(q.values()[0] + 1e-3) <= 1e-6);
    CHECK(std::abs(q.values()[1] - 1e-3) <= 1e-6);

    auto w = Tensor<double>::parameter({1}, {0.0});
    std::vector<Tensor<double>> ws{w};
    AdamState<double> sw;
    sw.lr = 0.1;
    for (int i = 0; i < 100; ++i) {
      w.zero_grad();
      w.grad_mut()[0] = 2.0 * (w.values()[0] - 3.0);
      adam_step<double>(ws, sw);
    }
    CHECK(std::abs(w.values()[0] - 3.0) < 0.5);

    q.grad_mut()[0] = NAN;
    const float before = q.values()[1];
    CHECK_THROWS_AS(adam_step<float>(qs, sq), NumericFailure);
    CHECK(q.values()[1] == before);
  }
}
