#pragma once

// Serial textbook kernels. Slow on purpose: they are the oracles for the
// parallel kernels and the baseline in bench/. Accumulation is in double.

#include <cstddef>
#include <span>
#include <vector>

#include "mtcurv/kernels.hpp"

namespace mtcurv::kernels::reference {

template <typename T>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double sum = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = trans_a == Trans::Yes ? a[p * m + i] : a[i * k + p];
        const T bv = trans_b == Trans::Yes ? b[j * k + p] : b[p * n + j];
        sum += static_cast<double>(av) * static_cast<double>(bv);
      }
      c[i * n + j] = accumulate ? static_cast<T>(c[i * n + j] + sum) : static_cast<T>(sum);
    }
  }
}

/// Direct 6-loop cross-correlation. weight is [F, C, k, k]; bias may be empty.
template <typename T>
std::vector<T> conv2d(const ConvShape& s, std::size_t filters, std::span<const T> input,
                      std::span<const T> weight, std::span<const T> bias) {
  const std::size_t oh = s.out_height(), ow = s.out_width();
  std::vector<T> out(s.batch * filters * oh * ow);
  for (std::size_t n = 0; n < s.batch; ++n)
    for (std::size_t f = 0; f < filters; ++f)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double sum = bias.empty() ? 0.0 : static_cast<double>(bias[f]);
          for (std::size_t c = 0; c < s.channels; ++c)
            for (std::size_t ky = 0; ky < s.kernel; ++ky)
              for (std::size_t kx = 0; kx < s.kernel; ++kx) {
                const long long iy = static_cast<long long>(oy * s.stride + ky) -
                                     static_cast<long long>(s.padding);
                const long long ix = static_cast<long long>(ox * s.stride + kx) -
                                     static_cast<long long>(s.padding);
                if (iy < 0 || ix < 0 || iy >= static_cast<long long>(s.height) ||
                    ix >= static_cast<long long>(s.width))
                  continue;
                sum += static_cast<double>(
                           input[((n * s.channels + c) * s.height + iy) * s.width + ix]) *
                       static_cast<double>(
                           weight[((f * s.channels + c) * s.kernel + ky) * s.kernel + kx]);
              }
          out[((n * filters + f) * oh + oy) * ow + ox] = static_cast<T>(sum);
        }
  return out;
}

/// Direct 2x2/stride-2 transposed convolution. weight is [C, F, 2, 2].
template <typename T>
std::vector<T> conv_transpose2x2(std::size_t batch, std::size_t channels, std::size_t height,
                                 std::size_t width, std::size_t filters,
                                 std::span<const T> input, std::span<const T> weight,
                                 std::span<const T> bias) {
  const std::size_t oh = 2 * height, ow = 2 * width;
  std::vector<double> acc(batch * filters * oh * ow, 0.0);
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
          const double v = input[((n * channels + c) * height + y) * width + x];
          for (std::size_t f = 0; f < filters; ++f)
            for (std::size_t a = 0; a < 2; ++a)
              for (std::size_t b = 0; b < 2; ++b)
                acc[((n * filters + f) * oh + 2 * y + a) * ow + 2 * x + b] +=
                    v * static_cast<double>(weight[((c * filters + f) * 2 + a) * 2 + b]);
        }
  std::vector<T> out(acc.size());
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t f = 0; f < filters; ++f)
      for (std::size_t i = 0; i < oh * ow; ++i) {
        const std::size_t idx = (n * filters + f) * oh * ow + i;
        out[idx] = static_cast<T>(acc[idx] + (bias.empty() ? 0.0 : bias[f]));
      }
  return out;
}

template <typename T>
std::vector<T> maxpool2x2(std::size_t planes, std::size_t height, std::size_t width,
                          std::span<const T> input) {
  std::vector<T> out(planes * (height / 2) * (width / 2));
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < height / 2; ++y)
      for (std::size_t x = 0; x < width / 2; ++x) {
        T best = input[(p * height + 2 * y) * width + 2 * x];
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t b = 0; b < 2; ++b)
            best = std::max(best, input[(p * height + 2 * y + a) * width + 2 * x + b]);
        out[(p * (height / 2) + y) * (width / 2) + x] = best;
      }
  return out;
}

/// Direct 2-D correlation with a k x k window (no separability).
inline std::vector<double> filter2d(std::size_t height, std::size_t width,
                                    std::span<const double> input,
                                    std::span<const double> window, std::size_t k,
                                    Border border) {
  const bool valid = border == Border::Valid;
  const std::size_t oh = valid ? height - k + 1 : height;
  const std::size_t ow = valid ? width - k + 1 : width;
  const long long half = valid ? 0 : static_cast<long long>(k / 2);
  std::vector<double> out(oh * ow, 0.0);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double sum = 0.0;
      for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b) {
          const long long iy = static_cast<long long>(y + a) - half;
          const long long ix = static_cast<long long>(x + b) - half;
          if (iy < 0 || ix < 0 || iy >= static_cast<long long>(height) ||
              ix >= static_cast<long long>(width))
            continue;
          sum += window[a * k + b] * input[static_cast<std::size_t>(iy) * width + ix];
        }
      out[y * ow + x] = sum;
    }
  return out;
}

}  // namespace mtcurv::kernels::reference
