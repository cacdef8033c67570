#include "mtcurv/kernels.hpp"

#include <algorithm>
#include <cassert>
#include <cstring>
#include <vector>

namespace mtcurv::kernels {
namespace {

// One 64-byte SIMD register worth of T (AVX-512 zmm; GCC splits it on
// narrower targets).
template <typename T>
struct VecOf;
template <>
struct VecOf<float> {
  typedef float type __attribute__((vector_size(64)));
};
template <>
struct VecOf<double> {
  typedef double type __attribute__((vector_size(64)));
};
template <typename T>
using Vec = typename VecOf<T>::type;

template <typename T>
constexpr std::size_t kLanes = 64 / sizeof(T);

constexpr std::size_t kRows = 4;  // MR: rows of C per register tile

template <typename T>
inline Vec<T> load(const T* p) {
  Vec<T> v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}

template <typename T>
inline void store(T* p, const Vec<T>& v) {
  std::memcpy(p, &v, sizeof(v));
}

// C[MR x NV*lanes] tile. A is read with row stride lda, B with row stride ldb.
template <typename T, std::size_t MR, std::size_t NV>
inline void tile(const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c,
                 std::size_t ldc, std::size_t k, bool accumulate) {
  constexpr std::size_t L = kLanes<T>;
  Vec<T> acc[MR][NV];
  for (std::size_t r = 0; r < MR; ++r)
    for (std::size_t v = 0; v < NV; ++v) acc[r][v] = Vec<T>{};

  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * ldb;
    Vec<T> bv[NV];
    for (std::size_t v = 0; v < NV; ++v) bv[v] = load(brow + v * L);
    for (std::size_t r = 0; r < MR; ++r) {
      const Vec<T> av = Vec<T>{} + a[r * lda + p];
      for (std::size_t v = 0; v < NV; ++v) acc[r][v] += av * bv[v];
    }
  }

  for (std::size_t r = 0; r < MR; ++r) {
    for (std::size_t v = 0; v < NV; ++v) {
      T* dst = c + r * ldc + v * L;
      if (accumulate)
        store(dst, load(dst) + acc[r][v]);
      else
        store(dst, acc[r][v]);
    }
  }
}

// Scalar fallback for ragged columns; same k order as the vector tiles.
template <typename T>
inline void tile_scalar(const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c,
                        std::size_t ldc, std::size_t rows, std::size_t cols, std::size_t k,
                        bool accumulate) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) {
      T sum = 0;
      for (std::size_t p = 0; p < k; ++p) sum += a[r * lda + p] * b[p * ldb + j];
      c[r * ldc + j] = accumulate ? c[r * ldc + j] + sum : sum;
    }
  }
}

template <typename T, std::size_t MR>
inline void row_panel(const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c,
                      std::size_t ldc, std::size_t j0, std::size_t width, std::size_t k,
                      bool accumulate) {
  constexpr std::size_t L = kLanes<T>;
  std::size_t j = j0;
  const std::size_t end = j0 + width;
  for (; j + 4 * L <= end; j += 4 * L)
    tile<T, MR, 4>(a, lda, b + j, ldb, c + j, ldc, k, accumulate);
  for (; j + L <= end; j += L) tile<T, MR, 1>(a, lda, b + j, ldb, c + j, ldc, k, accumulate);
  if (j < end) tile_scalar(a, lda, b + j, ldb, c + j, ldc, MR, end - j, k, accumulate);
}

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) std::fill(c, c + m * n, T{0});
    return;
  }
  // Column panels keep a K x panel slice of B hot in L2 while every row
  // block streams past it. Tile boundaries depend only on (m, n), never on
  // the thread count.
  constexpr std::size_t kPanel = 4 * kLanes<T> * 4;
  const std::size_t row_blocks = (m + kRows - 1) / kRows;
  const std::size_t col_panels = (n + kPanel - 1) / kPanel;
  const auto tiles = static_cast<long long>(row_blocks * col_panels);

#pragma omp parallel for schedule(static)
  for (long long t = 0; t < tiles; ++t) {
    const std::size_t jp = static_cast<std::size_t>(t) / row_blocks;
    const std::size_t ib = static_cast<std::size_t>(t) % row_blocks;
    const std::size_t i = ib * kRows;
    const std::size_t j0 = jp * kPanel;
    const std::size_t width = std::min(kPanel, n - j0);
    if (i + kRows <= m) {
      row_panel<T, kRows>(a + i * k, k, b, n, c + i * n, n, j0, width, k, accumulate);
    } else {
      for (std::size_t r = i; r < m; ++r)
        row_panel<T, 1>(a + r * k, k, b, n, c + r * n, n, j0, width, k, accumulate);
    }
  }
}

}  // namespace

template <typename T>
void transpose(std::size_t rows, std::size_t cols, std::span<const T> in, std::span<T> out) {
  assert(in.size() >= rows * cols && out.size() >= rows * cols);
  constexpr std::size_t B = 32;
  const auto row_blocks = static_cast<long long>((rows + B - 1) / B);
#pragma omp parallel for schedule(static)
  for (long long rb = 0; rb < row_blocks; ++rb) {
    const std::size_t r0 = static_cast<std::size_t>(rb) * B;
    const std::size_t r1 = std::min(rows, r0 + B);
    for (std::size_t c0 = 0; c0 < cols; c0 += B) {
      const std::size_t c1 = std::min(cols, c0 + B);
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) out[c * rows + r] = in[r * cols + c];
    }
  }
}

template <typename T>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate) {
  assert(a.size() >= m * k && b.size() >= k * n && c.size() >= m * n);
  std::vector<T> a_packed;
  std::vector<T> b_packed;
  const T* pa = a.data();
  const T* pb = b.data();
  if (trans_a == Trans::Yes) {
    // a is stored k x m
    a_packed.resize(m * k);
    transpose<T>(k, m, a, a_packed);
    pa = a_packed.data();
  }
  if (trans_b == Trans::Yes) {
    // b is stored n x k
    b_packed.resize(k * n);
    transpose<T>(n, k, b, b_packed);
    pb = b_packed.data();
  }
  gemm_nn(m, n, k, pa, pb, c.data(), accumulate);
}

template <typename T>
void im2col(const ConvShape& s, std::span<const T> input, std::span<T> col) {
  const std::size_t oh = s.out_height(), ow = s.out_width();
  const std::size_t positions = s.positions();
  const std::size_t kk = s.kernel * s.kernel;
  assert(col.size() >= s.patch() * positions);
  const auto rows = static_cast<long long>(s.patch());
#pragma omp parallel for schedule(static)
  for (long long row = 0; row < rows; ++row) {
    const std::size_t c = static_cast<std::size_t>(row) / kk;
    const std::size_t ky = (static_cast<std::size_t>(row) % kk) / s.kernel;
    const std::size_t kx = static_cast<std::size_t>(row) % s.kernel;
    T* dst = col.data() + static_cast<std::size_t>(row) * positions;
    for (std::size_t n = 0; n < s.batch; ++n) {
      const T* plane = input.data() + (n * s.channels + c) * s.height * s.width;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        const long long iy = static_cast<long long>(oy * s.stride + ky) -
                             static_cast<long long>(s.padding);
        T* out = dst + (n * oh + oy) * ow;
        if (iy < 0 || iy >= static_cast<long long>(s.height)) {
          std::fill(out, out + ow, T{0});
          continue;
        }
        const T* src = plane + static_cast<std::size_t>(iy) * s.width;
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const long long ix = static_cast<long long>(ox * s.stride + kx) -
                               static_cast<long long>(s.padding);
          out[ox] = (ix < 0 || ix >= static_cast<long long>(s.width))
                        ? T{0}
                        : src[static_cast<std::size_t>(ix)];
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvShape& s, std::span<const T> col, std::span<T> input) {
  const std::size_t oh = s.out_height(), ow = s.out_width();
  const std::size_t positions = s.positions();
  const std::size_t kk = s.kernel * s.kernel;
  // One thread owns a (batch, channel) plane and walks its kernel taps in a
  // fixed order.
  const auto planes = static_cast<long long>(s.batch * s.channels);
#pragma omp parallel for schedule(static)
  for (long long pl = 0; pl < planes; ++pl) {
    const std::size_t n = static_cast<std::size_t>(pl) / s.channels;
    const std::size_t c = static_cast<std::size_t>(pl) % s.channels;
    T* plane = input.data() + static_cast<std::size_t>(pl) * s.height * s.width;
    for (std::size_t t = 0; t < kk; ++t) {
      const std::size_t ky = t / s.kernel, kx = t % s.kernel;
      const T* src = col.data() + (c * kk + t) * positions + n * oh * ow;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        const long long iy = static_cast<long long>(oy * s.stride + ky) -
                             static_cast<long long>(s.padding);
        if (iy < 0 || iy >= static_cast<long long>(s.height)) continue;
        T* dst = plane + static_cast<std::size_t>(iy) * s.width;
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const long long ix = static_cast<long long>(ox * s.stride + kx) -
                               static_cast<long long>(s.padding);
          if (ix < 0 || ix >= static_cast<long long>(s.width)) continue;
          dst[static_cast<std::size_t>(ix)] += src[oy * ow + ox];
        }
      }
    }
  }
}

template <typename T>
void fold_batch(std::size_t batch, std::size_t channels, std::size_t plane,
                std::span<const T> nchw, std::span<T> cp) {
  const auto rows = static_cast<long long>(channels);
#pragma omp parallel for schedule(static)
  for (long long c = 0; c < rows; ++c)
    for (std::size_t n = 0; n < batch; ++n)
      std::copy_n(nchw.data() + (n * channels + static_cast<std::size_t>(c)) * plane, plane,
                  cp.data() + static_cast<std::size_t>(c) * batch * plane + n * plane);
}

template <typename T>
void unfold_batch(std::size_t batch, std::size_t channels, std::size_t plane,
                  std::span<const T> cp, std::span<T> nchw) {
  const auto rows = static_cast<long long>(channels);
#pragma omp parallel for schedule(static)
  for (long long c = 0; c < rows; ++c)
    for (std::size_t n = 0; n < batch; ++n)
      std::copy_n(cp.data() + static_cast<std::size_t>(c) * batch * plane + n * plane, plane,
                  nchw.data() + (n * channels + static_cast<std::size_t>(c)) * plane);
}

template <typename T>
void maxpool2x2(std::size_t planes, std::size_t height, std::size_t width,
                std::span<const T> input, std::span<T> output, std::span<std::size_t> argmax) {
  const std::size_t oh = height / 2, ow = width / 2;
#pragma omp parallel for schedule(static)
  for (long long pl = 0; pl < static_cast<long long>(planes); ++pl) {
    const std::size_t base = static_cast<std::size_t>(pl) * height * width;
    const std::size_t obase = static_cast<std::size_t>(pl) * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = base + (2 * oy) * width + 2 * ox;
        const std::size_t cand[3] = {best + 1, best + width, best + width + 1};
        for (std::size_t idx : cand)
          if (input[idx] > input[best]) best = idx;
        output[obase + oy * ow + ox] = input[best];
        argmax[obase + oy * ow + ox] = best;
      }
    }
  }
}

void separable_filter(std::size_t height, std::size_t width, std::span<const double> input,
                      std::span<const double> taps, Border border, std::span<double> output) {
  const std::size_t k = taps.size();
  const std::size_t half = k / 2;
  const bool valid = border == Border::Valid;
  const std::size_t oh = valid ? height - k + 1 : height;
  const std::size_t ow = valid ? width - k + 1 : width;
  std::vector<double> rows(height * ow);

#pragma omp parallel for schedule(static)
  for (long long y = 0; y < static_cast<long long>(height); ++y) {
    const double* src = input.data() + static_cast<std::size_t>(y) * width;
    double* dst = rows.data() + static_cast<std::size_t>(y) * ow;
    for (std::size_t x = 0; x < ow; ++x) {
      double sum = 0.0;
      for (std::size_t t = 0; t < k; ++t) {
        const long long ix = valid ? static_cast<long long>(x + t)
                                   : static_cast<long long>(x + t) - static_cast<long long>(half);
        if (ix < 0 || ix >= static_cast<long long>(width)) continue;
        sum += taps[t] * src[ix];
      }
      dst[x] = sum;
    }
  }

#pragma omp parallel for schedule(static)
  for (long long y = 0; y < static_cast<long long>(oh); ++y) {
    double* dst = output.data() + static_cast<std::size_t>(y) * ow;
    for (std::size_t x = 0; x < ow; ++x) {
      double sum = 0.0;
      for (std::size_t t = 0; t < k; ++t) {
        const long long iy = valid ? y + static_cast<long long>(t)
                                   : y + static_cast<long long>(t) - static_cast<long long>(half);
        if (iy < 0 || iy >= static_cast<long long>(height)) continue;
        sum += taps[t] * rows[static_cast<std::size_t>(iy) * ow + x];
      }
      dst[x] = sum;
    }
  }
}

#define MTCURV_INSTANTIATE(T)                                                                 \
  template void gemm<T>(Trans, Trans, std::size_t, std::size_t, std::size_t,                  \
                        std::span<const T>, std::span<const T>, std::span<T>, bool);          \
  template void transpose<T>(std::size_t, std::size_t, std::span<const T>, std::span<T>);    \
  template void im2col<T>(const ConvShape&, std::span<const T>, std::span<T>);               \
  template void col2im<T>(const ConvShape&, std::span<const T>, std::span<T>);               \
  template void fold_batch<T>(std::size_t, std::size_t, std::size_t, std::span<const T>,     \
                              std::span<T>);                                                  \
  template void unfold_batch<T>(std::size_t, std::size_t, std::size_t, std::span<const T>,   \
                                std::span<T>);                                                \
  template void maxpool2x2<T>(std::size_t, std::size_t, std::size_t, std::span<const T>,     \
                              std::span<T>, std::span<std::size_t>);

MTCURV_INSTANTIATE(float)
MTCURV_INSTANTIATE(double)
#undef MTCURV_INSTANTIATE

}  // namespace mtcurv::kernels
