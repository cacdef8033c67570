#pragma once

// Data-parallel inner kernels shared by the tensor ops and the image metrics.
//
// Every kernel partitions its *outputs* across OpenMP threads and keeps the
// per-element accumulation order fixed, so results are bit-identical for any
// thread count. The serial, textbook versions in reference.hpp are kept as
// test oracles and as the baseline for bench/.

#include <cstddef>
#include <span>

namespace mtcurv::kernels {

enum class Trans { No, Yes };

/// C[m x n] (+)= op(A) * op(B), all row-major. op(A) is m x k, op(B) is k x n.
template <typename T>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate);

/// Row-major transpose: out[cols x rows] = in[rows x cols]^T.
template <typename T>
void transpose(std::size_t rows, std::size_t cols, std::span<const T> in, std::span<T> out);

/// Geometry of a square-kernel 2-D convolution over an NCHW batch.
struct ConvShape {
  std::size_t batch = 1;
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
  /// Rows of the column matrix: channels * kernel * kernel.
  std::size_t patch() const { return channels * kernel * kernel; }
  /// Columns of the column matrix: every output pixel of every batch item.
  std::size_t positions() const { return batch * out_height() * out_width(); }
};

/// col[patch x positions]; column index = (n * OH + oy) * OW + ox.
template <typename T>
void im2col(const ConvShape& s, std::span<const T> input, std::span<T> col);

/// Adjoint of im2col: input (+)= scatter(col).
template <typename T>
void col2im(const ConvShape& s, std::span<const T> col, std::span<T> input);

/// [F x batch*P] (column-major over batch) <-> NCHW with F channels.
template <typename T>
void fold_batch(std::size_t batch, std::size_t channels, std::size_t plane,
                std::span<const T> nchw, std::span<T> cp);
template <typename T>
void unfold_batch(std::size_t batch, std::size_t channels, std::size_t plane,
                  std::span<const T> cp, std::span<T> nchw);

/// 2x2/stride-2 max pool. argmax holds the flat input index of each winner
/// (first occurrence in row-major window order on ties).
template <typename T>
void maxpool2x2(std::size_t planes, std::size_t height, std::size_t width,
                std::span<const T> input, std::span<T> output, std::span<std::size_t> argmax);

/// Separable correlation of each plane with a 1-D kernel along x then y.
/// Mode::Valid shrinks by kernel-1 in each dimension, Mode::Zero keeps size.
enum class Border { Valid, Zero };
void separable_filter(std::size_t height, std::size_t width, std::span<const double> input,
                      std::span<const double> taps, Border border, std::span<double> output);

}  // namespace mtcurv::kernels
