#pragma once

// The attention-residual U-Net for curvature regression and its three
// ablation variants. All four share one skeleton:
//
//   encoder   depth x [block, maxpool]       filters base * 2^s
//   bottleneck block                          filters base * 2^depth
//   decoder   depth x [up-conv, concat, block, (SE)]
//   head      1x1 conv, no activation
//
// The variants differ only in the block type used on each side and whether
// squeeze-and-excitation follows each decoder block.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mtcurv/ops.hpp"

namespace mtcurv::model {

using tensor::Mode;
using tensor::Tensor;

enum class Arch { UNet, MTCurvNoAtt, MTCurvNoRes, MTCurv };

std::string_view arch_name(Arch arch);
/// Accepts "unet", "mtcurv_noatt", "mtcurv_nores", "mtcurv".
Arch parse_arch(std::string_view name);
inline constexpr Arch kAllArchs[] = {Arch::UNet, Arch::MTCurvNoAtt, Arch::MTCurvNoRes,
                                     Arch::MTCurv};

struct ModelSpec {
  Arch arch = Arch::MTCurv;
  std::size_t base_filters = 32;
  std::size_t depth = 4;
  std::size_t bottleneck_filters = 512;
  std::size_t se_reduction = 8;
  std::size_t input_channels = 1;
  std::size_t output_channels = 1;

  /// Residual blocks in encoder + bottleneck.
  bool residual_encoder() const { return arch == Arch::MTCurv || arch == Arch::MTCurvNoAtt; }
  /// SE attention after every decoder block.
  bool attention_decoder() const { return arch == Arch::MTCurv || arch == Arch::MTCurvNoRes; }
  /// Spatial dims must be divisible by this.
  std::size_t size_multiple() const { return std::size_t{1} << depth; }

  void validate() const;
  bool operator==(const ModelSpec&) const = default;
};

template <typename T>
struct ConvBN {
  Tensor<T> weight;  // [F, C, k, k], no bias (BN follows)
  Tensor<T> gamma;
  Tensor<T> beta;
  tensor::BatchNormState<T> bn;
  std::size_t padding = 1;
};

template <typename T>
struct ConvBlock {
  bool residual = false;
  ConvBN<T> first;
  ConvBN<T> second;
  std::optional<ConvBN<T>> shortcut;  // 1x1 projection when channels change
};

template <typename T>
struct SqueezeExcite {
  Tensor<T> fc1_weight, fc1_bias;  // C -> C/r
  Tensor<T> fc2_weight, fc2_bias;  // C/r -> C
};

template <typename T>
struct DecoderStage {
  Tensor<T> up_weight;  // [2C, C, 2, 2]
  Tensor<T> up_bias;
  ConvBlock<T> block;
  std::optional<SqueezeExcite<T>> se;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
struct NamedBuffer {
  std::string name;
  std::vector<T>* values;
};

/// global_avg_pool -> linear -> ReLU -> linear -> sigmoid -> channel gate.
template <typename T>
Tensor<T> squeeze_excite(const Tensor<T>& x, const SqueezeExcite<T>& se);

template <typename T>
class Model {
 public:
  /// He-uniform init for conv / linear weights, zero biases, BN gamma 1
  /// beta 0. The same seed gives the same weights for float and double.
  explicit Model(const ModelSpec& spec, std::uint64_t seed = 0);
  // Tensors are shared handles, so a copy would alias the weights.
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelSpec& spec() const { return spec_; }

  /// [N, C_in, H, W] -> [N, C_out, H, W]. Throws DomainError unless H and W
  /// are divisible by 2^depth.
  Tensor<T> forward(const Tensor<T>& image, Mode mode);

  /// Trainable tensors in a fixed, documented order.
  std::vector<NamedTensor<T>> parameters() const;
  std::vector<Tensor<T>> parameter_tensors() const;
  /// BN running statistics.
  std::vector<NamedBuffer<T>> buffers();
  std::size_t parameter_count() const;
  /// True once every BN layer has seen a train step (or was loaded).
  bool running_stats_ready() const;
  void mark_running_stats_ready();

  std::vector<SqueezeExcite<T>*> attention_layers();
  void zero_grad();

 private:
  ModelSpec spec_;
  std::vector<ConvBlock<T>> encoder_;
  ConvBlock<T> bottleneck_;
  std::vector<DecoderStage<T>> decoder_;  // decoder_[s] mirrors encoder_[s]
  Tensor<T> head_weight_, head_bias_;

  template <typename Fn>
  void visit_blocks(Fn&& fn) const;
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace mtcurv::model
