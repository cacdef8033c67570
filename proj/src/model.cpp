#include "mtcurv/model.hpp"

#include <cmath>
#include <random>

namespace mtcurv::model {

using tensor::Shape;

std::string_view arch_name(Arch arch) {
  switch (arch) {
    case Arch::UNet: return "unet";
    case Arch::MTCurvNoAtt: return "mtcurv_noatt";
    case Arch::MTCurvNoRes: return "mtcurv_nores";
    case Arch::MTCurv: return "mtcurv";
  }
  return "unknown";
}

Arch parse_arch(std::string_view name) {
  for (Arch a : kAllArchs)
    if (arch_name(a) == name) return a;
  throw DomainError("unknown arch '" + std::string(name) +
                    "' (expected unet, mtcurv_noatt, mtcurv_nores or mtcurv)");
}

void ModelSpec::validate() const {
  if (depth < 1) throw DomainError("model depth must be >= 1");
  if (base_filters < 1) throw DomainError("base_filters must be >= 1");
  if (input_channels < 1 || output_channels < 1)
    throw DomainError("input/output channels must be >= 1");
  if (bottleneck_filters != base_filters * size_multiple())
    throw DomainError("bottleneck_filters must equal base_filters * 2^depth (" +
                      std::to_string(base_filters * size_multiple()) + ")");
  if (se_reduction < 1) throw DomainError("se_reduction must be >= 1");
  for (std::size_t s = 0; s < depth; ++s)
    if ((base_filters << s) % se_reduction != 0)
      throw DomainError("se_reduction " + std::to_string(se_reduction) +
                        " does not divide decoder channel count " +
                        std::to_string(base_filters << s));
}

namespace {

// Portable uniform in [0, 1) from the raw 64-bit stream.
double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

template <typename T>
Tensor<T> he_uniform(std::mt19937_64& rng, Shape shape, std::size_t fan_in) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<T> v(tensor::element_count(shape));
  for (T& x : v) x = static_cast<T>((2.0 * unit(rng) - 1.0) * bound);
  return Tensor<T>::parameter(std::move(shape), std::move(v));
}

template <typename T>
Tensor<T> constant(Shape shape, T value) {
  std::vector<T> v(tensor::element_count(shape), value);
  return Tensor<T>::parameter(std::move(shape), std::move(v));
}

template <typename T>
ConvBN<T> make_conv_bn(std::mt19937_64& rng, std::size_t in, std::size_t out, std::size_t k) {
  ConvBN<T> c;
  c.weight = he_uniform<T>(rng, {out, in, k, k}, in * k * k);
  c.gamma = constant<T>({out}, T{1});
  c.beta = constant<T>({out}, T{0});
  c.bn = tensor::BatchNormState<T>(out);
  c.padding = k / 2;
  return c;
}

template <typename T>
ConvBlock<T> make_block(std::mt19937_64& rng, std::size_t in, std::size_t out, bool residual) {
  ConvBlock<T> b;
  b.residual = residual;
  b.first = make_conv_bn<T>(rng, in, out, 3);
  b.second = make_conv_bn<T>(rng, out, out, 3);
  if (residual && in != out) b.shortcut = make_conv_bn<T>(rng, in, out, 1);
  return b;
}

template <typename T>
Tensor<T> conv_bn(const Tensor<T>& x, ConvBN<T>& c, Mode mode) {
  auto y = tensor::conv2d(x, c.weight, Tensor<T>{}, 1, c.padding);
  return tensor::batchnorm2d(y, c.gamma, c.beta, c.bn, mode);
}

template <typename T>
Tensor<T> block_forward(const Tensor<T>& x, ConvBlock<T>& b, Mode mode) {
  auto h = tensor::relu(conv_bn(x, b.first, mode));
  h = conv_bn(h, b.second, mode);
  if (!b.residual) return tensor::relu(h);
  auto skip = b.shortcut ? conv_bn(x, *b.shortcut, mode) : x;
  return tensor::relu(tensor::add(h, skip));
}

template <typename T>
void collect(std::vector<NamedTensor<T>>& out, const std::string& prefix, const ConvBN<T>& c) {
  out.push_back({prefix + ".weight", c.weight});
  out.push_back({prefix + ".bn.gamma", c.gamma});
  out.push_back({prefix + ".bn.beta", c.beta});
}

template <typename T>
void collect(std::vector<NamedTensor<T>>& out, const std::string& prefix, const ConvBlock<T>& b) {
  collect(out, prefix + ".conv1", b.first);
  collect(out, prefix + ".conv2", b.second);
  if (b.shortcut) collect(out, prefix + ".shortcut", *b.shortcut);
}

template <typename T>
void collect_buffers(std::vector<NamedBuffer<T>>& out, const std::string& prefix, ConvBN<T>& c) {
  out.push_back({prefix + ".bn.running_mean", &c.bn.running_mean});
  out.push_back({prefix + ".bn.running_var", &c.bn.running_var});
}

template <typename T>
void collect_buffers(std::vector<NamedBuffer<T>>& out, const std::string& prefix, ConvBlock<T>& b) {
  collect_buffers(out, prefix + ".conv1", b.first);
  collect_buffers(out, prefix + ".conv2", b.second);
  if (b.shortcut) collect_buffers(out, prefix + ".shortcut", *b.shortcut);
}

template <typename T, typename Fn>
void for_each_bn(ConvBlock<T>& b, Fn&& fn) {
  fn(b.first.bn);
  fn(b.second.bn);
  if (b.shortcut) fn(b.shortcut->bn);
}

}  // namespace

template <typename T>
Tensor<T> squeeze_excite(const Tensor<T>& x, const SqueezeExcite<T>& se) {
  auto s = tensor::global_avg_pool(x);
  s = tensor::relu(tensor::linear(s, se.fc1_weight, se.fc1_bias));
  s = tensor::sigmoid(tensor::linear(s, se.fc2_weight, se.fc2_bias));
  return tensor::scale_channels(x, s);
}

template <typename T>
Model<T>::Model(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
  spec_.validate();
  std::mt19937_64 rng(seed);
  const bool res_enc = spec_.residual_encoder();
  std::size_t in = spec_.input_channels;
  for (std::size_t s = 0; s < spec_.depth; ++s) {
    const std::size_t out = spec_.base_filters << s;
    encoder_.push_back(make_block<T>(rng, in, out, res_enc));
    in = out;
  }
  bottleneck_ = make_block<T>(rng, in, spec_.bottleneck_filters, res_enc);

  decoder_.resize(spec_.depth);
  for (std::size_t s = spec_.depth; s-- > 0;) {
    const std::size_t c = spec_.base_filters << s;
    const std::size_t below = s + 1 == spec_.depth ? spec_.bottleneck_filters : c * 2;
    DecoderStage<T>& d = decoder_[s];
    d.up_weight = he_uniform<T>(rng, {below, c, 2, 2}, c * 4);
    d.up_bias = constant<T>({c}, T{0});
    d.block = make_block<T>(rng, 2 * c, c, false);
    if (spec_.attention_decoder()) {
      const std::size_t r = c / spec_.se_reduction;
      SqueezeExcite<T> se;
      se.fc1_weight = he_uniform<T>(rng, {r, c}, c);
      se.fc1_bias = constant<T>({r}, T{0});
      se.fc2_weight = he_uniform<T>(rng, {c, r}, r);
      se.fc2_bias = constant<T>({c}, T{0});
      d.se = std::move(se);
    }
  }
  head_weight_ = he_uniform<T>(rng, {spec_.output_channels, spec_.base_filters, 1, 1},
                               spec_.base_filters);
  head_bias_ = constant<T>({spec_.output_channels}, T{0});
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& image, Mode mode) {
  if (!image.defined() || image.rank() != 4)
    throw DomainError("model input must be [N, C, H, W]");
  if (image.dim(1) != spec_.input_channels)
    throw DomainError("model expects " + std::to_string(spec_.input_channels) +
                      " input channel(s), got " + std::to_string(image.dim(1)));
  const std::size_t mult = spec_.size_multiple();
  if (image.dim(2) % mult != 0 || image.dim(3) % mult != 0)
    throw DomainError("input height and width must be divisible by " + std::to_string(mult) +
                      ", got " + std::to_string(image.dim(2)) + "x" +
                      std::to_string(image.dim(3)));

  std::vector<Tensor<T>> skips;
  Tensor<T> h = image;
  for (auto& block : encoder_) {
    h = block_forward(h, block, mode);
    skips.push_back(h);
    h = tensor::maxpool2d(h);
  }
  h = block_forward(h, bottleneck_, mode);
  for (std::size_t s = spec_.depth; s-- > 0;) {
    DecoderStage<T>& d = decoder_[s];
    h = tensor::conv_transpose2d(h, d.up_weight, d.up_bias);
    h = tensor::concat_channels(skips[s], h);
    h = block_forward(h, d.block, mode);
    if (d.se) h = squeeze_excite(h, *d.se);
  }
  return tensor::conv2d(h, head_weight_, head_bias_, 1, 0);
}

template <typename T>
std::vector<NamedTensor<T>> Model<T>::parameters() const {
  std::vector<NamedTensor<T>> out;
  for (std::size_t s = 0; s < encoder_.size(); ++s)
    collect(out, "enc" + std::to_string(s), encoder_[s]);
  collect(out, "bottleneck", bottleneck_);
  for (std::size_t s = decoder_.size(); s-- > 0;) {
    const auto& d = decoder_[s];
    const std::string p = "dec" + std::to_string(s);
    out.push_back({p + ".up.weight", d.up_weight});
    out.push_back({p + ".up.bias", d.up_bias});
    collect(out, p + ".block", d.block);
    if (d.se) {
      out.push_back({p + ".se.fc1.weight", d.se->fc1_weight});
      out.push_back({p + ".se.fc1.bias", d.se->fc1_bias});
      out.push_back({p + ".se.fc2.weight", d.se->fc2_weight});
      out.push_back({p + ".se.fc2.bias", d.se->fc2_bias});
    }
  }
  out.push_back({"head.weight", head_weight_});
  out.push_back({"head.bias", head_bias_});
  return out;
}

template <typename T>
std::vector<Tensor<T>> Model<T>::parameter_tensors() const {
  std::vector<Tensor<T>> out;
  for (auto& p : parameters()) out.push_back(p.tensor);
  return out;
}

template <typename T>
std::vector<NamedBuffer<T>> Model<T>::buffers() {
  std::vector<NamedBuffer<T>> out;
  for (std::size_t s = 0; s < encoder_.size(); ++s)
    collect_buffers(out, "enc" + std::to_string(s), encoder_[s]);
  collect_buffers(out, "bottleneck", bottleneck_);
  for (std::size_t s = decoder_.size(); s-- > 0;)
    collect_buffers(out, "dec" + std::to_string(s) + ".block", decoder_[s].block);
  return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

template <typename T>
template <typename Fn>
void Model<T>::visit_blocks(Fn&& fn) const {
  auto& self = const_cast<Model<T>&>(*this);
  for (auto& b : self.encoder_) fn(b);
  fn(self.bottleneck_);
  for (auto& d : self.decoder_) fn(d.block);
}

template <typename T>
bool Model<T>::running_stats_ready() const {
  bool ready = true;
  visit_blocks([&](ConvBlock<T>& b) {
    for_each_bn(b, [&](tensor::BatchNormState<T>& bn) { ready = ready && bn.initialized; });
  });
  return ready;
}

template <typename T>
void Model<T>::mark_running_stats_ready() {
  visit_blocks([](ConvBlock<T>& b) {
    for_each_bn(b, [](tensor::BatchNormState<T>& bn) { bn.initialized = true; });
  });
}

template <typename T>
std::vector<SqueezeExcite<T>*> Model<T>::attention_layers() {
  std::vector<SqueezeExcite<T>*> out;
  for (auto& d : decoder_)
    if (d.se) out.push_back(&*d.se);
  return out;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

template Tensor<float> squeeze_excite<float>(const Tensor<float>&, const SqueezeExcite<float>&);
template Tensor<double> squeeze_excite<double>(const Tensor<double>&,
                                               const SqueezeExcite<double>&);
template class Model<float>;
template class Model<double>;

}  // namespace mtcurv::model
