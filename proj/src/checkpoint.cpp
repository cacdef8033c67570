#include "mtcurv/checkpoint.hpp"

#include "mtcurv/config.hpp"
#include "mtcurv/io.hpp"

namespace mtcurv::checkpoint {

using io::ByteReader;
using io::ByteWriter;

std::vector<std::uint8_t> serialize(model::Model<float>& model,
                                    const tensor::AdamState<float>* adam,
                                    const std::string& config_echo) {
  ByteWriter w;
  w.raw("MTCK");
  w.u32(kVersion);
  w.str(config::to_json(model.spec()).dump());
  const auto params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t d : p.tensor.shape()) w.u64(d);
    for (float v : p.tensor.values()) w.f32(v);
  }
  const auto buffers = model.buffers();
  w.u32(static_cast<std::uint32_t>(buffers.size()));
  for (const auto& b : buffers) {
    w.str(b.name);
    w.u64(b.values->size());
    for (float v : *b.values) w.f32(v);
  }
  w.u8(model.running_stats_ready() ? 1 : 0);
  w.u8(adam ? 1 : 0);
  if (adam) {
    w.u64(adam->step);
    w.f64(adam->lr);
    w.f64(adam->beta1);
    w.f64(adam->beta2);
    w.f64(adam->eps);
    w.u32(static_cast<std::uint32_t>(adam->first_moment.size()));
    for (std::size_t i = 0; i < adam->first_moment.size(); ++i) {
      w.u64(adam->first_moment[i].size());
      for (float v : adam->first_moment[i]) w.f32(v);
      for (float v : adam->second_moment[i]) w.f32(v);
    }
  }
  w.str(config_echo);
  return std::move(w.bytes());
}

Loaded deserialize(std::span<const std::uint8_t> bytes, const std::string& source,
                   std::optional<model::Arch> expected) {
  ByteReader r(bytes, source);
  if (bytes.size() < 4 || r.raw(4) != "MTCK") throw DataError(source, 0, "bad magic (expected MTCK)");
  if (const auto v = r.u32(); v != kVersion)
    throw DataError(source, 4, "unsupported checkpoint version " + std::to_string(v));
  const std::size_t spec_at = r.offset();
  model::ModelSpec spec;
  try {
    spec = config::model_spec_from_json(nlohmann::json::parse(r.str()));
    spec.validate();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(source, spec_at, std::string("bad model spec: ") + e.what());
  } catch (const DomainError& e) {
    throw DataError(source, spec_at, std::string("bad model spec: ") + e.what());
  }
  if (expected && *expected != spec.arch)
    throw DomainError("checkpoint " + source + " holds arch '" +
                      std::string(model::arch_name(spec.arch)) + "', expected '" +
                      std::string(model::arch_name(*expected)) + "'");

  Loaded out{model::Model<float>(spec, 0), std::nullopt, {}};
  auto params = out.model.parameters();
  const std::size_t count_at = r.offset();
  if (const auto n = r.u32(); n != params.size())
    throw DataError(source, count_at, "checkpoint has " + std::to_string(n) +
                                          " parameter tensors, model expects " +
                                          std::to_string(params.size()));
  for (auto& p : params) {
    const std::size_t at = r.offset();
    if (const auto name = r.str(); name != p.name)
      throw DataError(source, at, "expected tensor '" + p.name + "', found '" + name + "'");
    const std::size_t shape_at = r.offset();
    tensor::Shape shape(r.u32());
    if (shape.size() > 8) throw DataError(source, shape_at, "implausible tensor rank");
    for (auto& d : shape) d = r.u64();
    if (shape != p.tensor.shape())
      throw DataError(source, shape_at, "tensor '" + p.name + "' has shape " +
                                            tensor::to_string(shape) + ", expected " +
                                            tensor::to_string(p.tensor.shape()));
    for (float& v : p.tensor.values()) v = r.f32();
  }
  auto buffers = out.model.buffers();
  const std::size_t buf_at = r.offset();
  if (const auto n = r.u32(); n != buffers.size())
    throw DataError(source, buf_at, "checkpoint has " + std::to_string(n) +
                                        " buffers, model expects " + std::to_string(buffers.size()));
  for (auto& b : buffers) {
    const std::size_t at = r.offset();
    if (const auto name = r.str(); name != b.name)
      throw DataError(source, at, "expected buffer '" + b.name + "', found '" + name + "'");
    const std::size_t n_at = r.offset();
    if (r.u64() != b.values->size())
      throw DataError(source, n_at, "buffer '" + b.name + "' has the wrong length");
    for (float& v : *b.values) v = r.f32();
  }
  if (r.u8() != 0) out.model.mark_running_stats_ready();
  if (r.u8() != 0) {
    tensor::AdamState<float> adam;
    adam.step = r.u64();
    adam.lr = r.f64();
    adam.beta1 = r.f64();
    adam.beta2 = r.f64();
    adam.eps = r.f64();
    const std::size_t n_at = r.offset();
    const std::uint32_t n = r.u32();
    if (n != 0 && n != params.size())
      throw DataError(source, n_at, "optimizer state does not match the parameter list");
    adam.first_moment.resize(n);
    adam.second_moment.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      const std::size_t at = r.offset();
      const std::uint64_t count = r.u64();
      if (count != params[i].tensor.numel())
        throw DataError(source, at, "optimizer moment size mismatch for '" + params[i].name + "'");
      adam.first_moment[i].resize(count);
      adam.second_moment[i].resize(count);
      for (float& v : adam.first_moment[i]) v = r.f32();
      for (float& v : adam.second_moment[i]) v = r.f32();
    }
    out.adam = std::move(adam);
  }
  out.config_echo = r.str();
  if (r.remaining() != 0) r.fail("trailing bytes after checkpoint");
  return out;
}

void save(const std::filesystem::path& path, model::Model<float>& model,
          const tensor::AdamState<float>* adam, const std::string& config_echo) {
  io::write_bytes(path, serialize(model, adam, config_echo));
}

Loaded load(const std::filesystem::path& path, std::optional<model::Arch> expected) {
  return deserialize(io::read_bytes(path), path.string(), expected);
}

}  // namespace mtcurv::checkpoint
