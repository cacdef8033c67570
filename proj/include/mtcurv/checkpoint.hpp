#pragma once

// MTCK checkpoint files, all little-endian:
//
//   "MTCK" | u32 version | str spec_json
//   u32 n_params  { str name | u32 rank | u64 dims[rank] | f32 values }
//   u32 n_buffers { str name | u64 count | f32 values }
//   u8 stats_ready
//   u8 has_adam   [ u64 step | f64 lr b1 b2 eps | u32 n { u64 count | f32 m | f32 v } ]
//   str config_echo
//
// str is a u32 byte length followed by UTF-8 bytes.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mtcurv/adam.hpp"
#include "mtcurv/model.hpp"

namespace mtcurv::checkpoint {

inline constexpr std::uint32_t kVersion = 1;

std::vector<std::uint8_t> serialize(model::Model<float>& model,
                                    const tensor::AdamState<float>* adam,
                                    const std::string& config_echo);

struct Loaded {
  model::Model<float> model;
  std::optional<tensor::AdamState<float>> adam;
  std::string config_echo;
};

/// Validates magic, version, names, shapes and sizes; DataError carries the
/// byte offset of the first problem. With `expected`, a checkpoint of another
/// architecture raises DomainError.
Loaded deserialize(std::span<const std::uint8_t> bytes, const std::string& source,
                   std::optional<model::Arch> expected = std::nullopt);

void save(const std::filesystem::path& path, model::Model<float>& model,
          const tensor::AdamState<float>* adam = nullptr, const std::string& config_echo = "{}");
Loaded load(const std::filesystem::path& path, std::optional<model::Arch> expected = std::nullopt);

}  // namespace mtcurv::checkpoint
