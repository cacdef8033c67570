#pragma once

// JSON forms of the configuration structs. Readers start from a base value,
// override the keys present and reject unknown keys with DomainError.
//
//   {
//     "gen":   { "variant": "simple", "image_size": [256, 256], ... },
//     "model": { "arch": "mtcurv", "base_filters": 32, ... },
//     "loss":  "mse_grad"  or  { "terms": [{"kind": "mse", "weight": 1}], "huber_delta": 0.1 },
//     "train": { "lr": 0.001, "max_epochs": 300, ... }
//   }

#include <filesystem>
#include <string>

#include "json.hpp"
#include "mtcurv/losses.hpp"
#include "mtcurv/model.hpp"
#include "mtcurv/pipeline.hpp"
#include "mtcurv/synthsim.hpp"

namespace mtcurv::config {

using json = nlohmann::json;

json to_json(const synthsim::GenConfig& c);
synthsim::GenConfig gen_config_from_json(const json& j, synthsim::GenConfig base = {});

json to_json(const model::ModelSpec& s);
model::ModelSpec model_spec_from_json(const json& j, model::ModelSpec base = {});

json to_json(const losses::LossSpec& s);
losses::LossSpec loss_spec_from_json(const json& j);

/// Training knobs only; model and loss live in their own sections.
json to_json(const pipeline::TrainConfig& c);
pipeline::TrainConfig train_config_from_json(const json& j, pipeline::TrainConfig base = {});

struct RunConfig {
  synthsim::GenConfig gen;
  pipeline::TrainConfig train;
  bool operator==(const RunConfig&) const = default;
};

json to_json(const RunConfig& c);
RunConfig run_config_from_json(const json& j, RunConfig base = {});
/// DataError for unreadable or malformed files, DomainError for bad values.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace mtcurv::config
