#include "mtcurv/config.hpp"

#include <cmath>
#include <initializer_list>
#include <limits>
#include <string_view>

#include "mtcurv/io.hpp"

namespace mtcurv::config {

namespace {

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const char* where) {
  if (!j.is_object()) throw DomainError(std::string(where) + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == key;
    if (!ok) throw DomainError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const char* where) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw DomainError(std::string(where) + "." + key + " has the wrong type");
  }
}

// Lengths may be "inf" (e.g. a perfectly stiff filament).
void read_length(const json& j, const char* key, double& out, const char* where) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  if (it->is_string() && it->get<std::string>() == "inf") {
    out = std::numeric_limits<double>::infinity();
    return;
  }
  read(j, key, out, where);
}

json length_json(double v) { return std::isinf(v) ? json("inf") : json(v); }

template <typename T>
void read_pair(const json& j, const char* key, T& lo, T& hi, const char* where) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  if (!it->is_array() || it->size() != 2)
    throw DomainError(std::string(where) + "." + key + " must be a two-element array");
  try {
    lo = (*it)[0].get<T>();
    hi = (*it)[1].get<T>();
  } catch (const json::exception&) {
    throw DomainError(std::string(where) + "." + key + " has the wrong element type");
  }
}

}  // namespace

json to_json(const synthsim::GenConfig& c) {
  return {{"variant", synthsim::variant_name(c.variant)},
          {"image_size", {c.height, c.width}},
          {"aster_count", c.aster_count},
          {"filaments_per_aster", {c.filaments_min, c.filaments_max}},
          {"step_length", c.step_length},
          {"persistence_length", length_json(c.persistence_length)},
          {"filament_length", {c.length_min, c.length_max}},
          {"kappa_max", c.kappa_max},
          {"psf_sigma", c.psf_sigma},
          {"tip_decay_lambda", c.tip_decay_lambda},
          {"background_level", c.background_level},
          {"photon_scale", c.photon_scale},
          {"read_noise_sigma", c.read_noise_sigma},
          {"pixel_size_um", c.pixel_size_um},
          {"seed", c.seed}};
}

synthsim::GenConfig gen_config_from_json(const json& j, synthsim::GenConfig c) {
  constexpr const char* where = "gen";
  check_keys(j,
             {"variant", "image_size", "aster_count", "filaments_per_aster", "step_length",
              "persistence_length", "filament_length", "kappa_max", "psf_sigma",
              "tip_decay_lambda", "background_level", "photon_scale", "read_noise_sigma",
              "pixel_size_um", "seed"},
             where);
  if (j.contains("variant")) {
    std::string v;
    read(j, "variant", v, where);
    c.set_variant(synthsim::parse_variant(v));
  }
  read_pair(j, "image_size", c.height, c.width, where);
  read(j, "aster_count", c.aster_count, where);
  read_pair(j, "filaments_per_aster", c.filaments_min, c.filaments_max, where);
  read(j, "step_length", c.step_length, where);
  read_length(j, "persistence_length", c.persistence_length, where);
  read_pair(j, "filament_length", c.length_min, c.length_max, where);
  read(j, "kappa_max", c.kappa_max, where);
  read(j, "psf_sigma", c.psf_sigma, where);
  read_length(j, "tip_decay_lambda", c.tip_decay_lambda, where);
  read(j, "background_level", c.background_level, where);
  read(j, "photon_scale", c.photon_scale, where);
  read(j, "read_noise_sigma", c.read_noise_sigma, where);
  read(j, "pixel_size_um", c.pixel_size_um, where);
  read(j, "seed", c.seed, where);
  c.validate();
  return c;
}

json to_json(const model::ModelSpec& s) {
  return {{"arch", model::arch_name(s.arch)},
          {"base_filters", s.base_filters},
          {"depth", s.depth},
          {"bottleneck_filters", s.bottleneck_filters},
          {"se_reduction", s.se_reduction},
          {"input_channels", s.input_channels},
          {"output_channels", s.output_channels}};
}

model::ModelSpec model_spec_from_json(const json& j, model::ModelSpec s) {
  constexpr const char* where = "model";
  check_keys(j,
             {"arch", "base_filters", "depth", "bottleneck_filters", "se_reduction",
              "input_channels", "output_channels"},
             where);
  if (j.contains("arch")) {
    std::string a;
    read(j, "arch", a, where);
    s.arch = model::parse_arch(a);
  }
  const bool explicit_bottleneck = j.contains("bottleneck_filters");
  read(j, "base_filters", s.base_filters, where);
  read(j, "depth", s.depth, where);
  if (!explicit_bottleneck) s.bottleneck_filters = s.base_filters << s.depth;
  read(j, "bottleneck_filters", s.bottleneck_filters, where);
  read(j, "se_reduction", s.se_reduction, where);
  read(j, "input_channels", s.input_channels, where);
  read(j, "output_channels", s.output_channels, where);
  s.validate();
  return s;
}

json to_json(const losses::LossSpec& s) {
  json terms = json::array();
  for (const auto& t : s.terms) terms.push_back({{"kind", losses::term_name(t.kind)}, {"weight", t.weight}});
  return {{"preset", s.name()}, {"terms", terms}, {"huber_delta", s.huber_delta}};
}

losses::LossSpec loss_spec_from_json(const json& j) {
  if (j.is_string()) return losses::LossSpec::preset(j.get<std::string>());
  constexpr const char* where = "loss";
  check_keys(j, {"preset", "terms", "huber_delta"}, where);
  losses::LossSpec s;
  if (j.contains("preset")) s = losses::LossSpec::preset(j.at("preset").get<std::string>());
  if (j.contains("terms")) {
    if (!j.at("terms").is_array()) throw DomainError("loss.terms must be an array");
    s.terms.clear();
    for (const auto& t : j.at("terms")) {
      check_keys(t, {"kind", "weight"}, "loss.terms[]");
      losses::LossTerm term;
      std::string kind;
      read(t, "kind", kind, "loss.terms[]");
      term.kind = losses::parse_term(kind);
      read(t, "weight", term.weight, "loss.terms[]");
      s.terms.push_back(term);
    }
  }
  read(j, "huber_delta", s.huber_delta, where);
  s.validate();
  return s;
}

json to_json(const pipeline::TrainConfig& c) {
  return {{"lr", c.lr},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"batch_size", c.batch_size},
          {"augment", c.augment},
          {"split_ratios", {c.train_ratio, c.val_ratio, c.test_ratio}},
          {"split_seed", c.split_seed},
          {"shuffle_seed", c.shuffle_seed},
          {"init_seed", c.init_seed}};
}

pipeline::TrainConfig train_config_from_json(const json& j, pipeline::TrainConfig c) {
  constexpr const char* where = "train";
  check_keys(j,
             {"lr", "max_epochs", "patience", "batch_size", "augment", "split_ratios", "split_seed",
              "shuffle_seed", "init_seed"},
             where);
  read(j, "lr", c.lr, where);
  read(j, "max_epochs", c.max_epochs, where);
  read(j, "patience", c.patience, where);
  read(j, "batch_size", c.batch_size, where);
  read(j, "augment", c.augment, where);
  if (j.contains("split_ratios")) {
    const auto& r = j.at("split_ratios");
    if (!r.is_array() || r.size() != 3) throw DomainError("train.split_ratios needs 3 numbers");
    c.train_ratio = r[0].get<double>();
    c.val_ratio = r[1].get<double>();
    c.test_ratio = r[2].get<double>();
  }
  read(j, "split_seed", c.split_seed, where);
  read(j, "shuffle_seed", c.shuffle_seed, where);
  read(j, "init_seed", c.init_seed, where);
  c.validate();
  return c;
}

json to_json(const RunConfig& c) {
  return {{"gen", to_json(c.gen)},
          {"model", to_json(c.train.model)},
          {"loss", to_json(c.train.loss)},
          {"train", to_json(c.train)}};
}

RunConfig run_config_from_json(const json& j, RunConfig c) {
  check_keys(j, {"gen", "model", "loss", "train"}, "config");
  if (j.contains("gen")) c.gen = gen_config_from_json(j.at("gen"), c.gen);
  if (j.contains("model")) c.train.model = model_spec_from_json(j.at("model"), c.train.model);
  if (j.contains("loss")) c.train.loss = loss_spec_from_json(j.at("loss"));
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"), c.train);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::exception& e) {
    throw DataError(path.string(), std::string("malformed JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace mtcurv::config
