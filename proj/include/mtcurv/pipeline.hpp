#pragma once

// Splits, augmentation, the training loop with early stopping, k-fold
// cross-validation, evaluation and the architecture ablation sweep.
//
// Every random draw is derived from an explicit seed (split_seed,
// shuffle_seed, init_seed), so a run is a pure function of its dataset and
// TrainConfig.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mtcurv/adam.hpp"
#include "mtcurv/losses.hpp"
#include "mtcurv/metrics.hpp"
#include "mtcurv/model.hpp"
#include "mtcurv/synthsim.hpp"

namespace mtcurv::pipeline {

using synthsim::SamplePair;

struct TrainConfig {
  double lr = 1e-3;
  std::size_t max_epochs = 300;
  std::size_t patience = 50;
  std::size_t batch_size = 2;
  losses::LossSpec loss = losses::LossSpec::preset("mse_grad");
  model::ModelSpec model;
  bool augment = true;
  double train_ratio = 0.8;
  double val_ratio = 0.1;
  double test_ratio = 0.1;
  std::uint64_t split_seed = 0;
  std::uint64_t shuffle_seed = 0;
  std::uint64_t init_seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Early stopping needs a decrease larger than this.
inline constexpr double kMinImprovement = 1e-7;

// ---------------------------------------------------------------------------
// Splits

struct SplitPlan {
  std::vector<std::size_t> train, val, test;
};

/// Seeded permutation; val and test get floor(n * ratio), train the rest.
SplitPlan make_split(std::size_t n, double train_ratio, double val_ratio, double test_ratio,
                     std::uint64_t seed);
inline SplitPlan make_split(std::size_t n, std::uint64_t seed) {
  return make_split(n, 0.8, 0.1, 0.1, seed);
}

/// Partitions `pool` into k folds of near-equal size (larger folds first)
/// after a seeded shuffle.
std::vector<std::vector<std::size_t>> make_folds(std::span<const std::size_t> pool, std::size_t k,
                                                 std::uint64_t seed);

/// Fisher-Yates with rejection-sampled indices, identical on every platform.
void seeded_shuffle(std::vector<std::size_t>& values, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentDraw {
  int quarter_turns = 0;  // counter-clockwise, 0..3
  bool flip_horizontal = false;
  bool flip_vertical = false;
  double intensity = 1.0;  // image only, then clamped to [0, 1]
};

AugmentDraw draw_augment(std::mt19937_64& rng);
/// Rotation needs square inputs (DomainError otherwise).
std::pair<Micrograph, CurvatureMap> apply_augment(const Micrograph& image,
                                                  const CurvatureMap& target,
                                                  const AugmentDraw& draw);
std::pair<Micrograph, CurvatureMap> augment(const Micrograph& image, const CurvatureMap& target,
                                            std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;
  double val_loss = 0;
  std::vector<std::pair<std::string, double>> train_terms;
  std::vector<std::pair<std::string, double>> val_terms;
  bool best = false;
  double seconds = 0;  // wall time, kept out of the deterministic log
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = 0;
  bool early_stopped = false;
};

/// One deterministic JSON line per epoch (no wall time).
std::string epoch_to_json_line(const EpochRecord& record);

struct TrainHooks {
  /// Called after validation, before the early-stopping decision. May adjust
  /// record.val_loss (used by tests to script a validation curve).
  std::function<void(EpochRecord&)> after_validation;
  /// Called once the record is final.
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  model::Model<float> model;  // weights of the best epoch
  tensor::AdamState<float> adam;
  TrainLog log;
};

/// Adam on the composite loss; validation in eval mode after every epoch;
/// stops after `patience` epochs without improvement and restores the best
/// weights. NumericFailure names the epoch and batch of a non-finite loss.
TrainResult train(std::span<const SamplePair> samples, std::span<const std::size_t> train_idx,
                  std::span<const std::size_t> val_idx, const TrainConfig& config,
                  const TrainHooks& hooks = {});

/// Eval-mode loss over a set of samples (mean of per-sample losses).
double validation_loss(model::Model<float>& model, std::span<const SamplePair> samples,
                       std::span<const std::size_t> idx, const losses::LossSpec& loss,
                       std::vector<std::pair<std::string, double>>* terms = nullptr);

// ---------------------------------------------------------------------------
// Evaluation

/// Eval-mode prediction for one image (no clamping).
CurvatureMap predict(model::Model<float>& model, const Micrograph& image);

/// Per-image metric suite plus aggregates. `split_of` labels rows.
metrics::MetricReport evaluate(model::Model<float>& model, std::span<const SamplePair> samples,
                               std::span<const std::size_t> idx,
                               const std::function<std::string(std::size_t)>& split_of = {});

struct FoldResult {
  std::size_t fold = 0;
  std::vector<std::size_t> train_idx, val_idx;
  TrainLog log;
  metrics::MetricReport report;
};

struct CrossValidation {
  std::vector<FoldResult> folds;
  std::vector<std::string> metrics;
  /// Mean and std (n - 1) across folds of each fold's metric mean.
  std::vector<metrics::Aggregate> across_folds;
};

/// k-fold CV over `pool` (the test set must already be excluded). Each fold
/// trains on the other folds, early-stops on and is evaluated on its own
/// held-out fold. Fold f is seeded from (shuffle_seed, f) only.
CrossValidation cross_validate(std::span<const SamplePair> samples,
                               std::span<const std::size_t> pool, const TrainConfig& config,
                               std::size_t k = 5);
FoldResult run_fold(std::span<const SamplePair> samples, std::span<const std::size_t> train_idx,
                    std::span<const std::size_t> val_idx, const TrainConfig& config,
                    std::size_t fold);

inline const std::vector<std::string> kAblationMetrics{"nrmse", "r2",  "pearson",
                                                       "spearman", "evs", "cosine"};

struct AblationEntry {
  model::Arch arch;
  std::optional<metrics::MetricReport> report;  // empty when training failed
  std::string error;
  TrainLog log;
};

struct AblationReport {
  std::vector<AblationEntry> entries;  // unet, noatt, nores, mtcurv
  std::vector<std::string> metrics = kAblationMetrics;
  /// p-value of each arch vs mtcurv, [entry][metric]; empty when undefined.
  std::vector<std::vector<std::optional<double>>> p_vs_mtcurv;
};

/// Trains all four architectures with identical seeds and data order, then
/// evaluates each on the test split. A failing variant is recorded and the
/// sweep continues.
AblationReport ablation_sweep(std::span<const SamplePair> samples, const SplitPlan& split,
                              const TrainConfig& base, const TrainHooks& hooks = {});

std::string ablation_to_json(const AblationReport& report);
std::string ablation_to_csv(const AblationReport& report);
std::string format_ablation_table(const AblationReport& report);

}  // namespace mtcurv::pipeline
