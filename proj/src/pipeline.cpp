#include "mtcurv/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace mtcurv::pipeline {

using model::Model;
using tensor::Tensor;

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw DomainError("lr must be positive and finite");
  if (max_epochs < 1) throw DomainError("max_epochs must be >= 1");
  if (patience < 1 || patience > max_epochs)
    throw DomainError("patience must be in [1, max_epochs] (got " + std::to_string(patience) +
                      " with max_epochs " + std::to_string(max_epochs) + ")");
  if (batch_size < 1) throw DomainError("batch_size must be >= 1");
  if (!(train_ratio > 0.0) || val_ratio < 0.0 || test_ratio < 0.0 ||
      std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9)
    throw DomainError("split ratios must be non-negative, train > 0, and sum to 1");
  loss.validate();
  model.validate();
}

// ---------------------------------------------------------------------------
// Splits

namespace {

std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const std::uint64_t r = rng();
    if (r >= threshold) return r % bound;
  }
}

}  // namespace

void seeded_shuffle(std::vector<std::size_t>& values, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = values.size(); i > 1; --i)
    std::swap(values[i - 1], values[bounded(rng, i)]);
}

SplitPlan make_split(std::size_t n, double train_ratio, double val_ratio, double test_ratio,
                     std::uint64_t seed) {
  if (n < 10) throw DomainError("make_split needs at least 10 samples, got " + std::to_string(n));
  if (!(train_ratio > 0.0) || val_ratio < 0.0 || test_ratio < 0.0 ||
      std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9)
    throw DomainError("split ratios must be non-negative, train > 0, and sum to 1");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  seeded_shuffle(perm, seed);
  const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * test_ratio));
  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * val_ratio));
  SplitPlan plan;
  plan.test.assign(perm.begin(), perm.begin() + n_test);
  plan.val.assign(perm.begin() + n_test, perm.begin() + n_test + n_val);
  plan.train.assign(perm.begin() + n_test + n_val, perm.end());
  std::sort(plan.train.begin(), plan.train.end());
  std::sort(plan.val.begin(), plan.val.end());
  std::sort(plan.test.begin(), plan.test.end());
  return plan;
}

std::vector<std::vector<std::size_t>> make_folds(std::span<const std::size_t> pool, std::size_t k,
                                                 std::uint64_t seed) {
  if (k < 2) throw DomainError("k-fold needs k >= 2");
  if (pool.size() < k)
    throw DomainError("cannot split " + std::to_string(pool.size()) + " samples into " +
                      std::to_string(k) + " non-empty folds");
  std::vector<std::size_t> order(pool.begin(), pool.end());
  seeded_shuffle(order, seed);
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = pool.size() / k + (f < pool.size() % k ? 1 : 0);
    folds[f].assign(order.begin() + pos, order.begin() + pos + size);
    std::sort(folds[f].begin(), folds[f].end());
    pos += size;
  }
  return folds;
}

// ---------------------------------------------------------------------------
// Augmentation

AugmentDraw draw_augment(std::mt19937_64& rng) {
  AugmentDraw d;
  d.quarter_turns = static_cast<int>(bounded(rng, 4));
  d.flip_horizontal = bounded(rng, 2) == 1;
  d.flip_vertical = bounded(rng, 2) == 1;
  d.intensity = 0.8 + 0.4 * static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return d;
}

namespace {

template <typename T>
Field<T> transform(const Field<T>& in, const AugmentDraw& d) {
  Field<T> cur = in;
  for (int q = 0; q < d.quarter_turns; ++q) {
    const std::size_t n = cur.height();
    Field<T> next(n, n);
    // Counter-clockwise: out(i, j) = in(j, n - 1 - i).
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) next(i, j) = cur(j, n - 1 - i);
    cur = std::move(next);
  }
  if (d.flip_horizontal)
    for (std::size_t i = 0; i < cur.height(); ++i)
      std::reverse(cur.values().begin() + i * cur.width(),
                   cur.values().begin() + (i + 1) * cur.width());
  if (d.flip_vertical)
    for (std::size_t i = 0; i < cur.height() / 2; ++i)
      for (std::size_t j = 0; j < cur.width(); ++j) std::swap(cur(i, j), cur(cur.height() - 1 - i, j));
  return cur;
}

}  // namespace

std::pair<Micrograph, CurvatureMap> apply_augment(const Micrograph& image,
                                                  const CurvatureMap& target,
                                                  const AugmentDraw& draw) {
  if (!image.same_shape(target)) throw DomainError("augment: image and target differ in size");
  if (draw.quarter_turns % 4 != 0 && image.height() != image.width())
    throw DomainError("augment: rotation needs square images");
  Micrograph img = transform(image, draw);
  if (draw.intensity != 1.0)
    for (float& v : img.values())
      v = static_cast<float>(std::clamp(static_cast<double>(v) * draw.intensity, 0.0, 1.0));
  return {std::move(img), transform(target, draw)};
}

std::pair<Micrograph, CurvatureMap> augment(const Micrograph& image, const CurvatureMap& target,
                                            std::mt19937_64& rng) {
  if (image.height() != image.width()) throw DomainError("augment: rotation needs square images");
  return apply_augment(image, target, draw_augment(rng));
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct Snapshot {
  std::vector<std::vector<float>> params, buffers;
  bool ready = false;

  void take(Model<float>& m) {
    params.clear();
    buffers.clear();
    for (const auto& p : m.parameters())
      params.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
    for (const auto& b : m.buffers()) buffers.push_back(*b.values);
    ready = m.running_stats_ready();
  }
  void restore(Model<float>& m) const {
    auto ps = m.parameters();
    for (std::size_t i = 0; i < ps.size(); ++i)
      std::copy(params[i].begin(), params[i].end(), ps[i].tensor.values().begin());
    auto bs = m.buffers();
    for (std::size_t i = 0; i < bs.size(); ++i) *bs[i].values = buffers[i];
    if (ready) m.mark_running_stats_ready();
  }
};

Tensor<float> stack(std::span<const Field<float>* const> fields) {
  const std::size_t h = fields[0]->height(), w = fields[0]->width();
  std::vector<float> v;
  v.reserve(fields.size() * h * w);
  for (const auto* f : fields) {
    if (f->height() != h || f->width() != w)
      throw DomainError("batch samples must share one image size");
    v.insert(v.end(), f->values().begin(), f->values().end());
  }
  return Tensor<float>({fields.size(), 1, h, w}, std::move(v));
}

void add_terms(std::vector<std::pair<std::string, double>>& acc,
               const std::vector<std::pair<std::string, double>>& terms, double weight) {
  if (acc.empty())
    for (const auto& [name, v] : terms) acc.emplace_back(name, 0.0);
  for (std::size_t i = 0; i < terms.size(); ++i) acc[i].second += weight * terms[i].second;
}

void require_indices(std::span<const SamplePair> samples, std::span<const std::size_t> idx,
                     const char* what) {
  for (std::size_t i : idx)
    if (i >= samples.size())
      throw DomainError(std::string(what) + " index " + std::to_string(i) + " out of range");
}

}  // namespace

double validation_loss(Model<float>& model, std::span<const SamplePair> samples,
                       std::span<const std::size_t> idx, const losses::LossSpec& loss,
                       std::vector<std::pair<std::string, double>>* terms) {
  if (idx.empty()) throw DomainError("validation set is empty");
  require_indices(samples, idx, "validation");
  tensor::NoGradGuard guard;
  double total = 0.0;
  std::vector<std::pair<std::string, double>> acc;
  for (std::size_t i : idx) {
    const Field<float>* img[] = {&samples[i].image};
    const Field<float>* tgt[] = {&samples[i].target};
    auto pred = model.forward(stack(img), tensor::Mode::Eval);
    const auto l = losses::composite_loss(loss, pred, stack(tgt));
    total += static_cast<double>(l.total.item());
    add_terms(acc, l.components, 1.0);
  }
  const double n = static_cast<double>(idx.size());
  for (auto& t : acc) t.second /= n;
  if (terms) *terms = std::move(acc);
  return total / n;
}

std::string epoch_to_json_line(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["train_loss"] = r.train_loss;
  j["val_loss"] = r.val_loss;
  nlohmann::ordered_json tt = nlohmann::ordered_json::object(), vt = tt;
  for (const auto& [k, v] : r.train_terms) tt[k] = v;
  for (const auto& [k, v] : r.val_terms) vt[k] = v;
  j["train_terms"] = tt;
  j["val_terms"] = vt;
  j["best"] = r.best;
  return j.dump();
}

TrainResult train(std::span<const SamplePair> samples, std::span<const std::size_t> train_idx,
                  std::span<const std::size_t> val_idx, const TrainConfig& config,
                  const TrainHooks& hooks) {
  config.validate();
  if (train_idx.empty()) throw DomainError("training set is empty");
  if (val_idx.empty()) throw DomainError("validation set is empty");
  require_indices(samples, train_idx, "train");
  require_indices(samples, val_idx, "validation");

  TrainResult res{Model<float>(config.model, config.init_seed), {}, {}};
  res.adam.lr = config.lr;
  auto params = res.model.parameter_tensors();
  Snapshot best;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(train_idx.begin(), train_idx.end());
    seeded_shuffle(order, config.shuffle_seed + epoch);
    std::mt19937_64 aug_rng(synthsim::derive_seed(config.shuffle_seed + epoch, 0xa5a5));

    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_no) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<Micrograph> imgs;
      std::vector<CurvatureMap> tgts;
      for (std::size_t b = start; b < end; ++b) {
        const SamplePair& s = samples[order[b]];
        if (config.augment) {
          auto [img, tgt] = augment(s.image, s.target, aug_rng);
          imgs.push_back(std::move(img));
          tgts.push_back(std::move(tgt));
        } else {
          imgs.push_back(s.image);
          tgts.push_back(s.target);
        }
      }
      std::vector<const Field<float>*> ip, tp;
      for (std::size_t b = 0; b < imgs.size(); ++b) {
        ip.push_back(&imgs[b]);
        tp.push_back(&tgts[b]);
      }
      const std::string where =
          "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_no + 1);
      res.model.zero_grad();
      losses::CompositeLoss<float> l;
      double value = 0;
      try {
        auto pred = res.model.forward(stack(ip), tensor::Mode::Train);
        l = losses::composite_loss(config.loss, pred, stack(tp));
        value = l.total.item();
        if (!std::isfinite(value)) throw NumericFailure("non-finite training loss");
        tensor::backward(l.total);
        tensor::adam_step<float>(params, res.adam);
      } catch (const NumericFailure& e) {
        throw NumericFailure(std::string(e.what()) + " at " + where);
      }
      const double w = static_cast<double>(end - start);
      loss_sum += w * value;
      add_terms(rec.train_terms, l.components, w);
    }
    const double n = static_cast<double>(order.size());
    rec.train_loss = loss_sum / n;
    for (auto& t : rec.train_terms) t.second /= n;
    rec.val_loss = validation_loss(res.model, samples, val_idx, config.loss, &rec.val_terms);
    if (!std::isfinite(rec.val_loss))
      throw NumericFailure("non-finite validation loss at epoch " + std::to_string(epoch));
    if (hooks.after_validation) hooks.after_validation(rec);

    if (epoch == 1 || rec.val_loss < res.log.best_val_loss - kMinImprovement) {
      rec.best = true;
      res.log.best_epoch = epoch;
      res.log.best_val_loss = rec.val_loss;
      best.take(res.model);
      since_best = 0;
    } else {
      ++since_best;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.log.epochs.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
    if (since_best >= config.patience) {
      res.log.early_stopped = epoch < config.max_epochs;
      break;
    }
  }
  best.restore(res.model);
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation

CurvatureMap predict(Model<float>& model, const Micrograph& image) {
  tensor::NoGradGuard guard;
  const Field<float>* img[] = {&image};
  auto out = model.forward(stack(img), tensor::Mode::Eval);
  std::vector<float> v(out.values().begin(), out.values().end());
  return CurvatureMap(image.height(), image.width(), std::move(v));
}

metrics::MetricReport evaluate(Model<float>& model, std::span<const SamplePair> samples,
                               std::span<const std::size_t> idx,
                               const std::function<std::string(std::size_t)>& split_of) {
  if (idx.empty()) throw DomainError("evaluation set is empty");
  require_indices(samples, idx, "evaluation");
  std::vector<std::string> names;
  for (const auto& m : metrics::metric_catalog()) names.push_back(m.name);
  std::vector<metrics::ImageRow> rows;
  for (std::size_t i : idx) {
    const auto pred = predict(model, samples[i].image);
    const auto truth = ScalarField::convert(samples[i].target);
    char id[32];
    std::snprintf(id, sizeof id, "%05zu", i);
    rows.push_back({id, split_of ? split_of(i) : std::string{},
                    metrics::evaluate_pair(truth, ScalarField::convert(pred))});
  }
  return metrics::aggregate_report(std::move(names), std::move(rows));
}

FoldResult run_fold(std::span<const SamplePair> samples, std::span<const std::size_t> train_idx,
                    std::span<const std::size_t> val_idx, const TrainConfig& config,
                    std::size_t fold) {
  TrainConfig cfg = config;
  cfg.shuffle_seed = synthsim::derive_seed(config.shuffle_seed, 1000 + fold);
  auto res = train(samples, train_idx, val_idx, cfg);
  FoldResult out;
  out.fold = fold;
  out.train_idx.assign(train_idx.begin(), train_idx.end());
  out.val_idx.assign(val_idx.begin(), val_idx.end());
  out.log = res.log;
  out.report = evaluate(res.model, samples, val_idx, [](std::size_t) { return "val"; });
  return out;
}

CrossValidation cross_validate(std::span<const SamplePair> samples,
                               std::span<const std::size_t> pool, const TrainConfig& config,
                               std::size_t k) {
  const auto folds = make_folds(pool, k, config.split_seed);
  CrossValidation cv;
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<std::size_t> train_idx;
    for (std::size_t g = 0; g < k; ++g)
      if (g != f) train_idx.insert(train_idx.end(), folds[g].begin(), folds[g].end());
    std::sort(train_idx.begin(), train_idx.end());
    cv.folds.push_back(run_fold(samples, train_idx, folds[f], config, f));
  }
  cv.metrics = cv.folds.front().report.metrics;
  std::vector<metrics::ImageRow> rows;
  for (const auto& f : cv.folds) {
    metrics::ImageRow row{"fold" + std::to_string(f.fold), "cv", {}};
    for (const auto& a : f.report.aggregates) row.values.push_back(a.count ? metrics::Value{a.mean} : std::nullopt);
    rows.push_back(std::move(row));
  }
  cv.across_folds = metrics::aggregate_report(cv.metrics, std::move(rows)).aggregates;
  return cv;
}

// ---------------------------------------------------------------------------
// Ablation

AblationReport ablation_sweep(std::span<const SamplePair> samples, const SplitPlan& split,
                              const TrainConfig& base, const TrainHooks& hooks) {
  AblationReport rep;
  for (model::Arch arch : model::kAllArchs) {
    AblationEntry e{arch, std::nullopt, {}, {}};
    try {
      TrainConfig cfg = base;
      cfg.model.arch = arch;
      auto res = train(samples, split.train, split.val, cfg, hooks);
      e.log = res.log;
      e.report = evaluate(res.model, samples, split.test, [](std::size_t) { return "test"; });
    } catch (const std::exception& ex) {
      e.error = ex.what();
    }
    rep.entries.push_back(std::move(e));
  }
  const AblationEntry& ref = rep.entries.back();
  for (const auto& e : rep.entries) {
    std::vector<std::optional<double>> ps;
    for (const auto& m : rep.metrics) {
      std::optional<double> p;
      if (e.report && ref.report) {
        const auto ca = e.report->column(m), cb = ref.report->column(m);
        const auto va = e.report->defined_values(*ca), vb = ref.report->defined_values(*cb);
        if (&e == &ref) {
          p = 1.0;
        } else if (va.size() >= 2 && vb.size() >= 2) {
          try {
            p = metrics::welch_ttest(va, vb).p;
          } catch (const DomainError&) {
          }
        }
      }
      ps.push_back(p);
    }
    rep.p_vs_mtcurv.push_back(std::move(ps));
  }
  return rep;
}

std::string ablation_to_json(const AblationReport& rep) {
  nlohmann::ordered_json j;
  j["metrics"] = rep.metrics;
  j["reference"] = "mtcurv";
  auto archs = nlohmann::ordered_json::array();
  for (std::size_t a = 0; a < rep.entries.size(); ++a) {
    const auto& e = rep.entries[a];
    nlohmann::ordered_json row;
    row["arch"] = model::arch_name(e.arch);
    row["error"] = e.error.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(e.error);
    row["best_epoch"] = e.log.best_epoch;
    auto cells = nlohmann::ordered_json::object();
    for (std::size_t m = 0; m < rep.metrics.size(); ++m) {
      nlohmann::ordered_json c;
      if (e.report) {
        const auto& agg = e.report->aggregates[*e.report->column(rep.metrics[m])];
        c["mean"] = agg.count ? nlohmann::ordered_json(agg.mean) : nlohmann::ordered_json(nullptr);
        c["std"] = agg.count ? nlohmann::ordered_json(agg.std) : nlohmann::ordered_json(nullptr);
        c["count"] = agg.count;
      }
      const auto& p = rep.p_vs_mtcurv[a][m];
      c["p_vs_mtcurv"] = p ? nlohmann::ordered_json(*p) : nlohmann::ordered_json(nullptr);
      cells[rep.metrics[m]] = c;
    }
    row["metrics"] = cells;
    archs.push_back(row);
  }
  j["architectures"] = archs;
  return j.dump(2) + "\n";
}

std::string ablation_to_csv(const AblationReport& rep) {
  std::ostringstream out;
  out << "arch,metric,mean,std,count,p_vs_mtcurv\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (std::size_t a = 0; a < rep.entries.size(); ++a) {
    const auto& e = rep.entries[a];
    for (std::size_t m = 0; m < rep.metrics.size(); ++m) {
      out << model::arch_name(e.arch) << ',' << rep.metrics[m] << ',';
      if (e.report) {
        const auto& agg = e.report->aggregates[*e.report->column(rep.metrics[m])];
        if (agg.count) out << num(agg.mean) << ',' << num(agg.std);
        else out << ',';
        out << ',' << agg.count;
      } else {
        out << ",,0";
      }
      out << ',';
      if (rep.p_vs_mtcurv[a][m]) out << num(*rep.p_vs_mtcurv[a][m]);
      out << '\n';
    }
  }
  return out.str();
}

std::string format_ablation_table(const AblationReport& rep) {
  std::ostringstream out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-10s", "metric");
  out << buf;
  for (const auto& e : rep.entries) {
    std::snprintf(buf, sizeof buf, " | %-32s", std::string(model::arch_name(e.arch)).c_str());
    out << buf;
  }
  out << '\n';
  for (std::size_t m = 0; m < rep.metrics.size(); ++m) {
    std::snprintf(buf, sizeof buf, "%-10s", rep.metrics[m].c_str());
    out << buf;
    for (std::size_t a = 0; a < rep.entries.size(); ++a) {
      const auto& e = rep.entries[a];
      std::string cell = "failed";
      if (e.report) {
        const auto& agg = e.report->aggregates[*e.report->column(rep.metrics[m])];
        const auto& p = rep.p_vs_mtcurv[a][m];
        char c[96];
        if (agg.count == 0) std::snprintf(c, sizeof c, "undefined");
        else if (p) std::snprintf(c, sizeof c, "%.4f ± %.4f (p=%.2g)", agg.mean, agg.std, *p);
        else std::snprintf(c, sizeof c, "%.4f ± %.4f (p=n/a)", agg.mean, agg.std);
        cell = c;
      }
      std::snprintf(buf, sizeof buf, " | %-32s", cell.c_str());
      out << buf;
    }
    out << '\n';
  }
  for (const auto& e : rep.entries)
    if (!e.error.empty()) out << "error (" << model::arch_name(e.arch) << "): " << e.error << '\n';
  return out.str();
}

}  // namespace mtcurv::pipeline
