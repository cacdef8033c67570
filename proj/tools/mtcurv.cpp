// mtcurv: dataset generation, training, evaluation, error maps, statistics
// and a numerical self-check.
//
// Exit codes: 0 success, 1 usage, 2 data / I-O, 3 numeric failure.

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mtcurv/checkpoint.hpp"
#include "mtcurv/config.hpp"
#include "mtcurv/error.hpp"
#include "mtcurv/geometry.hpp"
#include "mtcurv/gradcheck.hpp"
#include "mtcurv/io.hpp"
#include "mtcurv/metrics.hpp"
#include "mtcurv/pipeline.hpp"
#include "mtcurv/synthsim.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace mtcurv;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Config resolution: defaults <- --config file <- --set overrides <- flags.

struct ConfigFlags {
  std::string file;
  std::vector<std::string> sets;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& f) {
  cmd->add_option("--config", f.file, "JSON run config")->check(CLI::ExistingFile);
  cmd->add_option("--set", f.sets, "override one field, e.g. gen.psf_sigma=2 (repeatable)");
}

config::RunConfig resolve(const ConfigFlags& f) {
  json j = json::object();
  if (!f.file.empty()) {
    try {
      j = json::parse(io::read_text(f.file));
    } catch (const json::exception& e) {
      throw DataError(f.file, std::string("malformed JSON: ") + e.what());
    }
  }
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    const auto dot = s.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq)
      throw UsageError("--set expects section.key=value, got '" + s + "'");
    const std::string section = s.substr(0, dot), key = s.substr(dot + 1, eq - dot - 1);
    const std::string raw = s.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::exception&) {
      value = raw;
    }
    if (section == "loss" && key.empty()) j["loss"] = value;
    else j[section][key] = value;
  }
  try {
    return config::run_config_from_json(j);
  } catch (const DomainError& e) {
    throw UsageError(e.what());
  }
}

void echo_config(const fs::path& dir, const json& resolved) {
  io::write_text(dir / "config.json", resolved.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// gen

struct GenArgs {
  ConfigFlags cfg;
  std::string out;
  std::size_t count = 1000;
  std::string variant;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> size;
};

int cmd_gen(const GenArgs& a) {
  auto run = resolve(a.cfg);
  auto& g = run.gen;
  if (!a.variant.empty()) g.set_variant(synthsim::parse_variant(a.variant));
  if (a.seed) g.seed = *a.seed;
  if (a.size) g.height = g.width = *a.size;
  try {
    g.validate();
  } catch (const DomainError& e) {
    throw UsageError(e.what());
  }
  if (a.count == 0) throw UsageError("--count must be positive");

  fs::create_directories(a.out);
  synthsim::generate_dataset(g, a.count, a.out);
  json echo = {{"command", "gen"}, {"count", a.count}, {"gen", config::to_json(g)}};
  echo_config(a.out, echo);
  std::cout << (fs::path(a.out) / "manifest.json").string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  ConfigFlags cfg;
  std::string data, out, arch, loss;
  std::optional<std::size_t> epochs, patience, batch, base_filters, depth;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
  bool no_augment = false;
};

json train_echo(const config::RunConfig& run, const std::string& data) {
  json j = config::to_json(run);
  j.erase("gen");
  j["command"] = "train";
  j["data"] = data;
  return j;
}

int cmd_train(const TrainArgs& a) {
  auto run = resolve(a.cfg);
  auto& t = run.train;
  if (!a.arch.empty()) t.model.arch = model::parse_arch(a.arch);
  if (a.base_filters || a.depth) {
    if (a.base_filters) t.model.base_filters = *a.base_filters;
    if (a.depth) t.model.depth = *a.depth;
    t.model.bottleneck_filters = t.model.base_filters << t.model.depth;
  }
  if (!a.loss.empty()) t.loss = losses::LossSpec::preset(a.loss);
  if (a.epochs) {
    t.max_epochs = *a.epochs;
    if (!a.patience) t.patience = std::min(t.patience, t.max_epochs);
  }
  if (a.patience) t.patience = *a.patience;
  if (a.batch) t.batch_size = *a.batch;
  if (a.lr) t.lr = *a.lr;
  if (a.seed) t.split_seed = t.shuffle_seed = t.init_seed = *a.seed;
  if (a.no_augment) t.augment = false;
  try {
    t.model.validate();
    t.loss.validate();
    t.validate();
  } catch (const DomainError& e) {
    throw UsageError(e.what());
  }

  const auto ds = synthsim::load_dataset(a.data);
  const auto split = pipeline::make_split(ds.size(), t.train_ratio, t.val_ratio, t.test_ratio,
                                          t.split_seed);
  const fs::path out(a.out);
  fs::create_directories(out);

  std::string log, timing;
  pipeline::TrainHooks hooks;
  hooks.on_epoch = [&](const pipeline::EpochRecord& r) {
    log += pipeline::epoch_to_json_line(r) + "\n";
    timing += json{{"epoch", r.epoch}, {"seconds", r.seconds}}.dump() + "\n";
    std::fprintf(stderr, "epoch %zu  train %.6f  val %.6f%s  (%.1fs)\n", r.epoch, r.train_loss,
                 r.val_loss, r.best ? "  *" : "", r.seconds);
  };
  auto result = pipeline::train(ds.samples, split.train, split.val, t, hooks);

  const json echo = train_echo(run, a.data);
  checkpoint::save(out / "model.mtck", result.model, &result.adam, echo.dump());
  io::write_text(out / "train_log.jsonl", log);
  io::write_text(out / "timing.jsonl", timing);
  io::write_text(out / "split.json",
                 json{{"train", split.train}, {"val", split.val}, {"test", split.test}}.dump() +
                     "\n");
  echo_config(out, echo);
  std::printf("best epoch %zu  val loss %.6f%s\n%s\n", result.log.best_epoch,
              result.log.best_val_loss, result.log.early_stopped ? "  (early stop)" : "",
              (out / "model.mtck").string().c_str());
  return kOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string model, data, split = "test", report;
};

pipeline::TrainConfig train_config_from_echo(const std::string& echo) {
  pipeline::TrainConfig t;
  try {
    const json j = json::parse(echo);
    if (j.contains("train")) t = config::train_config_from_json(j.at("train"), t);
  } catch (const json::exception&) {
  }
  return t;
}

int cmd_eval(const EvalArgs& a) {
  auto ck = checkpoint::load(a.model);
  const auto ds = synthsim::load_dataset(a.data);
  const auto t = train_config_from_echo(ck.config_echo);

  std::vector<std::string> label(ds.size(), "all");
  std::vector<std::size_t> idx;
  if (a.split == "all" && ds.size() < 10) {
    idx.resize(ds.size());
    std::iota(idx.begin(), idx.end(), 0);
  } else {
    pipeline::SplitPlan plan;
    try {
      plan = pipeline::make_split(ds.size(), t.train_ratio, t.val_ratio, t.test_ratio,
                                  t.split_seed);
    } catch (const DomainError& e) {
      throw DataError(a.data, e.what());
    }
    for (auto i : plan.train) label[i] = "train";
    for (auto i : plan.val) label[i] = "val";
    for (auto i : plan.test) label[i] = "test";
    if (a.split == "all") {
      idx.resize(ds.size());
      std::iota(idx.begin(), idx.end(), 0);
    } else if (a.split == "test") idx = plan.test;
    else if (a.split == "val") idx = plan.val;
    else idx = plan.train;
  }

  metrics::MetricReport report;
  try {
    report = pipeline::evaluate(ck.model, ds.samples, idx,
                                [&](std::size_t i) { return label[i]; });
  } catch (const DomainError& e) {
    throw DataError(a.data, std::string("checkpoint and data are incompatible: ") + e.what());
  }
  io::write_text(a.report + ".json", metrics::report_to_json(report));
  io::write_text(a.report + ".csv", metrics::report_to_csv(report));
  std::cout << metrics::format_report_table(report);
  return kOk;
}

// ---------------------------------------------------------------------------
// maps

struct MapsArgs {
  std::string model, image, pred, truth, out_prefix;
};


struct Anchor {
  double pos;
  double r, g, b;
};

// Perceptually ordered sequential map (inferno-like), black at 0.
const std::vector<Anchor> kSequential{
    {0.000, 0, 0, 0},       {0.125, 31, 12, 72},  {0.250, 85, 15, 109},
    {0.375, 136, 34, 106},  {0.500, 186, 54, 85}, {0.625, 227, 89, 51},
    {0.750, 249, 140, 10},  {0.875, 249, 201, 50}, {1.000, 252, 255, 164}};
// Blue (negative) - gray (zero) - red (positive).
const std::vector<Anchor> kDiverging{{0.0, 59, 76, 192}, {0.5, 128, 128, 128}, {1.0, 180, 4, 38}};

io::Rgb lookup(const std::vector<Anchor>& lut, double u) {
  u = std::clamp(std::isfinite(u) ? u : 0.0, 0.0, 1.0);
  std::size_t k = 1;
  while (k + 1 < lut.size() && lut[k].pos < u) ++k;
  const Anchor& lo = lut[k - 1];
  const Anchor& hi = lut[k];
  const double w = (u - lo.pos) / (hi.pos - lo.pos);
  auto mix = [&](double x, double y) {
    return static_cast<std::uint8_t>(std::lround(x + (y - x) * w));
  };
  return {mix(lo.r, hi.r), mix(lo.g, hi.g), mix(lo.b, hi.b)};
}

json render(const fs::path& path, const ScalarField& f, const std::vector<Anchor>& lut,
            double lo, double hi, const char* cmap) {
  std::vector<io::Rgb> px(f.size());
  const double span = hi - lo;
  for (std::size_t i = 0; i < f.size(); ++i)
    px[i] = lookup(lut, span > 0 ? (f.values()[i] - lo) / span : (&lut == &kDiverging ? 0.5 : 0.0));
  io::write_png_rgb(path, f.height(), f.width(), px);
  return {{"file", path.filename().string()}, {"colormap", cmap}, {"min", lo}, {"max", hi}};
}

Field<float> read_map(const fs::path& path) {
  if (path.extension() == ".png") return io::read_png16(path);
  return io::read_mtcv(path);
}

int cmd_maps(const MapsArgs& a) {
  const ScalarField truth = ScalarField::convert(read_map(a.truth));
  Field<float> pred_f;
  if (!a.pred.empty()) {
    pred_f = read_map(a.pred);
  } else {
    auto ck = checkpoint::load(a.model);
    const auto image = io::read_png16(a.image);
    try {
      pred_f = pipeline::predict(ck.model, image);
    } catch (const DomainError& e) {
      throw DataError(a.image, std::string("image does not fit the model: ") + e.what());
    }
  }
  if (pred_f.height() != truth.height() || pred_f.width() != truth.width())
    throw DataError(a.truth, "prediction and truth sizes differ");
  const ScalarField pred = ScalarField::convert(pred_f);
  const auto maps = metrics::error_maps(truth, pred);

  auto max_of = [](const ScalarField& f) {
    double m = 0;
    for (double v : f.values()) m = std::max(m, std::abs(v));
    return m;
  };
  const std::string prefix = a.out_prefix;
  const fs::path dir = fs::path(prefix).parent_path();
  if (!dir.empty()) fs::create_directories(dir);

  json side;
  side["prediction"] = render(prefix + "_pred.png", pred, kSequential, 0.0, 1.0, "inferno-like");
  const double m = max_of(maps.de);
  side["de"] = render(prefix + "_de.png", maps.de, kDiverging, -m, m, "blue-gray-red");
  side["rse"] = render(prefix + "_rse.png", maps.rse, kSequential, 0.0, max_of(maps.rse),
                       "inferno-like");
  if (maps.ce)
    side["ce"] = render(prefix + "_ce.png", *maps.ce, kSequential, 0.0, max_of(*maps.ce),
                        "inferno-like");
  io::write_text(prefix + "_maps.json", side.dump(2) + "\n");
  std::cout << prefix << "_maps.json\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// stats

struct StatsArgs {
  std::string report_a, report_b, json_out;
  std::vector<double> summary;
};

std::string fmt(double v, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

int cmd_stats(const StatsArgs& a) {
  json rows = json::array();
  std::printf("%-10s %12s %12s %12s %12s %10s %10s %12s\n", "metric", "mean_a", "std_a", "mean_b",
              "std_b", "t", "df", "p");
  auto emit = [&](const std::string& name, double m1, double s1, double n1, double m2, double s2,
                  double n2) {
    json row = {{"metric", name}, {"mean_a", m1}, {"std_a", s1}, {"n_a", n1},
                {"mean_b", m2},   {"std_b", s2},  {"n_b", n2}};
    std::string t = "n/a", df = "n/a", p = "n/a";
    try {
      const auto w = metrics::welch_ttest_from_summary(m1, s1, n1, m2, s2, n2);
      row["t"] = w.t;
      row["df"] = w.df;
      row["p"] = w.p;
      t = fmt(w.t, "%.4f");
      df = fmt(w.df, "%.2f");
      p = fmt(w.p, "%.3g");
    } catch (const DomainError&) {
      row["t"] = row["df"] = row["p"] = nullptr;
    }
    std::printf("%-10s %12.6g %12.6g %12.6g %12.6g %10s %10s %12s\n", name.c_str(), m1, s1, m2, s2,
                t.c_str(), df.c_str(), p.c_str());
    rows.push_back(row);
  };

  if (!a.summary.empty()) {
    const auto& s = a.summary;
    emit("summary", s[0], s[1], s[2], s[3], s[4], s[5]);
  } else {
    if (a.report_a.empty() || a.report_b.empty())
      throw UsageError("stats needs --report-a and --report-b, or --summary");
    const auto ra = metrics::report_from_json(io::read_text(a.report_a), a.report_a);
    const auto rb = metrics::report_from_json(io::read_text(a.report_b), a.report_b);
    std::size_t shared = 0;
    for (std::size_t i = 0; i < ra.metrics.size(); ++i) {
      const auto j = rb.column(ra.metrics[i]);
      if (!j) continue;
      ++shared;
      const auto va = ra.defined_values(i), vb = rb.defined_values(*j);
      auto ms = [](const std::vector<double>& v) {
        double m = 0, s = 0;
        for (double x : v) m += x;
        m /= std::max<std::size_t>(v.size(), 1);
        for (double x : v) s += (x - m) * (x - m);
        return std::pair{m, v.size() > 1 ? std::sqrt(s / (v.size() - 1)) : 0.0};
      };
      const auto [m1, s1] = ms(va);
      const auto [m2, s2] = ms(vb);
      emit(ra.metrics[i], m1, s1, static_cast<double>(va.size()), m2, s2,
           static_cast<double>(vb.size()));
    }
    if (shared == 0) throw DataError(a.report_b, "no metric columns shared with " + a.report_a);
  }
  if (!a.json_out.empty()) io::write_text(a.json_out, rows.dump(2) + "\n");
  return kOk;
}

// ---------------------------------------------------------------------------
// selfcheck

struct Check {
  std::string name;
  double error;
  double tolerance;
  bool passed;
};

std::vector<Check> curvature_checks() {
  std::vector<Check> out;
  for (double r : {5.0, 10.0, 20.0, 50.0}) {
    const double dtheta = 2.0 * std::asin(1.0 / r);  // 2 px chords
    std::vector<geometry::Point> pts;
    for (int k = 0; k * dtheta < 2.0 * M_PI; ++k)
      pts.push_back({r * std::cos(k * dtheta), r * std::sin(k * dtheta)});
    const geometry::Polyline line(pts);
    double worst = 0;
    const auto kappa = geometry::polyline_curvatures(line);
    for (std::size_t i = 1; i + 1 < kappa.size(); ++i)
      worst = std::max(worst, std::abs(kappa[i] * r - 1.0));
    out.push_back({"curvature circle R=" + fmt(r, "%g"), worst, 0.02, worst <= 0.02});
  }
  std::vector<geometry::Point> pts;
  for (int k = 0; k < 20; ++k) pts.push_back({0.5 + 2.0 * k, 3.0 - 1.0 * k});
  const geometry::Polyline straight(pts);
  double worst = 0;
  for (double k : geometry::polyline_curvatures(straight)) worst = std::max(worst, std::abs(k));
  out.push_back({"curvature straight line", worst, 0.0, worst == 0.0});
  return out;
}

std::vector<Check> metric_checks() {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> d(0, 9);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> a(300), b(300);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = d(rng);  // heavy ties
    b[i] = a[i] + 3.0 * n(rng);
  }
  // Brute force: rank = 1 + #less + (#equal - 1) / 2, then the Pearson formula.
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double less = 0, eq = 0;
      for (double x : v) {
        less += x < v[i];
        eq += x == v[i];
      }
      r[i] = 1.0 + less + (eq - 1.0) / 2.0;
    }
    return r;
  };
  auto pearson = [](const std::vector<double>& x, const std::vector<double>& y) {
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
    mx /= x.size(), my /= y.size();
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      sxy += (x[i] - mx) * (y[i] - my);
      sxx += (x[i] - mx) * (x[i] - mx);
      syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
  };
  std::vector<Check> out;
  const double ep = std::abs(*metrics::pearson(a, b) - pearson(a, b));
  out.push_back({"pearson vs definition", ep, 1e-9, ep <= 1e-9});
  const double es = std::abs(*metrics::spearman(a, b) - pearson(ranks(a), ranks(b)));
  out.push_back({"spearman vs brute-force ranks", es, 1e-9, es <= 1e-9});
  const auto w = metrics::welch_ttest_from_summary(0.5445, 0.0197, 100, 0.4931, 0.0220, 100);
  const double ew = std::abs(std::log10(w.p) - std::log10(1.3e-41));
  out.push_back({"welch summary p (log10 distance)", ew, 1.0, ew <= 1.0});
  return out;
}

std::vector<Check> determinism_checks() {
  std::vector<Check> out;
  synthsim::GenConfig g;
  g.height = g.width = 64;
  g.seed = 5;
  const auto s1 = synthsim::generate_sample(g, 3), s2 = synthsim::generate_sample(g, 3);
  const bool same_gen = s1.image == s2.image && s1.target == s2.target;
  out.push_back({"generate_sample repeat", same_gen ? 0.0 : 1.0, 0.0, same_gen});

  model::ModelSpec spec;
  spec.base_filters = 8;
  spec.bottleneck_filters = 128;
  model::Model<float> m(spec, 9);
  tensor::Tensor<float> x({2, 1, 32, 32}, std::vector<float>(s1.image.values().begin(),
                                                             s1.image.values().begin() + 2048));
  const int threads = omp_get_max_threads();
  std::vector<float> ref;
  bool same = true;
  for (int nt : {1, std::max(threads, 2), 1}) {
    omp_set_num_threads(nt);
    tensor::NoGradGuard guard;
    const auto y = m.forward(x, tensor::Mode::Train);
    std::vector<float> v(y.values().begin(), y.values().end());
    if (ref.empty()) ref = v;
    else same = same && v == ref;
  }
  omp_set_num_threads(threads);
  out.push_back({"forward bitwise across thread counts", same ? 0.0 : 1.0, 0.0, same});
  return out;
}

int cmd_selfcheck(const std::string& fault) {
  if (fault == "conv2d") tensor::testing::inject_fault(tensor::testing::Fault::Conv2dBackward);
  else if (!fault.empty()) throw UsageError("--inject-fault: unknown fault '" + fault + "'");

  std::vector<Check> checks;
  for (std::uint64_t seed = 1; seed <= 10; ++seed)
    for (const auto& r : gradcheck::op_suite(seed))
      checks.push_back({"grad " + r.name + " #" + std::to_string(seed), r.max_rel_error,
                        r.tolerance, r.passed});
  gradcheck::Options o;
  o.tolerance = 1e-2;
  o.vector_error = true;
  const auto m = gradcheck::model_check("mtcurv", 32, 20, 1, o);
  checks.push_back({"grad " + m.name, m.vector_rel_error, m.tolerance, m.passed});
  for (auto& c : curvature_checks()) checks.push_back(c);
  for (auto& c : metric_checks()) checks.push_back(c);
  for (auto& c : determinism_checks()) checks.push_back(c);

  std::vector<std::string> failed;
  for (const auto& c : checks) {
    std::printf("%s  %-44s error %.3e  tol %.1e\n", c.passed ? "PASS" : "FAIL", c.name.c_str(),
                c.error, c.tolerance);
    if (!c.passed) failed.push_back(c.name);
  }
  if (failed.empty()) {
    std::printf("selfcheck: all %zu checks passed\n", checks.size());
    return kOk;
  }
  std::fprintf(stderr, "selfcheck: %zu check(s) failed:", failed.size());
  for (const auto& f : failed) std::fprintf(stderr, " [%s]", f.c_str());
  std::fprintf(stderr, "\n");
  return kNumeric;
}

void apply_thread_cap() {
  const char* env = std::getenv("MTCURV_THREADS");
  if (!env || !*env) return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw UsageError("MTCURV_THREADS must be a positive integer");
  omp_set_num_threads(static_cast<int>(n));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mtcurv: curvature regression for fluorescence micrographs"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "generate a synthetic dataset");
  add_config_flags(g, gen.cfg);
  g->add_option("--out", gen.out, "output directory")->required();
  g->add_option("--count", gen.count, "number of pairs");
  g->add_option("--variant", gen.variant)->check(CLI::IsMember({"simple", "complex"}));
  g->add_option("--seed", gen.seed);
  g->add_option("--size", gen.size, "square image size in px");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a model");
  add_config_flags(t, tr.cfg);
  t->add_option("--data", tr.data, "dataset directory")->required();
  t->add_option("--out", tr.out, "output directory")->required();
  t->add_option("--arch", tr.arch)
      ->check(CLI::IsMember({"unet", "mtcurv_noatt", "mtcurv_nores", "mtcurv"}));
  t->add_option("--loss", tr.loss)->check(CLI::IsMember(losses::LossSpec::preset_names()));
  t->add_option("--epochs", tr.epochs);
  t->add_option("--patience", tr.patience);
  t->add_option("--batch", tr.batch);
  t->add_option("--seed", tr.seed, "split, shuffle and init seed");
  t->add_option("--lr", tr.lr);
  t->add_option("--base-filters", tr.base_filters);
  t->add_option("--depth", tr.depth);
  t->add_flag("--no-augment", tr.no_augment);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint");
  e->add_option("--model", ev.model)->required();
  e->add_option("--data", ev.data)->required();
  e->add_option("--split", ev.split)->check(CLI::IsMember({"test", "val", "train", "all"}));
  e->add_option("--report", ev.report, "output prefix for .json and .csv")->required();

  MapsArgs mp;
  auto* m = app.add_subcommand("maps", "render prediction and error maps");
  auto* model_opt = m->add_option("--model", mp.model);
  auto* image_opt = m->add_option("--image", mp.image, "16-bit PNG micrograph");
  auto* pred_opt = m->add_option("--pred", mp.pred, "precomputed prediction (MTCV or PNG)");
  m->add_option("--truth", mp.truth, "ground truth (MTCV or PNG)")->required();
  m->add_option("--out-prefix", mp.out_prefix)->required();
  pred_opt->excludes(model_opt)->excludes(image_opt);
  model_opt->needs(image_opt);

  StatsArgs st;
  auto* s = app.add_subcommand("stats", "Welch t-test between two reports");
  auto* ra = s->add_option("--report-a", st.report_a);
  auto* rb = s->add_option("--report-b", st.report_b);
  s->add_option("--summary", st.summary, "m1 s1 n1 m2 s2 n2")->expected(6)->excludes(ra)->excludes(rb);
  s->add_option("--json", st.json_out, "also write the table as JSON");

  std::string fault;
  auto* sc = app.add_subcommand("selfcheck", "gradient, oracle and determinism checks");
  sc->add_option("--inject-fault", fault)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    apply_thread_cap();
    if (*g) return cmd_gen(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*m) {
      if (mp.pred.empty() && (mp.model.empty() || mp.image.empty()))
        throw UsageError("maps needs --model and --image, or --pred");
      return cmd_maps(mp);
    }
    if (*s) return cmd_stats(st);
    if (*sc) return cmd_selfcheck(fault);
  } catch (const UsageError& err) {
    std::fprintf(stderr, "usage error: %s\n", err.what());
    return kUsage;
  } catch (const DataError& err) {
    std::fprintf(stderr, "data error: %s\n", err.what());
    return kData;
  } catch (const fs::filesystem_error& err) {
    std::fprintf(stderr, "data error: %s\n", err.what());
    return kData;
  } catch (const NumericFailure& err) {
    std::fprintf(stderr, "numeric failure: %s\n", err.what());
    return kNumeric;
  } catch (const DomainError& err) {
    std::fprintf(stderr, "usage error: %s\n", err.what());
    return kUsage;
  }
  return kUsage;
}
