// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "metric_oracles.hpp"
#include "mtcurv/geometry.hpp"
#include "mtcurv/gradcheck.hpp"
#include "mtcurv/losses.hpp"
#include "mtcurv/metrics.hpp"
#include "mtcurv/model.hpp"
#include "mtcurv/pipeline.hpp"
#include "subprocess.hpp"
#include "test_util.hpp"

using namespace mtcurv;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* spec, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, spec, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<double> flat(const ScalarField& f) { return {f.values().begin(), f.values().end()}; }

// 1 ------------------------------------------------------------------------
Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_op = 0;
  std::string worst_name;
  bool ops_ok = true;
  for (const auto& r : gradcheck::op_suite(1)) {
    ops_ok = ops_ok && r.max_rel_error <= 1e-3;
    if (r.max_rel_error >= worst_op) {
      worst_op = r.max_rel_error;
      worst_name = r.name;
    }
  }
  gradcheck::Options o;
  o.step = 1e-3;
  o.tolerance = 1e-2;
  o.vector_error = true;
  const auto coarse = gradcheck::model_check("mtcurv", 32, 20, 1, o);
  gradcheck::Options fine = o;
  fine.step = 1e-5;
  fine.vector_error = false;
  const auto exact = gradcheck::model_check("mtcurv", 32, 20, 1, fine);
  const double secs = seconds_since(t0);
  const bool ok = ops_ok && coarse.passed && exact.passed && secs <= 300;
  return {ok, fmt("ops worst %.2e (%s) <= 1e-3; model h=1e-3 gradient-vector rel err %.2e <= 1e-2 "
                  "(worst single entry %.2e); model h=1e-5 worst entry %.2e <= 1e-2; %.0fs",
                  worst_op, worst_name.c_str(), coarse.vector_rel_error, coarse.max_rel_error,
                  exact.max_rel_error, secs)};
}

// 2 ------------------------------------------------------------------------
Outcome parameter_count() {
  const auto n = model::Model<float>(model::ModelSpec{}).parameter_count();
  return {n >= 7'000'000 && n <= 9'000'000, fmt("%zu parameters, window [7.0e6, 9.0e6]", n)};
}

// 3 ------------------------------------------------------------------------
Outcome curvature_oracle() {
  double worst = 0;
  for (double r : {5.0, 10.0, 20.0, 50.0}) {
    const double dt = 2.0 * std::asin(1.0 / r);  // 2 px chords
    std::vector<geometry::Point> pts;
    for (int k = 0; k * dt < 2.0 * M_PI; ++k) pts.push_back({r * std::cos(k * dt), r * std::sin(k * dt)});
    const auto kappa = geometry::polyline_curvatures(geometry::Polyline(pts));
    for (double k : kappa) worst = std::max(worst, std::abs(k * r - 1.0));
  }
  std::vector<geometry::Point> line;
  for (int k = 0; k < 30; ++k) line.push_back({1.5 + 2.0 * k * 0.6, -2.0 + 2.0 * k * 0.8});
  double straight = 0;
  for (double k : geometry::polyline_curvatures(geometry::Polyline(line))) straight = std::max(straight, std::abs(k));
  return {worst <= 0.02 && straight == 0.0,
          fmt("circles worst |kR-1| %.2e <= 0.02; straight line max |k| %g", worst, straight)};
}

// 4 ------------------------------------------------------------------------
Outcome metric_oracles() {
  std::mt19937_64 rng(4);
  double stat = 0;
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> t(1000), p(1000);
    for (auto& x : t) x = static_cast<double>(rng() % 40) / 40.0;  // ties
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = t[i] + static_cast<double>(rng() % 25) / 50.0 - 0.2;
    const ScalarField ft(25, 40, t), fp(25, 40, p);
    const auto s = metrics::statistical_metrics(ft, fp);
    stat = std::max({stat, std::abs(*s.pearson - oracle::pearson(t, p)),
                     std::abs(*s.spearman - oracle::spearman(t, p)), std::abs(*s.r2 - oracle::r2(t, p)),
                     std::abs(*s.evs - oracle::evs(t, p)),
                     std::abs(metrics::cosine_similarity(ft, fp) - oracle::cosine(t, p))});
  }
  double image = 0;
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 3; ++trial) {
    std::vector<double> t(48 * 56), p(48 * 56);
    for (auto& x : t) x = u(rng);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = 0.6 * t[i] + 0.4 * u(rng);
    const ScalarField ft(48, 56, t), fp(48, 56, p);
    image = std::max({image, std::abs(metrics::ms_ssim(ft, fp) - oracle::ms_ssim(t, p, 48, 56)),
                      std::abs(metrics::gmsd(ft, fp) - oracle::gmsd(t, p, 48, 56))});
  }
  return {stat <= 1e-9 && image <= 1e-6,
          fmt("statistical max |d| %.2e <= 1e-9; ms_ssim/gmsd max |d| %.2e <= 1e-6", stat, image)};
}

// 5 ------------------------------------------------------------------------
Outcome psnr_convention() {
  ScalarField t(8, 8, 0.5), p(8, 8, 0.5);
  for (std::size_t i = 0; i < p.size(); ++i) p.storage()[i] += (i % 2 ? 0.0231 : -0.0231);
  const auto m = metrics::pixel_metrics(t, p);
  return {std::abs(m.psnr - 32.73) < 0.005 && std::abs(m.psnr - 32.9037) <= 0.5,
          fmt("rmse %.4f -> psnr %.4f dB; reported mean 32.9037 (|d| %.3f <= 0.5)", m.rmse, m.psnr,
              std::abs(m.psnr - 32.9037))};
}

// 6 ------------------------------------------------------------------------
Outcome welch() {
  const auto w = metrics::welch_ttest_from_summary(0.5445, 0.0197, 100, 0.4931, 0.0220, 100);
  const double decades = std::abs(std::log10(w.p) - std::log10(1.3e-41));
  std::mt19937_64 rng(6);
  std::normal_distribution<double> a(0, 1), b(0.3, 2);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(4 + rng() % 40), y(4 + rng() % 40);
    for (auto& v : x) v = a(rng);
    for (auto& v : y) v = b(rng);
    const auto r = metrics::welch_ttest(x, y);
    worst = std::max(worst, std::abs(r.p - oracle::two_tailed_p(r.t, r.df)));
  }
  return {decades <= 1.0 && worst <= 1e-9,
          fmt("p %.3g (t %.3f, df %.1f), %.2f decades from 1.3e-41; quadrature oracle max |dp| %.2e",
              w.p, w.t, w.df, decades, worst)};
}

// 7 ------------------------------------------------------------------------
std::vector<synthsim::SamplePair> desk_dataset() {
  synthsim::GenConfig g;
  g.height = g.width = 64;
  g.seed = 7;
  g.set_variant(synthsim::Variant::Simple);
  std::vector<synthsim::SamplePair> out;
  for (std::size_t i = 0; i < 64; ++i) out.push_back(synthsim::generate_sample(g, i));
  return out;
}

Outcome desk_training(const std::vector<synthsim::SamplePair>& data, const pipeline::SplitPlan& split) {
  const auto t0 = std::chrono::steady_clock::now();
  pipeline::TrainConfig cfg;
  cfg.max_epochs = 40;
  cfg.patience = 40;
  cfg.batch_size = 2;
  cfg.loss = losses::LossSpec::preset("mse_grad");

  model::Model<float> untrained(cfg.model, cfg.init_seed);
  untrained.mark_running_stats_ready();
  const auto before = pipeline::evaluate(untrained, data, split.test);
  const double rho0 = before.aggregates[*before.column("spearman")].mean;

  pipeline::TrainHooks hooks;
  hooks.on_epoch = [](const pipeline::EpochRecord& r) {
    std::fprintf(stderr, "  epoch %zu train %.5f val %.5f (%.1fs)\n", r.epoch, r.train_loss, r.val_loss,
                 r.seconds);
  };
  auto result = pipeline::train(data, split.train, split.val, cfg, hooks);
  const auto after = pipeline::evaluate(result.model, data, split.test);
  const double rho = after.aggregates[*after.column("spearman")].mean;
  const double secs = seconds_since(t0);

  const auto& log = result.log.epochs;
  const double first = log.front().val_loss, last = log.back().val_loss;
  const bool a = last <= 0.5 * first;
  const bool b = rho >= 0.4 && rho >= rho0 + 0.3;
  const bool c = secs <= 3600;
  return {a && b && c,
          fmt("(a) %s val %.5f -> %.5f after %zu epochs, ratio %.3f <= 0.5 (best %.5f at epoch %zu); "
              "(b) %s spearman %.3f vs untrained %.3f; (c) %s %.0fs",
              a ? "ok" : "FAIL", first, last, log.size(), last / first, result.log.best_val_loss,
              result.log.best_epoch, b ? "ok" : "FAIL", rho, rho0, c ? "ok" : "FAIL", secs)};
}

// 8 ------------------------------------------------------------------------
Outcome loss_directionality() {
  const std::size_t n = 32;
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> t(n * n), off(n * n), chk(n * n);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = u(rng);
    off[i] = t[i] + 0.05;
    chk[i] = t[i] + (((i / n) + (i % n)) % 2 ? 0.05 : -0.05);
  }
  using tensor::Tensor;
  const Tensor<double> T({1, 1, n, n}, t), O({1, 1, n, n}, off), C({1, 1, n, n}, chk);
  const double mse_o = losses::mse_loss(O, T).item(), mse_c = losses::mse_loss(C, T).item();
  const double g_o = losses::grad_loss(O, T).item(), g_c = losses::grad_loss(C, T).item();
  const auto mg = losses::LossSpec::preset("mse_grad");
  const double comp_c = losses::composite_loss(mg, C, T).total.item();
  const double comp_o = losses::composite_loss(mg, O, T).total.item();
  const bool ok = std::abs(mse_o - mse_c) <= 1e-12 && g_o < 1e-25 && g_c > g_o && comp_c > comp_o &&
                  comp_c > mse_c;
  return {ok, fmt("equal mse %.6f / %.6f; grad offset %.1e, checkerboard %.4f; mse_grad %.4f vs %.4f",
                  mse_o, mse_c, g_o, g_c, comp_o, comp_c)};
}

// 9 ------------------------------------------------------------------------
Outcome determinism() {
  test::TempDir dir;
  const std::string bin = MTCURV_BIN;
  std::vector<std::string> notes;
  bool ok = true;
  for (const char* threads : {"1", "4"})
    for (int rep = 0; rep < 2; ++rep) {
      const auto tag = std::string("t") + threads + "_" + std::to_string(rep);
      // Fixed paths: the resolved config echoes the data directory.
      const auto data = dir.path / "data", run = dir.path / "run";
      const std::string env = std::string("MTCURV_THREADS=") + threads + " ";
      const auto g = test::run(env + bin + " gen --count 12 --size 32 --seed 7 --out " + data.string(),
                               dir.path);
      const auto t = test::run(env + bin + " train --data " + data.string() + " --out " + run.string() +
                                   " --epochs 2 --seed 3",
                               dir.path);
      if (g.code != 0 || t.code != 0) {
        ok = false;
        notes.push_back(tag + " exit " + std::to_string(g.code) + "/" + std::to_string(t.code));
      }
      std::error_code ec;
      fs::rename(data, dir.path / (tag + "_data"), ec);
      fs::rename(run, dir.path / (tag + "_run"), ec);
    }
  // timing.jsonl records wall time and is excluded by design.
  fs::remove(dir.path / "t1_0_run" / "timing.jsonl");
  for (const char* other : {"t1_1", "t4_0", "t4_1"}) {
    fs::remove(dir.path / (std::string(other) + "_run") / "timing.jsonl");
    const bool d = test::same_tree(dir.path / "t1_0_data", dir.path / (std::string(other) + "_data"));
    const bool r = test::same_tree(dir.path / "t1_0_run", dir.path / (std::string(other) + "_run"));
    if (!d || !r) {
      ok = false;
      notes.push_back(std::string(other) + (d ? "" : " data differs") + (r ? "" : " run differs"));
    }
  }
  std::string detail = "gen + train (default model, 2 epochs) byte-identical over 2 runs x threads {1, 4}";
  for (const auto& n : notes) detail += "; " + n;
  return {ok, detail};
}

// 10 -----------------------------------------------------------------------
Outcome ablation(const std::vector<synthsim::SamplePair>& data, const pipeline::SplitPlan& split) {
  pipeline::TrainConfig cfg;
  cfg.max_epochs = 2;
  cfg.patience = 2;
  const auto rep = pipeline::ablation_sweep(data, split, cfg);
  bool ok = rep.entries.size() == 4 && rep.metrics.size() == 6 && rep.p_vs_mtcurv.size() == 4;
  std::size_t cells = 0, pvals = 0;
  bool self_one = true;
  for (std::size_t a = 0; ok && a < 4; ++a) {
    ok = ok && rep.entries[a].report.has_value();
    if (!ok) break;
    for (const auto& name : rep.metrics)
      if (const auto c = rep.entries[a].report->column(name); c && rep.entries[a].report->aggregates[*c].count > 1)
        ++cells;
    for (const auto& p : rep.p_vs_mtcurv[a])
      if (p) {
        ++pvals;
        if (a == 3) self_one = self_one && *p == 1.0;
      }
  }
  ok = ok && rep.entries[3].arch == model::Arch::MTCurv && cells == 24 && pvals == 24 && self_one;
  std::fputs(pipeline::format_ablation_table(rep).c_str(), stderr);
  return {ok, fmt("%zu archs x %zu metrics, %zu mean±std cells, %zu p-values, mtcurv vs itself p=1: %s",
                  rep.entries.size(), rep.metrics.size(), cells, pvals, self_one ? "yes" : "no")};
}

// 11 -----------------------------------------------------------------------
Outcome degradation(const std::vector<synthsim::SamplePair>& data) {
  const auto& cat = metrics::metric_catalog();
  std::mt19937_64 rng(11);
  std::normal_distribution<double> gauss(0, 1);
  std::vector<std::vector<double>> sums(4, std::vector<double>(cat.size(), 0));
  std::vector<std::vector<std::size_t>> counts(4, std::vector<std::size_t>(cat.size(), 0));
  bool ok = true;
  std::string broken;
  for (std::size_t img = 0; img < 10; ++img) {
    const auto truth = ScalarField::convert(data[img].target);
    // Start from a slightly imperfect prediction so the zero-noise point is not saturated.
    std::vector<double> base = flat(truth), noise(truth.size());
    for (auto& v : base) v = 0.9 * v + 0.01;
    for (auto& v : noise) v = gauss(rng);
    std::vector<std::vector<metrics::Value>> levels;
    for (double sigma : {0.0, 0.01, 0.05, 0.1}) {
      std::vector<double> p(base);
      for (std::size_t i = 0; i < p.size(); ++i) p[i] += sigma * noise[i];
      levels.push_back(metrics::evaluate_pair(truth, ScalarField(truth.height(), truth.width(), p)));
    }
    for (std::size_t m = 0; m < cat.size(); ++m)
      for (std::size_t k = 1; k < 4; ++k) {
        if (!levels[k][m] || !levels[k - 1][m]) continue;
        const bool worse = cat[m].direction == metrics::Direction::Higher ? *levels[k][m] < *levels[k - 1][m]
                                                                          : *levels[k][m] > *levels[k - 1][m];
        if (!worse) {
          ok = false;
          broken += " " + cat[m].name + "@image" + std::to_string(img) + "/level" + std::to_string(k);
        }
      }
  }
  return {ok, "sigma {0.01, 0.05, 0.1} on 10 desk targets, all defined metrics move in their declared "
              "worse direction" + (ok ? std::string() : ":" + broken)};
}

}  // namespace

int main() {
  struct Row {
    int id;
    const char* name;
    Outcome outcome;
  };
  std::vector<Row> rows;
  auto record = [&](int id, const char* name, Outcome o) {
    std::printf("criterion %2d: %s  %s: %s\n", id, o.passed ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
    rows.push_back({id, name, std::move(o)});
  };

  record(1, "gradient correctness", gradients());
  record(2, "parameter count", parameter_count());
  record(3, "curvature oracle", curvature_oracle());
  record(4, "metric oracle equivalence", metric_oracles());
  record(5, "psnr/rmse convention", psnr_convention());
  record(6, "welch reproduction", welch());
  const auto data = desk_dataset();
  const auto split = pipeline::make_split(data.size(), 0);
  record(7, "desk-scale training", desk_training(data, split));
  record(8, "loss directionality", loss_directionality());
  record(9, "determinism", determinism());
  record(10, "ablation harness shape", ablation(data, split));
  record(11, "metric degradation monotonicity", degradation(data));

  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.outcome.passed ? 0 : 1;
  std::printf("acceptance: %zu/%zu criteria passed\n", rows.size() - failed, rows.size());
  return failed == 0 ? 0 : 1;
}
