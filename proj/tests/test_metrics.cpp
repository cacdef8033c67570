#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "mtcurv/error.hpp"
#include "mtcurv/geometry.hpp"
#include "mtcurv/metrics.hpp"
#include "metric_oracles.hpp"

using namespace mtcurv;
using namespace mtcurv::metrics;

namespace {

ScalarField random_field(std::size_t h, std::size_t w, std::uint64_t seed, double lo = 0,
                         double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(h * w);
  for (auto& x : v) x = u(rng);
  return ScalarField(h, w, std::move(v));
}

// Smooth blobs on a background: structured like a curvature map, never constant.
ScalarField smooth_field(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  ScalarField f(h, w, 0.2);
  for (int k = 0; k < 6; ++k) {
    const double cy = u(rng) * h, cx = u(rng) * w, s = 3 + 6 * u(rng), a = 0.6 * u(rng);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        f(y, x) += a * std::exp(-((y - cy) * (y - cy) + (x - cx) * (x - cx)) / (2 * s * s));
  }
  return f;
}

ScalarField map(const ScalarField& f, double (*fn)(double)) {
  ScalarField out = f;
  for (auto& v : out.storage()) v = fn(v);
  return out;
}

std::vector<double> flat(const ScalarField& f) { return {f.values().begin(), f.values().end()}; }

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("pixel metrics") {
    const auto t = random_field(8, 8, 1, 0.1, 1);
    const auto px = pixel_metrics(t, t);
    CHECK(px.rmse == 0);
    CHECK(px.mae == 0);
    CHECK(px.smape == 0);
    CHECK(px.psnr == kPsnrCap);
    CHECK(*px.nrmse == 0);

    const ScalarField zero(4, 4, 0.0), tenth(4, 4, 0.1);
    CHECK(pixel_metrics(zero, tenth).smape == doctest::Approx(200));
    CHECK_FALSE(pixel_metrics(zero, tenth).nrmse.has_value());
    CHECK(pixel_metrics(zero, zero).smape == 0);

    // rmse 0.0231 maps to 32.73 dB with a unit peak.
    ScalarField p = t;
    for (std::size_t i = 0; i < p.size(); ++i) p.storage()[i] += (i % 2 ? 0.0231 : -0.0231);
    const auto m = pixel_metrics(t, p);
    CHECK(m.rmse == doctest::Approx(0.0231).epsilon(1e-9));
    CHECK(m.psnr == doctest::Approx(32.73).epsilon(1e-4));
    CHECK(std::abs(m.psnr - 32.9037) < 0.5);

    double mean_t = 0;
    for (double v : t.values()) mean_t += v / t.size();
    CHECK(*m.nrmse == doctest::Approx(0.0231 / mean_t).epsilon(1e-9));
    double range = *std::max_element(t.values().begin(), t.values().end()) -
                   *std::min_element(t.values().begin(), t.values().end());
    CHECK(*pixel_metrics(t, p, NrmseNorm::Range).nrmse == doctest::Approx(0.0231 / range).epsilon(1e-9));
    CHECK_THROWS_AS(pixel_metrics(t, ScalarField(8, 7)), DomainError);
  }

  TEST_CASE("statistical metrics") {
    const auto t = random_field(10, 10, 2);
    const auto same = statistical_metrics(t, t);
    CHECK(*same.pearson == doctest::Approx(1));
    CHECK(*same.spearman == doctest::Approx(1));
    CHECK(*same.r2 == 1);
    CHECK(*same.evs == 1);

    double mean = 0;
    for (double v : t.values()) mean += v / t.size();
    const auto flat_pred = statistical_metrics(t, ScalarField(10, 10, mean));
    CHECK(*flat_pred.r2 == doctest::Approx(0).scale(1));
    CHECK(*flat_pred.evs == doctest::Approx(0).scale(1));
    CHECK_FALSE(flat_pred.pearson.has_value());
    CHECK_FALSE(flat_pred.spearman.has_value());

    ScalarField off = t;
    for (auto& v : off.storage()) v += 0.3;
    const auto o = statistical_metrics(t, off);
    CHECK(*o.evs == doctest::Approx(1));
    CHECK(*o.r2 < 1);

    const auto c = statistical_metrics(ScalarField(4, 4, 0.5), t.size() ? random_field(4, 4, 3) : t);
    CHECK_FALSE(c.r2.has_value());
    CHECK_FALSE(c.evs.has_value());
  }

  TEST_CASE("spearman matches a brute-force rank oracle") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<double> a(1000), b(1000);
      for (auto& x : a) x = static_cast<double>(rng() % 50);  // heavy ties
      for (std::size_t i = 0; i < b.size(); ++i) b[i] = a[i] + static_cast<double>(rng() % 30);
      const double want = oracle::spearman(a, b);
      CHECK(std::abs(*spearman(a, b) - want) <= 1e-9);
      CHECK(std::abs(*pearson(a, b) - oracle::pearson(a, b)) <= 1e-12);
      CHECK(average_ranks(a) == oracle::ranks(a));
    }
    const std::vector<double> r = average_ranks(std::vector<double>{3, 1, 3, 2});
    CHECK(r == std::vector<double>{3.5, 1, 3.5, 2});
  }

  TEST_CASE("monotone transforms and rescaling") {
    const auto t = random_field(12, 12, 5);
    const auto p = random_field(12, 12, 6);
    const double s = *statistical_metrics(t, p).spearman;
    CHECK(std::abs(*statistical_metrics(t, map(p, [](double v) { return std::exp(v); })).spearman - s) <= 1e-9);
    CHECK(std::abs(*statistical_metrics(t, map(p, [](double v) { return v * v * v; })).spearman - s) <= 1e-9);

    ScalarField near = t;
    const auto noise = random_field(12, 12, 7, -0.05, 0.05);
    for (std::size_t i = 0; i < near.size(); ++i) near.storage()[i] += noise.values()[i];
    const auto scaled = map(near, [](double v) { return 3 * v; });
    const auto a = statistical_metrics(t, near), b = statistical_metrics(t, scaled);
    CHECK(*a.pearson == doctest::Approx(*b.pearson).epsilon(1e-12));
    CHECK(cosine_similarity(t, near) == doctest::Approx(cosine_similarity(t, scaled)).epsilon(1e-12));
    CHECK(std::abs(*a.r2 - *b.r2) > 0.1);
  }

  TEST_CASE("cosine similarity") {
    const auto t = random_field(6, 6, 8, -1, 1);
    CHECK(cosine_similarity(t, map(t, [](double v) { return 2 * v; })) == doctest::Approx(1));
    ScalarField a(4, 4, 0.0), b(4, 4, 0.0);
    a(0, 0) = 1;
    b(3, 3) = 2;
    CHECK(cosine_similarity(a, b) == 0);
    CHECK(cosine_similarity(ScalarField(4, 4), ScalarField(4, 4)) == 1);
    CHECK(cosine_similarity(a, ScalarField(4, 4)) == 0);

    const auto p = random_field(6, 6, 9, -1, 1);
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      dot += t.values()[i] * p.values()[i];
      na += t.values()[i] * t.values()[i];
      nb += p.values()[i] * p.values()[i];
    }
    CHECK(std::abs(cosine_similarity(t, p) - dot / std::sqrt(na * nb)) <= 1e-12);
  }

  TEST_CASE("ms_ssim and gmsd") {
    const auto t = smooth_field(48, 40, 10);
    CHECK(ms_ssim(t, t) == doctest::Approx(1));
    CHECK(gmsd(t, t) == 0);
    CHECK(ms_ssim(t, map(t, [](double v) { return 1 - v; })) < 0.5);
    CHECK(ms_ssim_scales(176, 176) == 5);
    CHECK(ms_ssim_scales(175, 400) == 4);
    CHECK(ms_ssim_scales(10, 10) == 0);
    CHECK_THROWS_AS(ms_ssim(ScalarField(10, 10), ScalarField(10, 10)), DomainError);

    for (std::uint64_t seed : {11, 12, 13}) {
      const auto p = random_field(48, 40, seed);
      const auto q = smooth_field(48, 40, seed + 100);
      CHECK(std::abs(ms_ssim(q, p) - oracle::ms_ssim(flat(q), flat(p), 48, 40)) <= 1e-6);
      CHECK(std::abs(gmsd(q, p) - oracle::gmsd(flat(q), flat(p), 48, 40)) <= 1e-6);
    }
  }

  TEST_CASE("error maps") {
    const auto t = random_field(7, 7, 14);
    const auto same = error_maps(t, t);
    for (double v : same.de.values()) CHECK(v == 0);
    for (double v : same.rse.values()) CHECK(v == 0);
    for (double v : same.ce->values()) CHECK(v == 0);

    ScalarField under = t;
    for (auto& v : under.storage()) v -= 0.1;
    const auto u = error_maps(t, under);
    for (double v : u.de.values()) CHECK(v == doctest::Approx(0.1));
    for (double v : u.rse.values()) CHECK(v == doctest::Approx(0.1));
    for (double v : u.ce->values()) CHECK(v <= 1e-12);

    ScalarField spike = t;
    spike(3, 3) += 1.0;
    const auto s = error_maps(t, spike);
    CHECK(s.de(3, 3) == doctest::Approx(-1.0));
    for (std::size_t y = 0; y < 7; ++y)
      for (std::size_t x = 0; x < 7; ++x) {
        const std::size_t d = (y > 3 ? y - 3 : 3 - y) + (x > 3 ? x - 3 : 3 - x);
        const double want = d == 0 ? 4.0 : d == 1 ? 1.0 : 0.0;
        CHECK(s.ce.value()(y, x) == doctest::Approx(want).scale(1));
      }
    CHECK_FALSE(error_maps(ScalarField(2, 5), ScalarField(2, 5)).ce.has_value());
  }

  TEST_CASE("welch t-test") {
    const std::vector<double> a{1, 2, 3, 4, 5.5};
    const auto same = welch_ttest(a, a);
    CHECK(same.t == 0);
    CHECK(same.p == 1);

    const auto published = welch_ttest_from_summary(0.5445, 0.0197, 100, 0.4931, 0.0220, 100);
    CHECK(std::abs(std::log10(published.p) - std::log10(1.3e-41)) <= 1.0);
    CHECK(published.df > 0);
    CHECK_THROWS_AS(welch_ttest_from_summary(1, 0, 5, 2, 0, 5), DomainError);
    CHECK_THROWS_AS(welch_ttest_from_summary(1, 1, 1, 2, 1, 5), DomainError);

    std::mt19937_64 rng(15);
    std::normal_distribution<double> n1(0, 1), n2(0.4, 1.7);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> x(5 + rng() % 30), y(5 + rng() % 30);
      for (auto& v : x) v = n1(rng);
      for (auto& v : y) v = n2(rng);
      const auto r = welch_ttest(x, y);
      CHECK(r.p >= 0);
      CHECK(r.p <= 1);
      CHECK(std::abs(r.p - oracle::two_tailed_p(r.t, r.df)) <= 1e-9);

      auto ms = [](const std::vector<double>& v) {
        double m = 0, s = 0;
        for (double e : v) m += e / v.size();
        for (double e : v) s += (e - m) * (e - m);
        return std::pair{m, std::sqrt(s / (v.size() - 1))};
      };
      const auto [mx, sx] = ms(x);
      const auto [my, sy] = ms(y);
      CHECK(std::abs(welch_ttest_from_summary(mx, sx, x.size(), my, sy, y.size()).p - r.p) <= 1e-12);
    }
  }

  TEST_CASE("metric directions follow degradation") {
    const auto t = smooth_field(64, 64, 16);
    const auto noise = random_field(64, 64, 17, -1, 1);
    std::vector<std::vector<Value>> levels;
    for (double level : {0.0, 0.02, 0.05, 0.1}) {
      ScalarField p = t;
      for (std::size_t i = 0; i < p.size(); ++i) p.storage()[i] += level * noise.values()[i];
      levels.push_back(evaluate_pair(t, p));
    }
    const auto& cat = metric_catalog();
    REQUIRE(levels[0].size() == cat.size());
    for (std::size_t m = 0; m < cat.size(); ++m)
      for (std::size_t k = 1; k < levels.size(); ++k) {
        INFO(cat[m].name, " level ", k);
        REQUIRE(levels[k][m].has_value());
        if (cat[m].direction == Direction::Higher)
          CHECK(*levels[k][m] < *levels[k - 1][m]);
        else
          CHECK(*levels[k][m] > *levels[k - 1][m]);
      }
  }

  TEST_CASE("aggregation") {
    auto row = [](std::string id, std::vector<Value> v) { return ImageRow{id, "test", v}; };
    const auto r = aggregate_report({"a", "b"}, {row("0", {1.0, 5.0}), row("1", {2.0, std::nullopt}),
                                                 row("2", {3.0, std::nullopt})});
    CHECK(r.aggregates[0].mean == 2);
    CHECK(r.aggregates[0].std == 1);
    CHECK(r.aggregates[0].count == 3);
    CHECK(r.aggregates[1].mean == 5);
    CHECK(r.aggregates[1].std == 0);
    CHECK(r.aggregates[1].single);
    CHECK(r.aggregates[1].undefined == 2);
    CHECK(r.warnings.size() == 1);
    CHECK_THROWS_AS(aggregate_report({"a"}, {}), DomainError);
    CHECK_THROWS_AS(aggregate_report({"a"}, {row("0", {1.0, 2.0})}), DomainError);

    const auto back = report_from_json(report_to_json(r));
    CHECK(back.metrics == r.metrics);
    REQUIRE(back.rows.size() == 3);
    CHECK(back.rows[1].values[1] == std::nullopt);
    CHECK(back.rows[2].values[0] == 3.0);
    CHECK(back.aggregates[0].std == 1);
    CHECK_THROWS_AS(report_from_json("{not json"), DataError);
    const auto csv = report_to_csv(r);
    CHECK(csv.find("id,split,a,b") != std::string::npos);
    CHECK(metric_info("gmsd").direction == Direction::Lower);
    CHECK_THROWS_AS(metric_info("lpips"), DomainError);
  }
}
