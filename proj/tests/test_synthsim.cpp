#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "mtcurv/io.hpp"
#include "mtcurv/synthsim.hpp"
#include "test_util.hpp"

using namespace mtcurv;
using namespace mtcurv::synthsim;
using geometry::Point;

namespace {

GenConfig quiet(std::size_t size = 64) {
  GenConfig c;
  c.height = c.width = size;
  c.photon_scale = 0;
  c.read_noise_sigma = 0;
  return c;
}

double segment_distance(Point p, Point a, Point b) {
  const Point ab = b - a, ap = p - a;
  const double t = std::clamp((ap.x * ab.x + ap.y * ab.y) / (ab.x * ab.x + ab.y * ab.y), 0.0, 1.0);
  return std::hypot(p.x - (a.x + t * ab.x), p.y - (a.y + t * ab.y));
}

std::vector<double> turn_angles(const Polyline& l) {
  std::vector<double> out;
  for (std::size_t k = 1; k + 1 < l.size(); ++k) {
    const Point u = l[k] - l[k - 1], v = l[k + 1] - l[k];
    out.push_back(std::atan2(u.x * v.y - u.y * v.x, u.x * v.x + u.y * v.y));
  }
  return out;
}

}  // namespace

TEST_SUITE("synthsim") {
  TEST_CASE("stiff filament is a straight ray") {
    GenConfig c;
    c.persistence_length = INFINITY;
    Rng rng(4);
    const double dir = 0.7;
    const Point o{128, 128};
    const auto l = grow_filament(rng, c, o, dir);
    REQUIRE(l.size() >= 3);
    for (std::size_t k = 0; k < l.size(); ++k) {
      const Point d = l[k] - o;
      CHECK(std::abs(-std::sin(dir) * d.x + std::cos(dir) * d.y) <= 1e-6);
    }
  }

  TEST_CASE("per-step angle std matches the chain model") {
    GenConfig c;
    Rng rng(12);
    std::uniform_real_distribution<double> ang(0, 2 * M_PI);
    double s2 = 0;
    std::size_t n = 0;
    for (int f = 0; f < 10000; ++f)
      for (double a : turn_angles(grow_filament(rng, c, {128, 128}, ang(rng)))) {
        s2 += a * a;
        ++n;
      }
    const double expected = std::sqrt(c.step_length / c.persistence_length);
    CHECK(std::abs(std::sqrt(s2 / n) / expected - 1.0) <= 0.05);
  }

  TEST_CASE("curvature stays below kappa_max") {
    GenConfig c;
    c.persistence_length = 20;  // forces resampling and clamping
    Rng rng(3);
    for (int f = 0; f < 200; ++f)
      for (double k : geometry::polyline_curvatures(grow_filament(rng, c, {128, 128}, 0.1 * f)))
        CHECK(k <= c.kappa_max * (1 + 1e-9));
  }

  TEST_CASE("growth is deterministic") {
    GenConfig c;
    Rng a(99), b(99);
    CHECK(grow_filament(a, c, {10, 20}, 1.0) == grow_filament(b, c, {10, 20}, 1.0));
  }

  TEST_CASE("empty image is the background level") {
    auto c = quiet();
    Rng rng(1);
    const auto img = render_image({}, c, rng);
    for (float v : img.values()) CHECK(v == doctest::Approx(0.05f));
  }

  TEST_CASE("line profile is the PSF") {
    auto c = quiet();
    c.background_level = 0;
    const Polyline line({{4, 32}, {60, 32}});
    Rng rng(1);
    const auto img = render_image({line}, c, rng);
    std::vector<double> prof;
    for (std::size_t i = 24; i <= 40; ++i) prof.push_back(img(i, 32));
    // Least-squares fit of a * exp(-(y - 8)^2 / (2 s^2)); a is closed-form per s.
    double best_s = 0, best_err = INFINITY;
    for (double s = 0.5; s <= 4.0; s += 0.001) {
      double num = 0, den = 0;
      for (std::size_t k = 0; k < prof.size(); ++k) {
        const double g = std::exp(-std::pow(k - 8.0, 2) / (2 * s * s));
        num += g * prof[k];
        den += g * g;
      }
      const double a = num / den;
      double err = 0;
      for (std::size_t k = 0; k < prof.size(); ++k)
        err += std::pow(prof[k] - a * std::exp(-std::pow(k - 8.0, 2) / (2 * s * s)), 2);
      if (err < best_err) best_err = err, best_s = s;
    }
    CHECK(std::abs(best_s / c.psf_sigma - 1.0) <= 0.1);
  }

  TEST_CASE("noise follows the seed") {
    GenConfig c;
    c.height = c.width = 32;
    const auto f = sample_filaments(c, 0);
    Rng a(5), b(5), d(6);
    const auto ia = render_image(f, c, a), ib = render_image(f, c, b), id = render_image(f, c, d);
    CHECK(ia == ib);
    CHECK_FALSE(ia == id);
  }

  TEST_CASE("curvature map examples") {
    auto c = quiet();
    const auto flat = render_curvature_map({Polyline({{5, 5}, {30, 20}, {55, 35}})}, c);
    for (float v : flat.values()) CHECK(v == 0.0f);

    std::vector<Point> arc;
    const double dt = 2 * std::asin(1.0 / 20.0);
    for (int k = 0; k * dt < M_PI; ++k) arc.push_back({32 + 20 * std::cos(k * dt), 32 + 20 * std::sin(k * dt)});
    const auto m = render_curvature_map({Polyline(arc)}, c);
    std::size_t on = 0;
    for (float v : m.values())
      if (v > 0) {
        ++on;
        CHECK(std::abs(v - 0.5) <= 0.03 * 0.5);
      }
    CHECK(on > 40);

    c.kappa_max = 0.01;
    const auto capped = render_curvature_map({Polyline(arc)}, c);
    for (float v : capped.values()) CHECK((v == 0.0f || v == 1.0f));
  }

  TEST_CASE("dataset files and determinism") {
    test::TempDir a, b;
    GenConfig c;
    c.height = c.width = 32;
    c.seed = 7;
    generate_dataset(c, 3, a.path);
    generate_dataset(c, 3, b.path);
    std::size_t n = 0;
    for (const auto& e : std::filesystem::directory_iterator(a.path)) {
      ++n;
      CHECK(io::read_bytes(e.path()) == io::read_bytes(b.path / e.path().filename()));
    }
    CHECK(n == 7);
    const auto ds = load_dataset(a.path);
    CHECK(ds.size() == 3);
    CHECK(ds.manifest.config == c);
    CHECK(ds.samples[2].seed == (7u ^ 2u));
    const auto direct = generate_sample(c, 2);
    CHECK(ds.samples[2].target == direct.target);
  }

  TEST_CASE("variants share geometry, complex tips are dimmer") {
    GenConfig s;
    s.height = s.width = 128;
    GenConfig x = s;
    x.set_variant(Variant::Complex);
    CHECK(x.background_level == kComplexBackground);
    CHECK(sample_filaments(s, 4) == sample_filaments(x, 4));

    const Polyline line({{10, 64}, {50, 64}, {110, 64}});
    const auto ds = draw_lines({line}, s), dx = draw_lines({line}, x);
    for (std::size_t j : {20u, 60u, 90u}) {
      const double ratio = dx(64, j) / ds(64, j);
      CHECK(std::abs(ratio / std::exp(-(j - 10.0) / x.tip_decay_lambda) - 1.0) <= 0.05);
    }
  }

  TEST_CASE("complex tips are dimmer than roots") {
    GenConfig c;
    c.set_variant(Variant::Complex);
    std::size_t total = 0, dimmer = 0;
    for (std::size_t i = 0; i < 20; ++i)
      for (const auto& l : sample_filaments(c, i)) {
        const auto arc = l.arc_lengths();
        const double len = arc.back();
        double root = 0, tip = 0;
        int nr = 0, nt = 0;
        for (std::size_t k = 0; k < l.size(); ++k) {
          const double a = amplitude_at(c, l.weights()[k], arc[k]);
          if (arc[k] <= 0.1 * len) root += a, ++nr;
          if (arc[k] >= 0.9 * len) tip += a, ++nt;
        }
        ++total;
        dimmer += tip / nt < root / nr;
      }
    CHECK(dimmer >= 0.99 * total);
  }

  TEST_CASE("dataset-level properties") {
    GenConfig c;
    c.height = c.width = 64;
    double lo = 1, hi = 0;
    for (std::size_t i = 0; i < 100; ++i) {
      const auto s = generate_sample(c, i);
      const auto f = sample_filaments(c, i);
      double mean = 0;
      for (float v : s.image.values()) mean += v;
      CHECK(mean / s.image.size() > c.background_level);
      for (std::size_t r = 0; r < 64; ++r)
        for (std::size_t q = 0; q < 64; ++q) {
          const float v = s.target(r, q);
          if (v <= 0) continue;
          lo = std::min<double>(lo, v);
          hi = std::max<double>(hi, v);
          if (i < 5) {
            double d = INFINITY;
            for (const auto& l : f)
              for (std::size_t k = 0; k + 1 < l.size(); ++k)
                d = std::min(d, segment_distance({double(q), double(r)}, l[k], l[k + 1]));
            CHECK(d <= std::sqrt(2.0));
          }
        }
    }
    CHECK(lo <= 0.05);
    CHECK(hi >= 0.95);
  }

  TEST_CASE("config validation") {
    GenConfig c;
    c.kappa_max = 0;
    CHECK_THROWS_AS(c.validate(), DomainError);
    c = {};
    c.background_level = 1.0;
    CHECK_THROWS_AS(c.validate(), DomainError);
    CHECK_THROWS_AS(parse_variant("bogus"), DomainError);
  }
}
