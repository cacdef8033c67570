#include "mtcurv/synthsim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <numbers>

#include "mtcurv/config.hpp"
#include "mtcurv/io.hpp"
#include "mtcurv/kernels.hpp"

namespace mtcurv::synthsim {

namespace fs = std::filesystem;

std::string_view variant_name(Variant v) { return v == Variant::Simple ? "simple" : "complex"; }

Variant parse_variant(std::string_view name) {
  if (name == "simple") return Variant::Simple;
  if (name == "complex") return Variant::Complex;
  throw DomainError("unknown variant '" + std::string(name) + "' (expected simple or complex)");
}

void GenConfig::set_variant(Variant v) {
  variant = v;
  background_level = v == Variant::Simple ? kSimpleBackground : kComplexBackground;
}

void GenConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) throw DomainError(std::string(name) + " must be > 0");
  };
  if (height == 0 || width == 0) throw DomainError("image_size must be positive");
  if (aster_count == 0) throw DomainError("aster_count must be >= 1");
  if (filaments_min == 0 || filaments_min > filaments_max)
    throw DomainError("filaments_per_aster range must satisfy 1 <= min <= max");
  positive(step_length, "step_length");
  positive(persistence_length, "persistence_length");
  positive(length_min, "filament_length min");
  if (length_min > length_max) throw DomainError("filament_length range must satisfy min <= max");
  positive(kappa_max, "kappa_max");
  positive(psf_sigma, "psf_sigma");
  positive(tip_decay_lambda, "tip_decay_lambda");
  if (!(background_level >= 0.0 && background_level < 1.0))
    throw DomainError("background_level must be in [0, 1)");
  if (!(photon_scale >= 0.0)) throw DomainError("photon_scale must be >= 0");
  if (!(read_noise_sigma >= 0.0)) throw DomainError("read_noise_sigma must be >= 0");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finaliser
  std::uint64_t z = seed + stream * 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t sample_seed(std::uint64_t seed, std::size_t index) {
  return seed ^ static_cast<std::uint64_t>(index);
}

double max_turn_angle(double step_length, double kappa_max) {
  // Equal steps l turning by phi: kappa = 2 sin(phi / 2) / l.
  const double s = kappa_max * step_length / 2.0;
  return s >= 1.0 ? std::numbers::pi : 2.0 * std::asin(s);
}

Polyline grow_filament(Rng& rng, const GenConfig& config, Point origin, double direction) {
  if (!(origin.x >= -0.5 && origin.y >= -0.5 && origin.x <= config.width - 0.5 &&
        origin.y <= config.height - 0.5))
    throw DomainError("grow_filament: origin outside the image");
  const double step = config.step_length;
  const double sigma = std::sqrt(step / config.persistence_length);
  const double limit = max_turn_angle(step, config.kappa_max) * (1.0 - 1e-9);
  std::uniform_real_distribution<double> length_dist(config.length_min, config.length_max);
  std::normal_distribution<double> turn_dist(0.0, sigma > 0.0 ? sigma : 1.0);
  const double target = length_dist(rng);

  auto outside = [&](Point p) {
    return p.x < -0.5 - kOutsideMargin || p.y < -0.5 - kOutsideMargin ||
           p.x > config.width - 0.5 + kOutsideMargin || p.y > config.height - 0.5 + kOutsideMargin;
  };

  std::vector<Point> pts{origin};
  double theta = direction, grown = 0.0;
  while (pts.size() < 3 || (grown < target && !outside(pts.back()))) {
    pts.push_back(pts.back() + step * Point{std::cos(theta), std::sin(theta)});
    grown += step;
    if (sigma == 0.0) continue;
    double turn = turn_dist(rng);
    for (int tries = 0; std::abs(turn) > limit && tries < 10; ++tries) turn = turn_dist(rng);
    theta += std::clamp(turn, -limit, limit);
  }
  std::uniform_real_distribution<double> amp(0.7, 1.0);
  std::vector<double> weights(pts.size(), amp(rng));
  return Polyline(std::move(pts), std::move(weights));
}

std::vector<Polyline> grow_asters(Rng& rng, const GenConfig& config) {
  std::vector<Polyline> out;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> count(config.filaments_min, config.filaments_max);
  for (std::size_t a = 0; a < config.aster_count; ++a) {
    const Point centre{(0.25 + 0.5 * unit(rng)) * (config.width - 1.0),
                       (0.25 + 0.5 * unit(rng)) * (config.height - 1.0)};
    const std::size_t n = count(rng);
    for (std::size_t f = 0; f < n; ++f) {
      const double r = 3.0 * unit(rng), phi = 2.0 * std::numbers::pi * unit(rng);
      Point origin = centre + r * Point{std::cos(phi), std::sin(phi)};
      origin.x = std::clamp(origin.x, 0.0, config.width - 1.0);
      origin.y = std::clamp(origin.y, 0.0, config.height - 1.0);
      out.push_back(grow_filament(rng, config, origin, 2.0 * std::numbers::pi * unit(rng)));
    }
  }
  return out;
}

double amplitude_at(const GenConfig& config, double weight, double arc_length) {
  if (config.variant == Variant::Complex)
    return weight * std::exp(-arc_length / config.tip_decay_lambda);
  return weight;
}

namespace {

constexpr double kDrawStep = 0.25;
constexpr double kRasterStep = 0.1;

void splat(Field<double>& canvas, double x, double y, double amount) {
  const double fx = std::floor(x), fy = std::floor(y);
  const double tx = x - fx, ty = y - fy;
  const long long j0 = static_cast<long long>(fx), i0 = static_cast<long long>(fy);
  const double w[2][2] = {{(1 - ty) * (1 - tx), (1 - ty) * tx}, {ty * (1 - tx), ty * tx}};
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      const long long i = i0 + a, j = j0 + b;
      if (i < 0 || j < 0 || i >= static_cast<long long>(canvas.height()) ||
          j >= static_cast<long long>(canvas.width()))
        continue;
      canvas(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) += amount * w[a][b];
    }
}

std::vector<double> gaussian_taps(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double sum = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    taps[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
    sum += taps[k + radius];
  }
  for (double& t : taps) t /= sum;
  return taps;
}

}  // namespace

Field<double> draw_lines(const std::vector<Polyline>& filaments, const GenConfig& config) {
  Field<double> canvas(config.height, config.width, 0.0);
  // A 1-px line blurred by the PSF peaks at gain / (sqrt(2 pi) sigma); the
  // gain makes an isolated filament peak at its amplitude.
  const double gain = std::sqrt(2.0 * std::numbers::pi) * config.psf_sigma;
  for (const auto& line : filaments) {
    const auto arc = line.arc_lengths();
    for (std::size_t k = 0; k + 1 < line.size(); ++k) {
      const Point a = line[k], b = line[k + 1];
      const double len = arc[k + 1] - arc[k];
      const auto n = static_cast<std::size_t>(std::max(1.0, std::ceil(len / kDrawStep)));
      for (std::size_t s = 0; s < n; ++s) {
        const double t = (s + 0.5) / static_cast<double>(n);
        const Point p = a + t * (b - a);
        const double w = line.weights()[k] + t * (line.weights()[k + 1] - line.weights()[k]);
        const double amp = amplitude_at(config, w, arc[k] + t * len);
        splat(canvas, p.x, p.y, gain * amp * len / static_cast<double>(n));
      }
    }
  }
  return canvas;
}

Micrograph render_image(const std::vector<Polyline>& filaments, const GenConfig& config, Rng& rng) {
  config.validate();
  const Field<double> lines = draw_lines(filaments, config);
  std::vector<double> blurred(lines.size());
  kernels::separable_filter(config.height, config.width, lines.values(),
                            gaussian_taps(config.psf_sigma), kernels::Border::Zero, blurred);
  std::normal_distribution<double> read(0.0, config.read_noise_sigma > 0 ? config.read_noise_sigma : 1.0);
  Micrograph image(config.height, config.width);
  auto out = image.values();
  for (std::size_t i = 0; i < blurred.size(); ++i) {
    double v = std::max(0.0, blurred[i] + config.background_level);
    if (config.photon_scale > 0.0) {
      std::poisson_distribution<long long> shot(v * config.photon_scale);
      v = v > 0.0 ? static_cast<double>(shot(rng)) / config.photon_scale : 0.0;
    }
    if (config.read_noise_sigma > 0.0) v += read(rng);
    out[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return image;
}

CurvatureMap render_curvature_map(const std::vector<Polyline>& filaments, const GenConfig& config) {
  CurvatureMap map(config.height, config.width, 0.0f);
  for (const auto& line : filaments) {
    const auto kappa = geometry::polyline_curvatures(line);
    const auto arc = line.arc_lengths();
    for (std::size_t k = 0; k + 1 < line.size(); ++k) {
      const Point a = line[k], b = line[k + 1];
      const auto n = static_cast<std::size_t>(
          std::max(1.0, std::ceil((arc[k + 1] - arc[k]) / kRasterStep)));
      for (std::size_t s = 0; s <= n; ++s) {
        const double t = static_cast<double>(s) / static_cast<double>(n);
        const Point p = a + t * (b - a);
        const long long i = std::lround(p.y), j = std::lround(p.x);
        if (i < 0 || j < 0 || i >= static_cast<long long>(config.height) ||
            j >= static_cast<long long>(config.width))
          continue;
        const double kv = kappa[t < 0.5 ? k : k + 1];
        const auto value = static_cast<float>(std::min(kv / config.kappa_max, 1.0));
        float& px = map(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
        px = std::max(px, value);
      }
    }
  }
  return map;
}

std::vector<Polyline> sample_filaments(const GenConfig& config, std::size_t index) {
  config.validate();
  Rng geo(derive_seed(sample_seed(config.seed, index), kGeometryStream));
  return grow_asters(geo, config);
}

SamplePair generate_sample(const GenConfig& config, std::size_t index) {
  const auto filaments = sample_filaments(config, index);
  Rng noise(derive_seed(sample_seed(config.seed, index), kNoiseStream));
  SamplePair s;
  s.image = render_image(filaments, config, noise);
  s.target = render_curvature_map(filaments, config);
  s.index = index;
  s.seed = sample_seed(config.seed, index);
  return s;
}

std::string image_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img_%05zu.png", index);
  return buf;
}

std::string target_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "curv_%05zu.mtcv", index);
  return buf;
}

Manifest generate_dataset(const GenConfig& config, std::size_t count, const fs::path& out_dir) {
  config.validate();
  if (count == 0) throw DomainError("count must be >= 1");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir))
    throw DataError(out_dir.string(), "cannot create output directory");

  Manifest m;
  m.config = config;
  m.files.resize(count);
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (long long i = 0; i < static_cast<long long>(count); ++i) {
    try {
      const auto idx = static_cast<std::size_t>(i);
      const SamplePair s = generate_sample(config, idx);
      io::write_png16(out_dir / image_file_name(idx), s.image);
      io::write_mtcv(out_dir / target_file_name(idx), s.target);
      m.files[idx] = {image_file_name(idx), target_file_name(idx), s.seed};
    } catch (...) {
#pragma omp critical(mtcurv_gen_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  io::write_text(out_dir / "manifest.json", manifest_to_json(m));
  return m;
}

std::string manifest_to_json(const Manifest& m) {
  nlohmann::json j;
  j["format_version"] = m.format_version;
  j["variant"] = variant_name(m.config.variant);
  j["seed"] = m.config.seed;
  j["count"] = m.files.size();
  j["image_size"] = {m.config.height, m.config.width};
  j["synthetic"] = m.synthetic;
  j["config"] = config::to_json(m.config);
  nlohmann::json files = nlohmann::json::array();
  for (const auto& f : m.files)
    files.push_back({{"image", f.image}, {"target", f.target}, {"seed", f.seed}});
  j["files"] = files;
  return j.dump(2) + "\n";
}

Manifest manifest_from_json(std::string_view text, const std::string& source) {
  Manifest m;
  try {
    const auto j = nlohmann::json::parse(text);
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != 1)
      throw DataError(source, "unsupported manifest format_version " +
                                  std::to_string(m.format_version));
    m.synthetic = j.value("synthetic", true);
    if (j.contains("config")) m.config = config::gen_config_from_json(j.at("config"));
    for (const auto& f : j.at("files"))
      m.files.push_back({f.at("image").get<std::string>(), f.at("target").get<std::string>(),
                         f.value("seed", std::uint64_t{0})});
    if (j.contains("count") && j.at("count").get<std::size_t>() != m.files.size())
      throw DataError(source, "manifest count does not match its file list");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(source, std::string("malformed manifest: ") + e.what());
  } catch (const DomainError& e) {
    throw DataError(source, std::string("invalid manifest config: ") + e.what());
  }
  if (m.files.empty()) throw DataError(source, "manifest lists no files");
  return m;
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw DataError(manifest_path.string(), "manifest not found");
  Dataset d;
  d.root = dir;
  d.manifest = manifest_from_json(io::read_text(manifest_path), manifest_path.string());
  d.samples.resize(d.manifest.files.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (long long i = 0; i < static_cast<long long>(d.samples.size()); ++i) {
    try {
      const auto idx = static_cast<std::size_t>(i);
      const auto& f = d.manifest.files[idx];
      SamplePair& s = d.samples[idx];
      s.image = io::read_png16(dir / f.image);
      s.target = io::read_mtcv(dir / f.target);
      s.index = idx;
      s.seed = f.seed;
      if (!s.image.same_shape(s.target))
        throw DataError((dir / f.target).string(), "target size does not match its image");
    } catch (...) {
#pragma omp critical(mtcurv_load_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return d;
}

}  // namespace mtcurv::synthsim
