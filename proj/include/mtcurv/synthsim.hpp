#pragma once

// Synthetic aster micrographs with pixel-wise curvature ground truth.
//
// Filaments grow as a discrete worm-like chain from each aster centre. The
// image is an anti-aliased line drawing blurred by a Gaussian PSF with
// Poisson-Gaussian camera noise; the target is the 1-px centreline carrying
// min(kappa / kappa_max, 1). Geometry and noise use separate RNG streams
// derived from the per-sample seed, so the simple and complex variants of
// the same seed share their filaments.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "mtcurv/field.hpp"
#include "mtcurv/geometry.hpp"

namespace mtcurv::synthsim {

using geometry::Point;
using geometry::Polyline;

enum class Variant { Simple, Complex };
std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);

struct GenConfig {
  Variant variant = Variant::Simple;
  std::size_t height = 256;
  std::size_t width = 256;
  std::size_t aster_count = 1;
  std::size_t filaments_min = 20;
  std::size_t filaments_max = 50;
  double step_length = 2.0;
  double persistence_length = 500.0;
  double length_min = 40.0;
  double length_max = 120.0;
  double kappa_max = 0.1;
  double psf_sigma = 1.5;
  double tip_decay_lambda = 60.0;
  double background_level = 0.05;  // set_variant() picks 0.05 / 0.12
  double photon_scale = 200.0;     // 0 disables shot noise
  double read_noise_sigma = 0.01;  // 0 disables read noise
  double pixel_size_um = 0.0;      // metadata only, never applied
  std::uint64_t seed = 0;

  /// Switches variant and its default background level.
  void set_variant(Variant v);
  void validate() const;
  bool operator==(const GenConfig&) const = default;
};

inline constexpr double kSimpleBackground = 0.05;
inline constexpr double kComplexBackground = 0.12;
/// Filaments stop once they are this far outside the frame.
inline constexpr double kOutsideMargin = 5.0;

using Rng = std::mt19937_64;

/// Independent 64-bit stream seeds from one per-sample seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);
inline constexpr std::uint64_t kGeometryStream = 1;
inline constexpr std::uint64_t kNoiseStream = 2;

/// Discrete worm-like chain: advance step_length, then turn by
/// N(0, sqrt(step / L_p)). Turns that would push the vertex curvature above
/// kappa_max are redrawn up to 10 times, then clamped.
Polyline grow_filament(Rng& rng, const GenConfig& config, Point origin, double direction);

/// Maximum turning angle between consecutive equal-length steps that keeps
/// the Menger curvature at or below kappa_max.
double max_turn_angle(double step_length, double kappa_max);

std::vector<Polyline> grow_asters(Rng& rng, const GenConfig& config);

/// Per-unit-length amplitude of a filament sample: vertex weight, times the
/// tip decay in the complex variant.
double amplitude_at(const GenConfig& config, double weight, double arc_length);

/// Noise-free line drawing before PSF, background and noise.
Field<double> draw_lines(const std::vector<Polyline>& filaments, const GenConfig& config);
Micrograph render_image(const std::vector<Polyline>& filaments, const GenConfig& config, Rng& rng);
CurvatureMap render_curvature_map(const std::vector<Polyline>& filaments, const GenConfig& config);

struct SamplePair {
  Micrograph image;
  CurvatureMap target;
  std::size_t index = 0;
  std::uint64_t seed = 0;
};

/// seed XOR index
std::uint64_t sample_seed(std::uint64_t seed, std::size_t index);
SamplePair generate_sample(const GenConfig& config, std::size_t index);
/// Geometry only, for tests that need the underlying filaments.
std::vector<Polyline> sample_filaments(const GenConfig& config, std::size_t index);

struct ManifestEntry {
  std::string image;
  std::string target;
  std::uint64_t seed = 0;
};

struct Manifest {
  int format_version = 1;
  GenConfig config;
  bool synthetic = true;
  std::vector<ManifestEntry> files;
};

std::string image_file_name(std::size_t index);
std::string target_file_name(std::size_t index);

/// Writes `count` pairs plus manifest.json; byte-identical for a fixed config.
Manifest generate_dataset(const GenConfig& config, std::size_t count,
                          const std::filesystem::path& out_dir);

std::string manifest_to_json(const Manifest& m);
Manifest manifest_from_json(std::string_view text, const std::string& source);

struct Dataset {
  std::filesystem::path root;
  Manifest manifest;
  std::vector<SamplePair> samples;
  std::size_t size() const { return samples.size(); }
};

/// Reads manifest.json and every listed pair; images and targets must agree
/// in size. Works for any directory with a manifest, synthetic or not.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace mtcurv::synthsim
