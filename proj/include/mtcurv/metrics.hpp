#pragma once

// Full-reference metrics between a ground-truth map T and a prediction P,
// the DE / RSE / CE error maps, Welch's t-test and per-dataset reports.
//
// Metrics that are undefined for a pair (e.g. R^2 on a constant truth map)
// come back as std::nullopt and are excluded from aggregates, never coerced.

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mtcurv/field.hpp"

namespace mtcurv::metrics {

using Value = std::optional<double>;

enum class NrmseNorm { Mean, Range };

struct PixelMetrics {
  double rmse = 0, mae = 0, smape = 0, psnr = 0;
  Value nrmse;
};

/// psnr uses peak 1 and is capped at kPsnrCap when rmse < 1e-5.
inline constexpr double kPsnrCap = 99.0;
PixelMetrics pixel_metrics(const ScalarField& truth, const ScalarField& pred,
                           NrmseNorm norm = NrmseNorm::Mean);

struct StatisticalMetrics {
  Value pearson, spearman, r2, evs;
};

StatisticalMetrics statistical_metrics(const ScalarField& truth, const ScalarField& pred);

/// Building blocks, exposed for tests. Undefined when either side is constant.
Value pearson(std::span<const double> a, std::span<const double> b);
Value spearman(std::span<const double> a, std::span<const double> b);
/// 1-based average ranks; ties share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> values);

/// dot / (|T| |P|); 1 when both are zero, 0 when exactly one is.
double cosine_similarity(const ScalarField& truth, const ScalarField& pred);

/// Multi-scale SSIM, 11x11 Gaussian window (sigma 1.5), K1 0.01, K2 0.03,
/// L 1, 2x2 average downsampling. Scales that would shrink the image below
/// the window are dropped and the remaining weights renormalised. Needs at
/// least 11x11.
double ms_ssim(const ScalarField& truth, const ScalarField& pred);
inline constexpr double kMsSsimWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
std::size_t ms_ssim_scales(std::size_t height, std::size_t width);

/// Gradient magnitude similarity deviation: 2x2 average downsampling,
/// Prewitt gradients, c = 0.0026, population std of the similarity map.
double gmsd(const ScalarField& truth, const ScalarField& pred);
inline constexpr double kGmsdC = 0.0026;

struct ErrorMaps {
  ScalarField de;                 // T - P
  ScalarField rse;                // |T - P|
  std::optional<ScalarField> ce;  // |lap(P) - lap(T)|, absent below 3x3
};

ErrorMaps error_maps(const ScalarField& truth, const ScalarField& pred);

struct WelchResult {
  double t = 0;
  double df = 0;
  double p = 1;
};

WelchResult welch_ttest_from_summary(double m1, double s1, double n1, double m2, double s2,
                                     double n2);
WelchResult welch_ttest(std::span<const double> a, std::span<const double> b);
/// Two-tailed p of Student's t via the regularised incomplete beta.
double student_t_two_tailed(double t, double df);

// ---------------------------------------------------------------------------
// Reports

enum class Direction { Higher, Lower };

struct MetricInfo {
  std::string name;
  Direction direction;
  std::string range;
};

/// Every implemented metric, in report column order.
const std::vector<MetricInfo>& metric_catalog();
const MetricInfo& metric_info(std::string_view name);

/// All catalogue metrics for one pair, in catalogue order.
std::vector<Value> evaluate_pair(const ScalarField& truth, const ScalarField& pred);

struct ImageRow {
  std::string id;
  std::string split;
  std::vector<Value> values;  // aligned with MetricReport::metrics
};

struct Aggregate {
  double mean = 0;
  double std = 0;  // n - 1 denominator; 0 when count == 1
  std::size_t count = 0;
  std::size_t undefined = 0;
  bool single = false;
};

struct MetricReport {
  std::vector<std::string> metrics;
  std::vector<ImageRow> rows;
  std::vector<Aggregate> aggregates;  // aligned with metrics
  std::vector<std::string> warnings;

  std::optional<std::size_t> column(std::string_view name) const;
  /// Defined per-image values of one metric, in row order.
  std::vector<double> defined_values(std::size_t column) const;
};

/// Mean and sample std per metric over the defined values, folded in row
/// order.
MetricReport aggregate_report(std::vector<std::string> metrics, std::vector<ImageRow> rows);

std::string report_to_json(const MetricReport& report);
MetricReport report_from_json(std::string_view text, const std::string& source = "report");
std::string report_to_csv(const MetricReport& report);
/// Aggregate table with direction arrows and nominal ranges.
std::string format_report_table(const MetricReport& report);

}  // namespace mtcurv::metrics
