#include "mtcurv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include <boost/math/special_functions/beta.hpp>
#include "json.hpp"

#include "mtcurv/geometry.hpp"
#include "mtcurv/kernels.hpp"

namespace mtcurv::metrics {

namespace {

void require_pair(const ScalarField& t, const ScalarField& p, const char* what) {
  if (t.empty() || p.empty()) throw DomainError(std::string(what) + ": empty map");
  if (!t.same_shape(p))
    throw DomainError(std::string(what) + ": shape mismatch " + std::to_string(t.height()) + "x" +
                      std::to_string(t.width()) + " vs " + std::to_string(p.height()) + "x" +
                      std::to_string(p.width()));
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

bool is_constant(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
}

// Population variance, two-pass; exactly 0 for a constant input.
double variance_of(std::span<const double> v) {
  if (v.empty() || is_constant(v)) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size());
}

}  // namespace

PixelMetrics pixel_metrics(const ScalarField& truth, const ScalarField& pred, NrmseNorm norm) {
  require_pair(truth, pred, "pixel_metrics");
  auto t = truth.values();
  auto p = pred.values();
  const double n = static_cast<double>(t.size());
  double se = 0.0, ae = 0.0, sm = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double d = t[i] - p[i];
    se += d * d;
    ae += std::abs(d);
    const double denom = std::abs(t[i]) + std::abs(p[i]);
    if (denom > 0.0) sm += 2.0 * std::abs(d) / denom;
  }
  PixelMetrics m;
  m.rmse = std::sqrt(se / n);
  m.mae = ae / n;
  m.smape = 100.0 * sm / n;
  m.psnr = m.rmse < 1e-5 ? kPsnrCap : std::min(kPsnrCap, 20.0 * std::log10(1.0 / m.rmse));
  double scale = 0.0;
  if (norm == NrmseNorm::Mean) {
    scale = mean_of(t);
  } else {
    auto [lo, hi] = std::minmax_element(t.begin(), t.end());
    scale = *hi - *lo;
  }
  if (scale != 0.0) m.nrmse = m.rmse / scale;
  return m;
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

Value pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2 || is_constant(a) || is_constant(b))
    return std::nullopt;
  const double ma = mean_of(a), mb = mean_of(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

Value spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) return std::nullopt;
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  return pearson(ra, rb);
}

StatisticalMetrics statistical_metrics(const ScalarField& truth, const ScalarField& pred) {
  require_pair(truth, pred, "statistical_metrics");
  auto t = truth.values();
  auto p = pred.values();
  StatisticalMetrics m;
  if (t.size() < 2) return m;
  m.pearson = pearson(t, p);
  m.spearman = spearman(t, p);
  const double vt = variance_of(t);
  if (vt > 0.0) {
    const double mt = mean_of(t);
    double ss_res = 0.0, ss_tot = 0.0;
    std::vector<double> resid(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      resid[i] = t[i] - p[i];
      ss_res += resid[i] * resid[i];
      ss_tot += (t[i] - mt) * (t[i] - mt);
    }
    m.r2 = 1.0 - ss_res / ss_tot;
    m.evs = 1.0 - variance_of(resid) / vt;
  }
  return m;
}

double cosine_similarity(const ScalarField& truth, const ScalarField& pred) {
  require_pair(truth, pred, "cosine_similarity");
  auto t = truth.values();
  auto p = pred.values();
  double dot = 0.0, tt = 0.0, pp = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    dot += t[i] * p[i];
    tt += t[i] * t[i];
    pp += p[i] * p[i];
  }
  if (tt == 0.0 && pp == 0.0) return 1.0;
  if (tt == 0.0 || pp == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(tt) * std::sqrt(pp)), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// MS-SSIM

namespace {

constexpr std::size_t kWindow = 11;

std::vector<double> gaussian_taps() {
  std::vector<double> g(kWindow);
  double s = 0.0;
  for (std::size_t i = 0; i < kWindow; ++i) {
    const double x = static_cast<double>(i) - 5.0;
    g[i] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
    s += g[i];
  }
  for (double& v : g) v /= s;
  return g;
}

struct Plane {
  std::size_t h, w;
  std::vector<double> v;
};

Plane downsample2(const Plane& in) {
  Plane out{in.h / 2, in.w / 2, {}};
  out.v.resize(out.h * out.w);
  for (std::size_t i = 0; i < out.h; ++i)
    for (std::size_t j = 0; j < out.w; ++j)
      out.v[i * out.w + j] = 0.25 * (in.v[(2 * i) * in.w + 2 * j] + in.v[(2 * i) * in.w + 2 * j + 1] +
                                     in.v[(2 * i + 1) * in.w + 2 * j] +
                                     in.v[(2 * i + 1) * in.w + 2 * j + 1]);
  return out;
}

// Mean luminance term and mean contrast-structure term at one scale.
std::pair<double, double> ssim_terms(const Plane& x, const Plane& y) {
  static const std::vector<double> taps = gaussian_taps();
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const std::size_t oh = x.h - kWindow + 1, ow = x.w - kWindow + 1, n = oh * ow;
  std::vector<double> xx(x.v.size()), yy(x.v.size()), xy(x.v.size());
  for (std::size_t i = 0; i < x.v.size(); ++i) {
    xx[i] = x.v[i] * x.v[i];
    yy[i] = y.v[i] * y.v[i];
    xy[i] = x.v[i] * y.v[i];
  }
  std::vector<double> mx(n), my(n), sxx(n), syy(n), sxy(n);
  using kernels::Border;
  kernels::separable_filter(x.h, x.w, x.v, taps, Border::Valid, mx);
  kernels::separable_filter(x.h, x.w, y.v, taps, Border::Valid, my);
  kernels::separable_filter(x.h, x.w, xx, taps, Border::Valid, sxx);
  kernels::separable_filter(x.h, x.w, yy, taps, Border::Valid, syy);
  kernels::separable_filter(x.h, x.w, xy, taps, Border::Valid, sxy);
  double ssim = 0.0, cs = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double vx = sxx[i] - mx[i] * mx[i];
    const double vy = syy[i] - my[i] * my[i];
    const double cxy = sxy[i] - mx[i] * my[i];
    const double csi = (2.0 * cxy + c2) / (vx + vy + c2);
    const double li = (2.0 * mx[i] * my[i] + c1) / (mx[i] * mx[i] + my[i] * my[i] + c1);
    cs += csi;
    ssim += li * csi;
  }
  return {ssim / static_cast<double>(n), cs / static_cast<double>(n)};
}

}  // namespace

std::size_t ms_ssim_scales(std::size_t height, std::size_t width) {
  std::size_t side = std::min(height, width), scales = 0;
  while (scales < 5 && side >= kWindow) {
    ++scales;
    side /= 2;
  }
  return scales;
}

double ms_ssim(const ScalarField& truth, const ScalarField& pred) {
  require_pair(truth, pred, "ms_ssim");
  const std::size_t scales = ms_ssim_scales(truth.height(), truth.width());
  if (scales == 0) throw DomainError("ms_ssim: maps must be at least 11x11");
  double wsum = 0.0;
  for (std::size_t s = 0; s < scales; ++s) wsum += kMsSsimWeights[s];
  Plane x{truth.height(), truth.width(), {truth.values().begin(), truth.values().end()}};
  Plane y{pred.height(), pred.width(), {pred.values().begin(), pred.values().end()}};
  double result = 1.0;
  for (std::size_t s = 0; s < scales; ++s) {
    const auto [ssim, cs] = ssim_terms(x, y);
    const double w = kMsSsimWeights[s] / wsum;
    const double term = s + 1 == scales ? ssim : cs;
    result *= std::pow(std::max(term, 0.0), w);
    if (s + 1 < scales) {
      x = downsample2(x);
      y = downsample2(y);
    }
  }
  return std::clamp(result, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// GMSD

namespace {

std::vector<double> prewitt_magnitude(const Plane& f) {
  auto at = [&](long long i, long long j) {
    if (i < 0 || j < 0 || i >= static_cast<long long>(f.h) || j >= static_cast<long long>(f.w))
      return 0.0;
    return f.v[static_cast<std::size_t>(i) * f.w + static_cast<std::size_t>(j)];
  };
  std::vector<double> g(f.v.size());
  for (long long i = 0; i < static_cast<long long>(f.h); ++i)
    for (long long j = 0; j < static_cast<long long>(f.w); ++j) {
      double gx = 0.0, gy = 0.0;
      for (long long d = -1; d <= 1; ++d) {
        gx += at(i + d, j - 1) - at(i + d, j + 1);
        gy += at(i - 1, j + d) - at(i + 1, j + d);
      }
      gx /= 3.0;
      gy /= 3.0;
      g[static_cast<std::size_t>(i) * f.w + static_cast<std::size_t>(j)] = std::sqrt(gx * gx + gy * gy);
    }
  return g;
}

}  // namespace

double gmsd(const ScalarField& truth, const ScalarField& pred) {
  require_pair(truth, pred, "gmsd");
  Plane x{truth.height(), truth.width(), {truth.values().begin(), truth.values().end()}};
  Plane y{pred.height(), pred.width(), {pred.values().begin(), pred.values().end()}};
  if (x.h >= 2 && x.w >= 2) {
    x = downsample2(x);
    y = downsample2(y);
  }
  const auto gx = prewitt_magnitude(x);
  const auto gy = prewitt_magnitude(y);
  std::vector<double> gms(gx.size());
  for (std::size_t i = 0; i < gms.size(); ++i)
    gms[i] = gx[i] == gy[i] ? 1.0
                            : (2.0 * gx[i] * gy[i] + kGmsdC) / (gx[i] * gx[i] + gy[i] * gy[i] + kGmsdC);
  return std::sqrt(variance_of(gms));
}

// ---------------------------------------------------------------------------

ErrorMaps error_maps(const ScalarField& truth, const ScalarField& pred) {
  require_pair(truth, pred, "error_maps");
  ErrorMaps m{ScalarField(truth.height(), truth.width()), ScalarField(truth.height(), truth.width()),
              std::nullopt};
  auto t = truth.values();
  auto p = pred.values();
  for (std::size_t i = 0; i < t.size(); ++i) {
    m.de.values()[i] = t[i] - p[i];
    m.rse.values()[i] = std::abs(t[i] - p[i]);
  }
  if (truth.height() >= 3 && truth.width() >= 3) {
    const auto lt = geometry::laplacian(truth);
    const auto lp = geometry::laplacian(pred);
    ScalarField ce(truth.height(), truth.width());
    for (std::size_t i = 0; i < t.size(); ++i)
      ce.values()[i] = std::abs(lp.values()[i] - lt.values()[i]);
    m.ce = std::move(ce);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Welch

double student_t_two_tailed(double t, double df) {
  if (!(df > 0.0)) throw DomainError("student_t_two_tailed: df must be > 0");
  if (std::isinf(t)) return 0.0;
  if (t == 0.0) return 1.0;
  const double x = df / (df + t * t);
  return std::clamp(boost::math::ibeta(0.5 * df, 0.5, x), 0.0, 1.0);
}

WelchResult welch_ttest_from_summary(double m1, double s1, double n1, double m2, double s2,
                                     double n2) {
  if (n1 < 2 || n2 < 2) throw DomainError("welch_ttest: each sample needs n >= 2");
  if (s1 < 0 || s2 < 0) throw DomainError("welch_ttest: standard deviations must be >= 0");
  const double a = s1 * s1 / n1, b = s2 * s2 / n2;
  if (a + b == 0.0) throw DomainError("welch_ttest: both samples have zero variance");
  WelchResult r;
  r.t = (m1 - m2) / std::sqrt(a + b);
  r.df = (a + b) * (a + b) / (a * a / (n1 - 1) + b * b / (n2 - 1));
  r.p = student_t_two_tailed(r.t, r.df);
  return r;
}

namespace {
std::pair<double, double> mean_std(std::span<const double> v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size() - 1))};
}
}  // namespace

WelchResult welch_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw DomainError("welch_ttest: each sample needs n >= 2");
  const auto [m1, s1] = mean_std(a);
  const auto [m2, s2] = mean_std(b);
  return welch_ttest_from_summary(m1, s1, static_cast<double>(a.size()), m2, s2,
                                  static_cast<double>(b.size()));
}

// ---------------------------------------------------------------------------
// Reports

const std::vector<MetricInfo>& metric_catalog() {
  static const std::vector<MetricInfo> catalog{
      {"rmse", Direction::Lower, "[0 inf)"},      {"nrmse", Direction::Lower, "[0 inf)"},
      {"mae", Direction::Lower, "[0 inf)"},       {"smape", Direction::Lower, "[0 200]"},
      {"psnr", Direction::Higher, "[0 99]"},      {"pearson", Direction::Higher, "[-1 1]"},
      {"spearman", Direction::Higher, "[-1 1]"},  {"r2", Direction::Higher, "(-inf 1]"},
      {"evs", Direction::Higher, "(-inf 1]"},     {"cosine", Direction::Higher, "[-1 1]"},
      {"ms_ssim", Direction::Higher, "[0 1]"},    {"gmsd", Direction::Lower, "[0 inf)"},
  };
  return catalog;
}

const MetricInfo& metric_info(std::string_view name) {
  for (const auto& m : metric_catalog())
    if (m.name == name) return m;
  throw DomainError("unknown metric '" + std::string(name) + "'");
}

std::vector<Value> evaluate_pair(const ScalarField& truth, const ScalarField& pred) {
  const auto px = pixel_metrics(truth, pred);
  const auto st = statistical_metrics(truth, pred);
  Value ssim;
  if (ms_ssim_scales(truth.height(), truth.width()) > 0) ssim = ms_ssim(truth, pred);
  return {px.rmse,     px.nrmse, px.mae, px.smape,
          px.psnr,     st.pearson, st.spearman, st.r2,
          st.evs,      cosine_similarity(truth, pred), ssim, gmsd(truth, pred)};
}

std::optional<std::size_t> MetricReport::column(std::string_view name) const {
  for (std::size_t i = 0; i < metrics.size(); ++i)
    if (metrics[i] == name) return i;
  return std::nullopt;
}

std::vector<double> MetricReport::defined_values(std::size_t col) const {
  std::vector<double> out;
  for (const auto& r : rows)
    if (col < r.values.size() && r.values[col]) out.push_back(*r.values[col]);
  return out;
}

MetricReport aggregate_report(std::vector<std::string> metrics, std::vector<ImageRow> rows) {
  if (rows.empty()) throw DomainError("aggregate_report: no rows");
  MetricReport rep;
  rep.metrics = std::move(metrics);
  rep.rows = std::move(rows);
  for (const auto& r : rep.rows)
    if (r.values.size() != rep.metrics.size())
      throw DomainError("aggregate_report: row '" + r.id + "' has " +
                        std::to_string(r.values.size()) + " values for " +
                        std::to_string(rep.metrics.size()) + " metrics");
  for (std::size_t c = 0; c < rep.metrics.size(); ++c) {
    const auto v = rep.defined_values(c);
    Aggregate a;
    a.count = v.size();
    a.undefined = rep.rows.size() - v.size();
    if (!v.empty()) {
      a.mean = mean_of(v);
      if (v.size() == 1) {
        a.single = true;
      } else {
        a.std = mean_std(v).second;
      }
    }
    if (a.undefined > 0)
      rep.warnings.push_back(rep.metrics[c] + " undefined for " + std::to_string(a.undefined) +
                             " of " + std::to_string(rep.rows.size()) +
                             " images; excluded from aggregate");
    rep.aggregates.push_back(a);
  }
  return rep;
}

std::string report_to_json(const MetricReport& report) {
  using nlohmann::json;
  json j;
  j["format_version"] = 1;
  json meta = json::array();
  for (const auto& name : report.metrics) {
    json m{{"name", name}};
    for (const auto& info : metric_catalog())
      if (info.name == name) {
        m["direction"] = info.direction == Direction::Higher ? "higher" : "lower";
        m["range"] = info.range;
      }
    meta.push_back(m);
  }
  j["metrics"] = meta;
  json rows = json::array();
  for (const auto& r : report.rows) {
    json values = json::object();
    for (std::size_t c = 0; c < report.metrics.size(); ++c)
      values[report.metrics[c]] = r.values[c] ? json(*r.values[c]) : json(nullptr);
    rows.push_back({{"id", r.id}, {"split", r.split}, {"values", values}});
  }
  j["rows"] = rows;
  json agg = json::object();
  for (std::size_t c = 0; c < report.metrics.size(); ++c) {
    const auto& a = report.aggregates[c];
    agg[report.metrics[c]] = {{"mean", a.count ? json(a.mean) : json(nullptr)},
                              {"std", a.count ? json(a.std) : json(nullptr)},
                              {"count", a.count},
                              {"undefined", a.undefined},
                              {"single", a.single}};
  }
  j["aggregate"] = agg;
  j["warnings"] = report.warnings;
  return j.dump(2) + "\n";
}

MetricReport report_from_json(std::string_view text, const std::string& source) {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(text);
    std::vector<std::string> names;
    for (const auto& m : j.at("metrics")) names.push_back(m.at("name").get<std::string>());
    std::vector<ImageRow> rows;
    for (const auto& r : j.at("rows")) {
      ImageRow row{r.at("id").get<std::string>(), r.value("split", std::string{}), {}};
      const auto& vals = r.at("values");
      for (const auto& n : names) {
        const auto it = vals.find(n);
        row.values.push_back(it == vals.end() || it->is_null() ? Value{} : Value{it->get<double>()});
      }
      rows.push_back(std::move(row));
    }
    return aggregate_report(std::move(names), std::move(rows));
  } catch (const json::exception& e) {
    throw DataError(source, std::string("malformed report: ") + e.what());
  } catch (const DomainError& e) {
    throw DataError(source, e.what());
  }
}

namespace {
std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

std::string report_to_csv(const MetricReport& report) {
  std::ostringstream out;
  out << "id,split";
  for (const auto& m : report.metrics) out << ',' << m;
  out << '\n';
  for (const auto& r : report.rows) {
    out << r.id << ',' << r.split;
    for (const auto& v : r.values) out << ',' << (v ? num(*v) : "");
    out << '\n';
  }
  out << '\n';
  for (const char* stat : {"mean", "std", "count"}) {
    out << stat << ',';
    for (const auto& a : report.aggregates) {
      out << ',';
      if (std::string_view(stat) == "count") out << a.count;
      else if (a.count) out << num(std::string_view(stat) == "mean" ? a.mean : a.std);
    }
    out << '\n';
  }
  return out.str();
}

std::string format_report_table(const MetricReport& report) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-10s %-4s %-9s %14s   %-12s %s\n", "metric", "dir", "range",
                "mean", "std", "n");
  out << line;
  for (std::size_t c = 0; c < report.metrics.size(); ++c) {
    const auto& a = report.aggregates[c];
    std::string dir = "?", range = "";
    for (const auto& info : metric_catalog())
      if (info.name == report.metrics[c]) {
        dir = info.direction == Direction::Higher ? "↑" : "↓";
        range = info.range;
      }
    if (a.count == 0) {
      std::snprintf(line, sizeof line, "%-10s %-6s %-9s %14s   %-12s %zu\n",
                    report.metrics[c].c_str(), dir.c_str(), range.c_str(), "undefined", "", a.count);
    } else {
      std::snprintf(line, sizeof line, "%-10s %-6s %-9s %14.6g ± %-12.6g %zu%s\n",
                    report.metrics[c].c_str(), dir.c_str(), range.c_str(), a.mean, a.std, a.count,
                    a.single ? " (n=1)" : "");
    }
    out << line;
  }
  for (const auto& w : report.warnings) out << "warning: " << w << '\n';
  return out.str();
}

}  // namespace mtcurv::metrics
