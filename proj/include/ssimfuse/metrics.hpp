#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ssimfuse/checkpoint.hpp"
#include "ssimfuse/image_io.hpp"
#include "ssimfuse/loss.hpp"

namespace ssimfuse {

inline void require_same_size(const Image& a, const Image& b, const char* op) {
  if (a.height != b.height || a.width != b.width)
    throw ShapeError(std::string(op) + ": images differ in size (" + std::to_string(a.height) + "x" +
                     std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" + std::to_string(b.width) + ")");
}

/// Mean of the two source-to-fused SSIMs.
inline double q_ssim(const Image& i1, const Image& i2, const Image& f, const SSIMParams& p = SSIMParams::standard()) {
  require_same_size(i1, f, "q_ssim");
  require_same_size(i2, f, "q_ssim");
  const auto tf = f.to_tensor();
  return 0.5 * (ssim_value(i1.to_tensor(), tf, p) + ssim_value(i2.to_tensor(), tf, p));
}

/// Sigmoid constants of the gradient-based metric. Gamma is chosen so that a
/// perfectly preserved edge scores exactly 1.
struct QgParams {
  double kappa_g = -15;
  double sigma_g = 0.5;
  double kappa_a = -22;
  double sigma_a = 0.8;

  double gamma_g() const { return 1 + std::exp(kappa_g * (1 - sigma_g)); }
  double gamma_a() const { return 1 + std::exp(kappa_a * (1 - sigma_a)); }
};

struct SobelField {
  std::vector<double> strength;
  std::vector<double> angle;
};

namespace detail {

inline double clamp_at(const Image& img, std::ptrdiff_t y, std::ptrdiff_t x) {
  y = std::clamp<std::ptrdiff_t>(y, 0, std::ptrdiff_t(img.height) - 1);
  x = std::clamp<std::ptrdiff_t>(x, 0, std::ptrdiff_t(img.width) - 1);
  return img(std::size_t(y), std::size_t(x));
}

}  // namespace detail

/// 3x3 Sobel with replicated borders. Angle is atan(gy/gx), pi/2 where gx == 0.
inline SobelField sobel(const Image& img) {
  SobelField s{std::vector<double>(img.size()), std::vector<double>(img.size())};
  for (std::ptrdiff_t y = 0; y < std::ptrdiff_t(img.height); ++y)
    for (std::ptrdiff_t x = 0; x < std::ptrdiff_t(img.width); ++x) {
      auto p = [&](int dy, int dx) { return detail::clamp_at(img, y + dy, x + dx); };
      const double gx = (p(-1, 1) + 2 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2 * p(0, -1) + p(1, -1));
      const double gy = (p(1, -1) + 2 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2 * p(-1, 0) + p(-1, 1));
      const std::size_t i = std::size_t(y) * img.width + std::size_t(x);
      s.strength[i] = std::sqrt(gx * gx + gy * gy);
      s.angle[i] = gx == 0 ? std::numbers::pi / 2 : std::atan(gy / gx);
    }
  return s;
}

/// Per-pixel edge preservation of source `a` in fused `f`.
inline double edge_preservation(double ga, double aa, double gf, double af, const QgParams& q) {
  const double hi = std::max(ga, gf), lo = std::min(ga, gf);
  const double G = hi == 0 ? 1.0 : lo / hi;
  const double A = 1 - std::abs(aa - af) / (std::numbers::pi / 2);
  const double qg = q.gamma_g() / (1 + std::exp(q.kappa_g * (G - q.sigma_g)));
  const double qa = q.gamma_a() / (1 + std::exp(q.kappa_a * (A - q.sigma_a)));
  return qg * qa;
}

/// Edge-strength weighted preservation of both sources' edges, in [0,1].
/// Returns 0 when neither source has any edge.
inline double q_g(const Image& i1, const Image& i2, const Image& f, const QgParams& q = {}) {
  require_same_size(i1, f, "q_g");
  require_same_size(i2, f, "q_g");
  const SobelField s1 = sobel(i1), s2 = sobel(i2), sf = sobel(f);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double w1 = s1.strength[i], w2 = s2.strength[i];
    if (w1 > 0) num += w1 * edge_preservation(w1, s1.angle[i], sf.strength[i], sf.angle[i], q);
    if (w2 > 0) num += w2 * edge_preservation(w2, s2.angle[i], sf.strength[i], sf.angle[i], q);
    den += w1 + w2;
  }
  if (den == 0) return 0;
  return std::clamp(num / den, 0.0, 1.0);
}

struct PairMetrics {
  std::string pair_id;
  double q_ssim = 0;
  double q_g = 0;
  double fuse_ms = 0;
};

struct PairFailure {
  std::string pair_id;
  std::string tag;
  std::string message;
};

struct MetricReport {
  double lambda = 0;
  double omega = 0;
  std::vector<PairMetrics> pairs;
  std::vector<PairFailure> failures;
  double mean_q_ssim = 0;
  double mean_q_g = 0;
  double runtime_s = 0;

  void finalize() {
    mean_q_ssim = mean_q_g = 0;
    for (const auto& p : pairs) {
      mean_q_ssim += p.q_ssim;
      mean_q_g += p.q_g;
    }
    if (!pairs.empty()) {
      mean_q_ssim /= double(pairs.size());
      mean_q_g /= double(pairs.size());
    }
  }
};

/// Produces one pair on demand; throwing marks that pair as failed.
struct PairSource {
  std::string id;
  std::function<ImagePair()> load;
};

inline std::vector<PairSource> pair_sources(const std::vector<ImagePair>& pairs) {
  std::vector<PairSource> out;
  for (const auto& p : pairs) out.push_back({p.id, [&p] { return p; }});
  return out;
}

inline std::vector<PairSource> pair_sources(const std::vector<PairFiles>& files) {
  std::vector<PairSource> out;
  for (const auto& f : files) out.push_back({f.id, [f] { return load_pair(f.anatomical, f.functional); }});
  return out;
}

namespace detail {

inline std::string error_tag(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) return err->tag();
  return "internal";
}

}  // namespace detail

/// Fuses every pair with the checkpoint and scores it. Failing pairs are
/// recorded and skipped. Reported Q_SSIM is clamped to [0,1].
inline MetricReport evaluate_batch(const Checkpoint& ck, const std::vector<PairSource>& pairs, double lambda,
                                   double omega) {
  if (pairs.empty()) throw ArgumentError("evaluate: no pairs to evaluate");
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  MetricReport r;
  r.lambda = lambda;
  r.omega = omega;
  const SSIMParams sp = SSIMParams::from_config(ck.config);
  for (const auto& src : pairs) {
    try {
      const ImagePair pair = src.load();
      const auto t0 = clock::now();
      const Image f = fuse(ck.params, ck.config, pair);
      const double ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
      r.pairs.push_back({src.id, std::clamp(q_ssim(pair.anatomical, pair.functional, f, sp), 0.0, 1.0),
                         q_g(pair.anatomical, pair.functional, f), ms});
    } catch (const std::exception& e) {
      r.failures.push_back({src.id, detail::error_tag(e), e.what()});
    }
  }
  r.finalize();
  r.runtime_s = std::max(std::chrono::duration<double>(clock::now() - start).count(), 1e-9);
  return r;
}

/// "start:stop:step", a comma list, or a single value. Endpoints inclusive.
inline std::vector<double> parse_grid(const std::string& text) {
  auto num = [&](const std::string& s) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size() || !std::isfinite(v)) throw ArgumentError("bad grid value '" + s + "' in '" + text + "'");
    return v;
  };
  std::vector<std::string> parts;
  const char sep = text.find(':') != std::string::npos ? ':' : ',';
  std::stringstream ss(text);
  for (std::string tok; std::getline(ss, tok, sep);) parts.push_back(tok);
  std::vector<double> out;
  if (sep == ':') {
    if (parts.size() != 3) throw ArgumentError("grid '" + text + "' must be start:stop:step");
    const double a = num(parts[0]), b = num(parts[1]), step = num(parts[2]);
    if (!(step > 0) || b < a) throw ArgumentError("grid '" + text + "' needs step > 0 and stop >= start");
    const auto n = std::size_t(std::floor((b - a) / step + 1e-9)) + 1;
    for (std::size_t k = 0; k < n; ++k) out.push_back(std::round((a + double(k) * step) * 1e12) / 1e12);
  } else {
    for (const auto& p : parts) out.push_back(num(p));
  }
  if (out.empty()) throw ArgumentError("empty grid '" + text + "'");
  return out;
}

inline std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

/// Replaces every "{lambda}" in a checkpoint path template.
inline std::string expand_checkpoint_path(std::string path, double lambda) {
  const std::string key = "{lambda}";
  for (std::size_t pos; (pos = path.find(key)) != std::string::npos;) path.replace(pos, key.size(), format_value(lambda));
  return path;
}

/// One report per (lambda, omega) cell. `checkpoint_template` may contain
/// "{lambda}"; each distinct resolved path is loaded and fused once and the
/// result shared by every cell that maps to it.
inline std::vector<MetricReport> evaluate_grid(
    const std::string& checkpoint_template, const std::vector<PairSource>& pairs, const std::vector<double>& lambdas,
    const std::vector<double>& omegas,
    const std::function<Checkpoint(const std::string&)>& load = [](const std::string& p) { return load_checkpoint(p); }) {
  if (lambdas.empty() || omegas.empty()) throw ArgumentError("evaluate: empty lambda or omega grid");
  if (pairs.empty()) throw ArgumentError("evaluate: no pairs to evaluate");
  std::map<std::string, MetricReport> cache;
  std::vector<MetricReport> cells;
  for (double lambda : lambdas) {
    const std::string path = expand_checkpoint_path(checkpoint_template, lambda);
    auto it = cache.find(path);
    if (it == cache.end()) it = cache.emplace(path, evaluate_batch(load(path), pairs, lambda, omegas.front())).first;
    for (double omega : omegas) {
      MetricReport cell = it->second;
      cell.lambda = lambda;
      cell.omega = omega;
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

inline constexpr const char* kReportCsvHeader = "lambda,omega,pair_id,q_ssim,q_g,fuse_ms";

/// One row per cell holding the means; pair_id is "mean".
inline void write_report_csv(std::ostream& os, const std::vector<MetricReport>& cells) {
  os << kReportCsvHeader << '\n' << std::setprecision(10);
  for (const auto& c : cells) {
    double ms = 0;
    for (const auto& p : c.pairs) ms += p.fuse_ms;
    if (!c.pairs.empty()) ms /= double(c.pairs.size());
    os << format_value(c.lambda) << ',' << format_value(c.omega) << ",mean," << c.mean_q_ssim << ',' << c.mean_q_g
       << ',' << ms << '\n';
  }
}

inline void write_pairs_csv(std::ostream& os, const std::vector<MetricReport>& cells) {
  os << kReportCsvHeader << '\n' << std::setprecision(10);
  for (const auto& c : cells)
    for (const auto& p : c.pairs)
      os << format_value(c.lambda) << ',' << format_value(c.omega) << ',' << p.pair_id << ',' << p.q_ssim << ','
         << p.q_g << ',' << p.fuse_ms << '\n';
}

inline void print_report_table(std::ostream& os, const std::vector<MetricReport>& cells) {
  os << std::left << std::setw(8) << "lambda" << std::setw(8) << "omega" << std::setw(8) << "pairs" << std::setw(8)
     << "failed" << std::setw(10) << "q_ssim" << std::setw(10) << "q_g" << "runtime_s\n";
  os << std::fixed;
  for (const auto& c : cells)
    os << std::setw(8) << format_value(c.lambda) << std::setw(8) << format_value(c.omega) << std::setw(8)
       << c.pairs.size() << std::setw(8) << c.failures.size() << std::setprecision(4) << std::setw(10)
       << c.mean_q_ssim << std::setw(10) << c.mean_q_g << std::setprecision(3) << c.runtime_s << '\n';
  os.unsetf(std::ios::fixed);
}

}  // namespace ssimfuse
