#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <json.hpp>

#include "mlnood/error.hpp"
#include "mlnood/io.hpp"
#include "mlnood/optimize.hpp"

namespace mlnood {

enum class Family { Gev, Uniform, Normal, GeneralizedNormal, Lognormal, None };

inline std::string_view family_name(Family f) {
  switch (f) {
    case Family::Gev: return "gev";
    case Family::Uniform: return "uniform";
    case Family::Normal: return "normal";
    case Family::GeneralizedNormal: return "generalized_normal";
    case Family::Lognormal: return "lognormal";
    case Family::None: return "none";
  }
  return "?";
}

// Accepts the canonical names plus the short CLI alias "gennorm".
inline Family parse_family(std::string_view s) {
  if (s == "gev") return Family::Gev;
  if (s == "uniform") return Family::Uniform;
  if (s == "normal") return Family::Normal;
  if (s == "generalized_normal" || s == "gennorm") return Family::GeneralizedNormal;
  if (s == "lognormal") return Family::Lognormal;
  if (s == "none") return Family::None;
  throw DataError("unknown distribution family '" + std::string(s) + "'");
}

// Below this |shape| the GEV is evaluated through its Gumbel limit.
inline constexpr double kGumbelSwitch = 1e-6;
inline constexpr double kMaxGevShape = 0.5;
inline constexpr std::size_t kMinParametricSamples = 20;

// A fitted score law used to normalize detector scores through its survival
// function P(S >= s). Scale-type parameters are strictly positive.
class ScoreDistribution {
 public:
  static ScoreDistribution gev(double location, double scale, double shape) {
    require_positive(scale, "gev scale");
    return {Family::Gev, {location, scale, shape}};
  }
  static ScoreDistribution uniform(double a, double b) {
    if (!(a < b)) throw DataError("uniform requires a < b");
    return {Family::Uniform, {a, b, 0.0}};
  }
  static ScoreDistribution normal(double mu, double sigma) {
    require_positive(sigma, "normal sigma");
    return {Family::Normal, {mu, sigma, 0.0}};
  }
  static ScoreDistribution generalized_normal(double mu, double alpha, double beta) {
    require_positive(alpha, "generalized_normal alpha");
    require_positive(beta, "generalized_normal beta");
    return {Family::GeneralizedNormal, {mu, alpha, beta}};
  }
  static ScoreDistribution lognormal(double log_mean, double log_sd) {
    require_positive(log_sd, "lognormal log_sd");
    return {Family::Lognormal, {log_mean, log_sd, 0.0}};
  }
  static ScoreDistribution none() { return {Family::None, {0.0, 0.0, 0.0}}; }

  Family family() const noexcept { return family_; }
  // Parameters in the order listed by param_names().
  std::span<const double> params() const noexcept {
    return std::span<const double>(p_).first(param_names(family_).size());
  }

  static std::vector<std::string_view> param_names(Family f) {
    switch (f) {
      case Family::Gev: return {"location", "scale", "shape"};
      case Family::Uniform: return {"a", "b"};
      case Family::Normal: return {"mu", "sigma"};
      case Family::GeneralizedNormal: return {"mu", "alpha", "beta"};
      case Family::Lognormal: return {"log_mean", "log_sd"};
      case Family::None: return {};
    }
    return {};
  }

  double cdf(double s) const {
    if (family_ == Family::None) return 0.0;
    return clamp01(1.0 - survival_raw(s));
  }

  // P(S >= s), clamped to [0, 1]. The `none` family returns 1 everywhere.
  double survival(double s) const {
    if (std::isnan(s)) return std::numeric_limits<double>::quiet_NaN();
    return clamp01(survival_raw(s));
  }

  double log_pdf(double s) const {
    const double ninf = -std::numeric_limits<double>::infinity();
    switch (family_) {
      case Family::Gev: {
        const double mu = p_[0], sigma = p_[1], xi = p_[2];
        const double y = (s - mu) / sigma;
        if (std::abs(xi) < kGumbelSwitch) return -std::log(sigma) - y - std::exp(-y);
        const double t = 1.0 + xi * y;
        if (!(t > 0.0)) return ninf;
        const double lt = std::log(t);
        return -std::log(sigma) - (1.0 + 1.0 / xi) * lt - std::exp(-lt / xi);
      }
      case Family::Uniform:
        return (s >= p_[0] && s <= p_[1]) ? -std::log(p_[1] - p_[0]) : ninf;
      case Family::Normal: {
        const double z = (s - p_[0]) / p_[1];
        return -0.5 * z * z - std::log(p_[1]) - 0.5 * std::log(2.0 * std::numbers::pi);
      }
      case Family::GeneralizedNormal: {
        const double mu = p_[0], alpha = p_[1], beta = p_[2];
        return std::log(beta) - std::log(2.0 * alpha) - std::lgamma(1.0 / beta) -
               std::pow(std::abs(s - mu) / alpha, beta);
      }
      case Family::Lognormal: {
        if (!(s > 0.0)) return ninf;
        const double z = (std::log(s) - p_[0]) / p_[1];
        return -0.5 * z * z - std::log(p_[1]) - std::log(s) - 0.5 * std::log(2.0 * std::numbers::pi);
      }
      case Family::None:
        return std::numeric_limits<double>::quiet_NaN();
    }
    return ninf;
  }

  // Inverse CDF for p in (0, 1). Not defined for `none`.
  double quantile(double p) const {
    if (!(p > 0.0 && p < 1.0)) throw DataError("quantile requires p in (0, 1)");
    switch (family_) {
      case Family::Gev: {
        const double mu = p_[0], sigma = p_[1], xi = p_[2];
        const double l = -std::log(p);
        if (std::abs(xi) < kGumbelSwitch) return mu - sigma * std::log(l);
        return mu + sigma * (std::pow(l, -xi) - 1.0) / xi;
      }
      case Family::Uniform:
        return p_[0] + p * (p_[1] - p_[0]);
      case Family::Normal:
        return p_[0] - p_[1] * std::sqrt(2.0) * boost::math::erfc_inv(2.0 * p);
      case Family::GeneralizedNormal: {
        const double mu = p_[0], alpha = p_[1], beta = p_[2];
        const double q = std::abs(2.0 * p - 1.0);
        const double r = alpha * std::pow(boost::math::gamma_p_inv(1.0 / beta, q), 1.0 / beta);
        return p < 0.5 ? mu - r : mu + r;
      }
      case Family::Lognormal:
        return std::exp(p_[0] - p_[1] * std::sqrt(2.0) * boost::math::erfc_inv(2.0 * p));
      case Family::None:
        break;
    }
    throw DataError("the 'none' family has no quantile function");
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json params = nlohmann::ordered_json::object();
    const auto names = param_names(family_);
    for (std::size_t i = 0; i < names.size(); ++i) params[std::string(names[i])] = p_[i];
    return {{"family", std::string(family_name(family_))}, {"params", params}};
  }

  static ScoreDistribution from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("family") || !j["family"].is_string())
      throw DataError("distribution: missing 'family'");
    const Family f = parse_family(j["family"].get<std::string>());
    const auto names = param_names(f);
    std::array<double, 3> p{};
    for (std::size_t i = 0; i < names.size(); ++i) {
      const std::string key(names[i]);
      if (!j.contains("params") || !j["params"].contains(key) || !j["params"][key].is_number())
        throw DataError("distribution: missing numeric parameter '" + key + "'");
      p[i] = j["params"][key].get<double>();
    }
    switch (f) {
      case Family::Gev: return gev(p[0], p[1], p[2]);
      case Family::Uniform: return uniform(p[0], p[1]);
      case Family::Normal: return normal(p[0], p[1]);
      case Family::GeneralizedNormal: return generalized_normal(p[0], p[1], p[2]);
      case Family::Lognormal: return lognormal(p[0], p[1]);
      case Family::None: return none();
    }
    return none();
  }

  static ScoreDistribution parse(std::string_view text) {
    try {
      return from_json(nlohmann::json::parse(text));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("distribution: malformed JSON: ") + e.what());
    }
  }

 private:
  ScoreDistribution(Family f, std::array<double, 3> p) : family_(f), p_(p) {}

  static void require_positive(double v, const char* what) {
    if (!(v > 0.0) || !std::isfinite(v)) throw DataError(std::string(what) + " must be finite and > 0");
  }
  static double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

  double survival_raw(double s) const {
    switch (family_) {
      case Family::Gev: {
        const double mu = p_[0], sigma = p_[1], xi = p_[2];
        const double y = (s - mu) / sigma;
        if (std::abs(xi) < kGumbelSwitch) return -std::expm1(-std::exp(-y));
        const double t = 1.0 + xi * y;
        if (!(t > 0.0)) return xi > 0.0 ? 1.0 : 0.0;  // below / above the support
        return -std::expm1(-std::pow(t, -1.0 / xi));
      }
      case Family::Uniform:
        return (p_[1] - s) / (p_[1] - p_[0]);
      case Family::Normal:
        return 0.5 * std::erfc((s - p_[0]) / (p_[1] * std::sqrt(2.0)));
      case Family::GeneralizedNormal: {
        const double mu = p_[0], alpha = p_[1], beta = p_[2];
        const double u = std::pow(std::abs(s - mu) / alpha, beta);
        if (s >= mu) return 0.5 * boost::math::gamma_q(1.0 / beta, u);
        return 1.0 - 0.5 * boost::math::gamma_q(1.0 / beta, u);
      }
      case Family::Lognormal:
        if (!(s > 0.0)) return 1.0;
        return 0.5 * std::erfc((std::log(s) - p_[0]) / (p_[1] * std::sqrt(2.0)));
      case Family::None:
        return 1.0;
    }
    return 1.0;
  }

  Family family_;
  std::array<double, 3> p_;
};

inline double survival(const ScoreDistribution& d, double s) { return d.survival(s); }

// ---------------------------------------------------------------------------
// Maximum-likelihood fitting
// ---------------------------------------------------------------------------

namespace detail {

inline double mean_of(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

// Probability-weighted-moment GEV estimate, shape clamped to the MLE box.
inline std::array<double, 3> gev_pwm(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double b0 = 0.0, b1 = 0.0, b2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double j = static_cast<double>(i);
    b0 += x[i];
    b1 += j / (n - 1.0) * x[i];
    b2 += j * (j - 1.0) / ((n - 1.0) * (n - 2.0)) * x[i];
  }
  b0 /= n, b1 /= n, b2 /= n;
  const double c = (2.0 * b1 - b0) / (3.0 * b2 - b0) - std::log(2.0) / std::log(3.0);
  double k = 7.8590 * c + 2.9554 * c * c;  // k = -shape
  k = std::clamp(k, -0.45, 0.45);
  double sigma, mu;
  if (std::abs(k) < 1e-6) {
    sigma = (2.0 * b1 - b0) / std::log(2.0);
    mu = b0 - 0.5772156649015329 * sigma;
  } else {
    const double g = std::tgamma(1.0 + k);
    sigma = (2.0 * b1 - b0) * k / (g * (1.0 - std::pow(2.0, -k)));
    mu = b0 + sigma * (g - 1.0) / k;
  }
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    const double m = mean_of(x);
    double v = 0.0;
    for (double xi : x) v += (xi - m) * (xi - m);
    sigma = std::sqrt(6.0 * v / n) / std::numbers::pi;
    mu = m - 0.5772156649015329 * sigma;
    k = 0.0;
  }
  return {mu, sigma, -k};
}

inline double gev_mean_nll(std::span<const double> x, double mu, double sigma, double xi) {
  if (!(sigma > 0.0)) return std::numeric_limits<double>::infinity();
  const auto d = ScoreDistribution::gev(mu, sigma, xi);
  double s = 0.0;
  for (double v : x) {
    const double lp = d.log_pdf(v);
    if (!std::isfinite(lp)) return std::numeric_limits<double>::infinity();
    s -= lp;
  }
  return s / static_cast<double>(x.size());
}

inline ScoreDistribution fit_gev(std::span<const double> x) {
  const auto init = gev_pwm(std::vector<double>(x.begin(), x.end()));
  auto shape_of = [](double t) { return std::clamp(t, -kMaxGevShape, kMaxGevShape); };
  auto objective = [&](std::span<const double> th) {
    return gev_mean_nll(x, th[0], std::exp(th[1]), shape_of(th[2]));
  };
  std::vector<double> theta{init[0], std::log(init[1]), init[2]};
  // A PWM start can sit just outside the support of an extreme sample;
  // widen the scale until the likelihood is finite.
  for (int i = 0; i < 60 && !std::isfinite(objective(theta)); ++i) theta[1] += 0.1;
  if (!std::isfinite(objective(theta))) theta[2] = 0.0;
  if (!std::isfinite(objective(theta)))
    throw NumericalError("gev fit: no finite-likelihood starting point");

  const std::array<double, 3> step{0.1 * init[1], 0.1, 0.05};
  optimize::NelderMeadResult res;
  // Restart from the incumbent until two consecutive runs agree.
  for (int restart = 0; restart < 8; ++restart) {
    res = optimize::nelder_mead(objective, theta, step, 4000, 1e-13, 1e-9);
    const bool same = std::abs(res.x[0] - theta[0]) < 1e-8 && std::abs(res.x[1] - theta[1]) < 1e-8 &&
                      std::abs(res.x[2] - theta[2]) < 1e-8;
    theta = res.x;
    if (res.converged && same) break;
  }
  if (!res.converged || !std::isfinite(res.value)) {
    std::ostringstream msg;
    msg << "gev fit did not converge after " << res.iterations << " iterations (location=" << theta[0]
        << ", scale=" << std::exp(theta[1]) << ", shape=" << shape_of(theta[2]) << ", mean nll=" << res.value << ")";
    throw NumericalError(msg.str());
  }
  return ScoreDistribution::gev(theta[0], std::exp(theta[1]), shape_of(theta[2]));
}

// Profile: for fixed β the MLE of α is closed form given μ, and μ minimizes
// Σ|x-μ|^β.
struct GenNormProfile {
  double mu, alpha, loglik;
};

inline GenNormProfile gennorm_profile(std::span<const double> x, double beta, double lo, double hi) {
  auto abs_moment = [&](double mu) {
    double s = 0.0;
    for (double v : x) s += std::pow(std::abs(v - mu), beta);
    return s;
  };
  const double mu = optimize::golden_section(abs_moment, lo, hi, 1e-9);
  const double n = static_cast<double>(x.size());
  const double alpha = std::pow(beta / n * abs_moment(mu), 1.0 / beta);
  const double ll = n * (std::log(beta) - std::log(2.0 * alpha) - std::lgamma(1.0 / beta)) - n / beta;
  return {mu, alpha, ll};
}

inline ScoreDistribution fit_generalized_normal(std::span<const double> x) {
  const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
  const double lo = *lo_it, hi = *hi_it;
  constexpr std::size_t kGrid = 41;
  const double log_lo = std::log(0.2), log_hi = std::log(20.0);
  std::vector<double> grid(kGrid);
  for (std::size_t i = 0; i < kGrid; ++i) grid[i] = log_lo + (log_hi - log_lo) * static_cast<double>(i) / (kGrid - 1);
  std::size_t best = 0;
  double best_ll = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < kGrid; ++i) {
    const double ll = gennorm_profile(x, std::exp(grid[i]), lo, hi).loglik;
    if (ll > best_ll) best_ll = ll, best = i;
  }
  const double a = grid[best == 0 ? 0 : best - 1], b = grid[std::min(best + 1, kGrid - 1)];
  const double log_beta =
      optimize::golden_section([&](double t) { return -gennorm_profile(x, std::exp(t), lo, hi).loglik; }, a, b, 1e-8);
  const double beta = std::exp(log_beta);
  const auto prof = gennorm_profile(x, beta, lo, hi);
  if (!std::isfinite(prof.loglik) || !(prof.alpha > 0.0))
    throw NumericalError("generalized_normal fit produced a non-finite likelihood");
  return ScoreDistribution::generalized_normal(prof.mu, prof.alpha, beta);
}

}  // namespace detail

// Maximum-likelihood fit of `family` to ID scores. Uniform uses the sample
// range; `none` always succeeds.
inline ScoreDistribution fit_distribution(std::span<const double> scores, Family family) {
  if (family == Family::None) return ScoreDistribution::none();
  for (double s : scores)
    if (!std::isfinite(s)) throw DataError("scores must be finite");
  if (family == Family::Uniform) {
    if (scores.size() < 2) throw DataError("uniform fit needs at least 2 samples");
    const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
    if (!(*lo < *hi)) throw DataError("uniform fit: zero variance in scores");
    return ScoreDistribution::uniform(*lo, *hi);
  }
  if (scores.size() < kMinParametricSamples)
    throw DataError(std::string(family_name(family)) + " fit needs at least " +
                    std::to_string(kMinParametricSamples) + " samples, got " + std::to_string(scores.size()));
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  if (!(*lo < *hi)) throw DataError(std::string(family_name(family)) + " fit: zero variance in scores");

  const double n = static_cast<double>(scores.size());
  switch (family) {
    case Family::Normal: {
      const double m = detail::mean_of(scores);
      double v = 0.0;
      for (double s : scores) v += (s - m) * (s - m);
      return ScoreDistribution::normal(m, std::sqrt(v / n));
    }
    case Family::Lognormal: {
      if (!(*lo > 0.0)) throw DataError("lognormal fit requires strictly positive scores");
      std::vector<double> logs(scores.size());
      std::transform(scores.begin(), scores.end(), logs.begin(), [](double s) { return std::log(s); });
      const double m = detail::mean_of(logs);
      double v = 0.0;
      for (double s : logs) v += (s - m) * (s - m);
      if (!(v > 0.0)) throw DataError("lognormal fit: zero variance in log scores");
      return ScoreDistribution::lognormal(m, std::sqrt(v / n));
    }
    case Family::Gev:
      return detail::fit_gev(scores);
    case Family::GeneralizedNormal:
      return detail::fit_generalized_normal(scores);
    default:
      break;
  }
  return ScoreDistribution::none();
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

struct HistogramBin {
  double lower, upper;
  std::size_t count;
  double expected;  // n · P(lower <= S < upper) under the fitted law
};

struct FitDiagnostics {
  Family family;
  std::size_t samples = 0;
  bool normalization_disabled = false;
  std::optional<double> log_likelihood;
  std::optional<double> ks_statistic;
  std::vector<HistogramBin> histogram;

  nlohmann::ordered_json summary_json() const {
    nlohmann::ordered_json j;
    j["family"] = std::string(family_name(family));
    j["samples"] = samples;
    j["log_likelihood"] = log_likelihood ? nlohmann::ordered_json(*log_likelihood) : nlohmann::ordered_json();
    j["ks_statistic"] = ks_statistic ? nlohmann::ordered_json(*ks_statistic) : nlohmann::ordered_json();
    if (normalization_disabled) j["note"] = "normalization disabled: survival is 1 for every score";
    return j;
  }

  std::string histogram_csv() const {
    std::string out = "bin_lower,bin_upper,count,expected\n";
    for (const auto& b : histogram)
      out += io::format_double(b.lower) + ',' + io::format_double(b.upper) + ',' + std::to_string(b.count) + ',' +
             io::format_double(b.expected) + '\n';
    return out;
  }
};

// Kolmogorov-Smirnov distance between the empirical CDF of `scores` and `cdf`.
template <typename Cdf>
double ks_statistic(std::vector<double> scores, Cdf&& cdf) {
  std::sort(scores.begin(), scores.end());
  const double n = static_cast<double>(scores.size());
  double d = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double f = cdf(scores[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

inline FitDiagnostics fit_diagnostics(const ScoreDistribution& d, std::span<const double> scores,
                                      std::size_t bins = 50) {
  if (scores.empty()) throw DataError("fit_diagnostics: empty score list");
  if (bins == 0) throw DataError("fit_diagnostics: need at least one bin");
  FitDiagnostics r;
  r.family = d.family();
  r.samples = scores.size();
  const double n = static_cast<double>(scores.size());
  const auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
  const double lo = *lo_it, hi = *hi_it > *lo_it ? *hi_it : *lo_it + 1.0;
  const double width = (hi - lo) / static_cast<double>(bins);
  r.histogram.resize(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    r.histogram[b].lower = lo + width * static_cast<double>(b);
    r.histogram[b].upper = b + 1 == bins ? hi : lo + width * static_cast<double>(b + 1);
    r.histogram[b].count = 0;
  }
  for (double s : scores) {
    auto b = static_cast<std::size_t>((s - lo) / width);
    r.histogram[std::min(b, bins - 1)].count++;
  }
  if (d.family() == Family::None) {
    r.normalization_disabled = true;
    for (auto& b : r.histogram) b.expected = 0.0;
    return r;
  }
  for (auto& b : r.histogram) b.expected = n * (d.survival(b.lower) - d.survival(b.upper));
  double ll = 0.0;
  for (double s : scores) ll += d.log_pdf(s);
  r.log_likelihood = ll;
  r.ks_statistic = ks_statistic(std::vector<double>(scores.begin(), scores.end()), [&](double s) { return d.cdf(s); });
  return r;
}

}  // namespace mlnood
