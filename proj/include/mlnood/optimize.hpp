#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

namespace mlnood::optimize {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double max_abs(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

// Objective returning f(x) and writing ∇f(x) into `grad`.
using Objective = std::function<double(std::span<const double> x, std::span<double> grad)>;

enum class StepStatus { Accepted, Stalled, NonFinite };

// Limited-memory BFGS with a backtracking Armijo line search. Every accepted
// step strictly decreases f, so the iterate sequence is monotone.
class Lbfgs {
 public:
  struct Options {
    std::size_t history = 10;
    double first_step = 1.0;  // trial length of the very first step (no curvature yet)
    double armijo = 1e-4;
    std::size_t max_backtracks = 60;
  };

  Lbfgs(Objective f, std::vector<double> x0, Options opts)
      : f_(std::move(f)), opts_(opts), x_(std::move(x0)), g_(x_.size()) {
    fx_ = f_(x_, g_);
  }

  const std::vector<double>& x() const noexcept { return x_; }
  const std::vector<double>& gradient() const noexcept { return g_; }
  double value() const noexcept { return fx_; }
  bool finite() const {
    return std::isfinite(fx_) && std::all_of(g_.begin(), g_.end(), [](double v) { return std::isfinite(v); });
  }

  // One quasi-Newton iteration. On anything other than Accepted the state is unchanged.
  StepStatus step() {
    const std::size_t n = x_.size();
    if (n == 0) return StepStatus::Stalled;
    for (int attempt = 0; attempt < 2; ++attempt) {
      std::vector<double> d = direction();
      double slope = dot(d, g_);
      if (!(slope < 0.0)) {
        // Not a descent direction: drop curvature memory and use -g.
        s_.clear(), y_.clear();
        for (std::size_t i = 0; i < n; ++i) d[i] = -g_[i];
        slope = dot(d, g_);
        if (!(slope < 0.0)) return StepStatus::Stalled;
      }
      double t = 1.0;
      if (s_.empty()) {
        const double gnorm1 = std::accumulate(g_.begin(), g_.end(), 0.0, [](double a, double b) { return a + std::abs(b); });
        t = opts_.first_step * std::min(1.0, 1.0 / std::max(gnorm1, std::numeric_limits<double>::min()));
      }
      std::vector<double> xn(n), gn(n);
      for (std::size_t k = 0; k < opts_.max_backtracks; ++k, t *= 0.5) {
        for (std::size_t i = 0; i < n; ++i) xn[i] = x_[i] + t * d[i];
        const double fn = f_(xn, gn);
        if (!std::isfinite(fn)) continue;
        if (fn <= fx_ + opts_.armijo * t * slope && fn < fx_) {
          if (!std::all_of(gn.begin(), gn.end(), [](double v) { return std::isfinite(v); }))
            return StepStatus::NonFinite;
          std::vector<double> s(n), y(n);
          for (std::size_t i = 0; i < n; ++i) s[i] = xn[i] - x_[i], y[i] = gn[i] - g_[i];
          if (dot(s, y) > 1e-300) {
            s_.push_back(std::move(s));
            y_.push_back(std::move(y));
            if (s_.size() > opts_.history) s_.pop_front(), y_.pop_front();
          }
          x_.swap(xn);
          g_.swap(gn);
          fx_ = fn;
          return StepStatus::Accepted;
        }
      }
      if (s_.empty()) return StepStatus::Stalled;
      s_.clear(), y_.clear();  // retry once from steepest descent
    }
    return StepStatus::Stalled;
  }

 private:
  // Two-loop recursion: d = -H g.
  std::vector<double> direction() const {
    const std::size_t m = s_.size();
    std::vector<double> q(g_);
    std::vector<double> alpha(m), rho(m);
    for (std::size_t k = m; k-- > 0;) {
      rho[k] = 1.0 / dot(y_[k], s_[k]);
      alpha[k] = rho[k] * dot(s_[k], q);
      for (std::size_t i = 0; i < q.size(); ++i) q[i] -= alpha[k] * y_[k][i];
    }
    if (m > 0) {
      const double gamma = dot(s_.back(), y_.back()) / dot(y_.back(), y_.back());
      for (double& v : q) v *= gamma;
    }
    for (std::size_t k = 0; k < m; ++k) {
      const double beta = rho[k] * dot(y_[k], q);
      for (std::size_t i = 0; i < q.size(); ++i) q[i] += s_[k][i] * (alpha[k] - beta);
    }
    for (double& v : q) v = -v;
    return q;
  }

  Objective f_;
  Options opts_;
  std::vector<double> x_, g_;
  double fx_ = 0.0;
  std::deque<std::vector<double>> s_, y_;
};

struct NelderMeadResult {
  std::vector<double> x;
  double value = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

// Derivative-free simplex minimization with the standard coefficients
// (reflection 1, expansion 2, contraction 0.5, shrink 0.5). Deterministic.
inline NelderMeadResult nelder_mead(const std::function<double(std::span<const double>)>& f, std::vector<double> x0,
                                    std::span<const double> initial_step, std::size_t max_iter = 5000,
                                    double ftol = 1e-12, double xtol = 1e-10) {
  const std::size_t n = x0.size();
  std::vector<std::vector<double>> pts(n + 1, x0);
  for (std::size_t i = 0; i < n; ++i) pts[i + 1][i] += initial_step[i];
  std::vector<double> fv(n + 1);
  auto eval = [&](const std::vector<double>& p) {
    const double v = f(p);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };
  for (std::size_t i = 0; i <= n; ++i) fv[i] = eval(pts[i]);

  NelderMeadResult res;
  std::vector<std::size_t> order(n + 1);
  for (res.iterations = 0; res.iterations < max_iter; ++res.iterations) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
    const auto& best = pts[order.front()];
    const std::size_t worst = order.back();
    double spread = 0.0;
    for (std::size_t i = 1; i <= n; ++i)
      for (std::size_t k = 0; k < n; ++k) spread = std::max(spread, std::abs(pts[order[i]][k] - best[k]));
    if (std::abs(fv[worst] - fv[order.front()]) <= ftol * (1.0 + std::abs(fv[order.front()])) && spread <= xtol) {
      res.converged = true;
      break;
    }

    std::vector<double> centroid(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < n; ++k) centroid[k] += pts[order[i]][k] / static_cast<double>(n);
    auto along = [&](double coef) {
      std::vector<double> p(n);
      for (std::size_t k = 0; k < n; ++k) p[k] = centroid[k] + coef * (pts[worst][k] - centroid[k]);
      return p;
    };

    auto reflected = along(-1.0);
    const double fr = eval(reflected);
    const double fbest = fv[order.front()];
    const double fsecond = fv[order[n - 1]];
    if (fr < fbest) {
      auto expanded = along(-2.0);
      const double fe = eval(expanded);
      if (fe < fr) pts[worst] = std::move(expanded), fv[worst] = fe;
      else pts[worst] = std::move(reflected), fv[worst] = fr;
    } else if (fr < fsecond) {
      pts[worst] = std::move(reflected), fv[worst] = fr;
    } else {
      const bool outside = fr < fv[worst];
      auto contracted = along(outside ? -0.5 : 0.5);
      const double fc = eval(contracted);
      if (fc < (outside ? fr : fv[worst])) {
        pts[worst] = std::move(contracted), fv[worst] = fc;
      } else {
        const auto anchor = pts[order.front()];
        for (std::size_t i = 1; i <= n; ++i) {
          auto& p = pts[order[i]];
          for (std::size_t k = 0; k < n; ++k) p[k] = anchor[k] + 0.5 * (p[k] - anchor[k]);
          fv[order[i]] = eval(p);
        }
      }
    }
  }
  const auto best = static_cast<std::size_t>(std::min_element(fv.begin(), fv.end()) - fv.begin());
  res.x = pts[best];
  res.value = fv[best];
  return res;
}

// Golden-section search for a minimum of a unimodal f on [lo, hi].
inline double golden_section(const std::function<double(double)>& f, double lo, double hi, double tol = 1e-10,
                             std::size_t max_iter = 200) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  for (std::size_t i = 0; i < max_iter && (b - a) > tol * (1.0 + std::abs(a) + std::abs(b)); ++i) {
    if (fc < fd) {
      b = d, d = c, fd = fc;
      c = b - inv_phi * (b - a), fc = f(c);
    } else {
      a = c, c = d, fc = fd;
      d = a + inv_phi * (b - a), fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace mlnood::optimize
