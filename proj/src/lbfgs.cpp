#include "flowgrad/lbfgs.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <optional>

#include "flowgrad/errors.hpp"

namespace flowgrad::optim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double inf_norm(std::span<const double> a) {
  double m = 0.0;
  for (double x : a) m = std::max(m, std::abs(x));
  return m;
}

struct Bounds {
  std::vector<double> lo, hi;
  bool any = false;

  double project(std::size_t i, double x) const { return std::clamp(x, lo[i], hi[i]); }
};

struct Trial {
  double alpha = 0.0;
  double f = kInf;
  double slope = 0.0;  // directional derivative along d
  std::vector<double> x, g;
};

class Evaluator {
public:
  Evaluator(const ad::Objective& f, const OptimizerConfig& cfg, OptimizationResult& r)
      : f_(f), cfg_(cfg), result_(r) {}

  // Returns nullopt when the objective failed at x.
  std::optional<double> operator()(std::span<const double> x, std::vector<double>& g) {
    ++result_.evaluations;
    try {
      const double v = f_(x, &g);
      if (!std::isfinite(v)) throw NumericError("objective", "non-finite loss");
      consecutive_ = 0;
      return v;
    } catch (const NonConvergenceError&) {
    } catch (const SingularMatrixError&) {
    } catch (const NumericError&) {
    }
    ++result_.rejected_trials;
    if (++consecutive_ >= cfg_.max_rejections)
      throw LineSearchError("line search failed: " + std::to_string(consecutive_) +
                            " consecutive trial points rejected by the forward solver");
    return std::nullopt;
  }

private:
  const ad::Objective& f_;
  const OptimizerConfig& cfg_;
  OptimizationResult& result_;
  int consecutive_ = 0;
};

}  // namespace

void OptimizerConfig::validate(std::size_t n) const {
  if (max_steps < 0) throw ContractError("max_steps must be >= 0");
  if (memory < 1) throw ContractError("L-BFGS memory must be >= 1");
  if (!(0 < c1 && c1 < c2 && c2 < 1)) throw ContractError("need 0 < c1 < c2 < 1");
  if (!lower.empty() && lower.size() != n) throw ContractError("lower bound length mismatch");
  if (!upper.empty() && upper.size() != n) throw ContractError("upper bound length mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    const double lo = lower.empty() ? -kInf : lower[i];
    const double hi = upper.empty() ? kInf : upper[i];
    if (!(lo <= hi)) throw ContractError("lower bound exceeds upper bound");
  }
  if (max_rejections < 1) throw ContractError("max_rejections must be >= 1");
}

OptimizationResult lbfgs_optimize(const ad::Objective& objective, std::vector<double> theta0,
                                  const OptimizerConfig& cfg, const StepCallback& on_step) {
  const std::size_t n = theta0.size();
  cfg.validate(n);
  Bounds bounds;
  bounds.lo = cfg.lower.empty() ? std::vector<double>(n, -kInf) : cfg.lower;
  bounds.hi = cfg.upper.empty() ? std::vector<double>(n, kInf) : cfg.upper;
  for (std::size_t i = 0; i < n; ++i)
    bounds.any = bounds.any || std::isfinite(bounds.lo[i]) || std::isfinite(bounds.hi[i]);

  OptimizationResult result;
  Evaluator eval(objective, cfg, result);

  std::vector<double> x(n), g;
  for (std::size_t i = 0; i < n; ++i) x[i] = bounds.project(i, theta0[i]);
  ++result.evaluations;
  double f = objective(x, &g);
  if (!std::isfinite(f)) throw NumericError("objective", "non-finite loss at the initial point");
  result.initial_loss = f;

  std::deque<std::vector<double>> s_hist, y_hist;
  std::deque<double> rho_hist;

  auto free_mask = [&](std::size_t i) {
    if (x[i] <= bounds.lo[i] && g[i] > 0) return false;
    if (x[i] >= bounds.hi[i] && g[i] < 0) return false;
    return true;
  };
  auto projected_grad_norm = [&] {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double pg = g[i];
      if (g[i] > 0) pg = std::min(g[i], x[i] - bounds.lo[i]);
      if (g[i] < 0) pg = std::max(g[i], x[i] - bounds.hi[i]);
      m = std::max(m, std::abs(pg));
    }
    return m;
  };

  result.stop_reason = "max_steps";
  for (int step = 1; step <= cfg.max_steps; ++step) {
    if (projected_grad_norm() < cfg.pgtol) {
      result.stop_reason = "gradient";
      break;
    }

    // Two-loop recursion restricted to the free variables.
    std::vector<char> free(n);
    for (std::size_t i = 0; i < n; ++i) free[i] = free_mask(i);
    std::vector<double> q(n);
    for (std::size_t i = 0; i < n; ++i) q[i] = free[i] ? g[i] : 0.0;
    std::vector<double> alpha(s_hist.size());
    for (std::size_t k = s_hist.size(); k-- > 0;) {
      alpha[k] = rho_hist[k] * dot(s_hist[k], q);
      for (std::size_t i = 0; i < n; ++i) q[i] -= alpha[k] * y_hist[k][i];
    }
    if (!s_hist.empty()) {
      const double gamma = dot(s_hist.back(), y_hist.back()) / dot(y_hist.back(), y_hist.back());
      for (double& v : q) v *= gamma;
    }
    for (std::size_t k = 0; k < s_hist.size(); ++k) {
      const double beta = rho_hist[k] * dot(y_hist[k], q);
      for (std::size_t i = 0; i < n; ++i) q[i] += s_hist[k][i] * (alpha[k] - beta);
    }
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = free[i] ? -q[i] : 0.0;
    double slope0 = dot(g, d);
    if (!(slope0 < 0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      for (std::size_t i = 0; i < n; ++i) d[i] = free[i] ? -g[i] : 0.0;
      slope0 = dot(g, d);
      if (!(slope0 < 0)) {
        result.stop_reason = "gradient";
        break;
      }
    }

    double alpha0 = 1.0;
    if (s_hist.empty()) alpha0 = std::min(1.0, 1.0 / std::sqrt(dot(d, d)));

    double alpha_max = kInf;
    for (std::size_t i = 0; i < n; ++i) {
      if (d[i] < 0 && std::isfinite(bounds.lo[i]))
        alpha_max = std::min(alpha_max, (bounds.lo[i] - x[i]) / d[i]);
      if (d[i] > 0 && std::isfinite(bounds.hi[i]))
        alpha_max = std::min(alpha_max, (bounds.hi[i] - x[i]) / d[i]);
    }

    auto make_trial = [&](double a, bool projected) {
      Trial t;
      t.alpha = a;
      t.x.resize(n);
      for (std::size_t i = 0; i < n; ++i)
        t.x[i] = projected ? bounds.project(i, x[i] + a * d[i]) : x[i] + a * d[i];
      if (auto v = eval(t.x, t.g)) {
        t.f = *v;
        t.slope = dot(t.g, d);
      }
      return t;
    };

    std::optional<Trial> accepted;
    int evals = 0;
    if (bounds.any && alpha0 > alpha_max) {
      // Projected backtracking (Armijo along the projected path).
      double a = alpha0;
      while (evals++ < cfg.max_line_search_evals) {
        Trial t = make_trial(a, true);
        std::vector<double> dx(n);
        for (std::size_t i = 0; i < n; ++i) dx[i] = t.x[i] - x[i];
        if (std::isfinite(t.f) && t.f <= f + cfg.c1 * dot(g, dx)) {
          accepted = std::move(t);
          break;
        }
        a *= 0.5;
      }
    } else {
      // Strong Wolfe: bracketing followed by zoom.
      Trial prev;
      prev.alpha = 0.0;
      prev.f = f;
      prev.slope = slope0;
      prev.x = x;
      prev.g = g;
      double a = std::min(alpha0, alpha_max);
      auto armijo = [&](const Trial& t) { return t.f <= f + cfg.c1 * t.alpha * slope0; };
      auto curvature = [&](const Trial& t) { return std::abs(t.slope) <= -cfg.c2 * slope0; };

      auto zoom = [&](Trial lo, Trial hi) -> std::optional<Trial> {
        while (evals++ < cfg.max_line_search_evals) {
          const double width = hi.alpha - lo.alpha;
          double a_j = 0.5 * (lo.alpha + hi.alpha);
          if (std::isfinite(hi.f)) {
            const double denom = 2.0 * (hi.f - lo.f - lo.slope * width);
            if (denom > 0) {
              const double cand = lo.alpha - lo.slope * width * width / denom;
              const double a_min = std::min(lo.alpha, hi.alpha), a_max = std::max(lo.alpha, hi.alpha);
              const double margin = 0.1 * std::abs(width);
              if (cand > a_min + margin && cand < a_max - margin) a_j = cand;
            }
          }
          Trial t = make_trial(a_j, false);
          if (!armijo(t) || t.f >= lo.f) {
            hi = std::move(t);
          } else {
            if (curvature(t)) return t;
            if (t.slope * (hi.alpha - lo.alpha) >= 0) hi = lo;
            lo = std::move(t);
          }
          if (std::abs(hi.alpha - lo.alpha) < 1e-16 * std::max(1.0, lo.alpha)) break;
        }
        if (lo.alpha > 0 && lo.f < f) return lo;
        return std::nullopt;
      };

      for (int i = 1; evals++ < cfg.max_line_search_evals; ++i) {
        Trial t = make_trial(a, false);
        if (!armijo(t) || (i > 1 && t.f >= prev.f)) {
          accepted = zoom(std::move(prev), std::move(t));
          break;
        }
        if (curvature(t)) {
          accepted = std::move(t);
          break;
        }
        if (t.slope >= 0) {
          accepted = zoom(std::move(t), std::move(prev));
          break;
        }
        if (a >= alpha_max) {
          accepted = std::move(t);  // at the bound, sufficient decrease holds
          break;
        }
        prev = std::move(t);
        a = std::min(2.0 * a, alpha_max);
      }
    }

    if (!accepted) {
      if (!s_hist.empty()) {
        // Retry from steepest descent with a fresh memory.
        s_hist.clear();
        y_hist.clear();
        rho_hist.clear();
        --step;
        if (result.evaluations > 50 * (cfg.max_steps + 1))
          throw LineSearchError("line search failed repeatedly");
        continue;
      }
      result.stop_reason = "line_search";
      break;
    }

    std::vector<double> s(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = accepted->x[i] - x[i];
      y[i] = accepted->g[i] - g[i];
    }
    const double sy = dot(s, y);
    if (sy > std::numeric_limits<double>::epsilon() * dot(y, y)) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > cfg.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }

    const double f_old = f;
    x = std::move(accepted->x);
    g = std::move(accepted->g);
    f = accepted->f;
    result.loss_history.push_back(f);
    result.steps = step;
    if (on_step) on_step(step, x, f);

    if (f == 0.0) {
      result.stop_reason = "zero_loss";
      break;
    }
    const double denom = std::max({std::abs(f_old), std::abs(f), 1e-300});
    if ((f_old - f) / denom < cfg.ftol_rel) {
      result.stop_reason = "loss_change";
      break;
    }
  }
  if (result.stop_reason == "max_steps" && projected_grad_norm() < cfg.pgtol)
    result.stop_reason = "gradient";
  result.theta = std::move(x);
  result.final_gradient = std::move(g);
  return result;
}

}  // namespace flowgrad::optim
