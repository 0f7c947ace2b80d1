#include "r2r/nelder_mead.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace r2r::optim {

namespace {

struct Bounded {
  const std::function<double(const Eigen::VectorXd&)>& f;
  const NelderMeadOptions& opts;
  int evals = 0;

  bool bounded() const { return opts.lower.size() > 0; }

  Eigen::VectorXd project(const Eigen::VectorXd& x) const {
    if (!bounded()) return x;
    return x.cwiseMax(opts.lower).cwiseMin(opts.upper);
  }

  double operator()(const Eigen::VectorXd& x) {
    ++evals;
    const Eigen::VectorXd p = project(x);
    double v = f(p);
    if (!std::isfinite(v)) v = std::numeric_limits<double>::max() / 4;
    if (bounded()) {
      const Eigen::VectorXd range = (opts.upper - opts.lower).cwiseMax(1e-300);
      const double d = ((x - p).array() / range.array()).matrix().squaredNorm();
      if (d > 0.0) v += (1.0 + std::abs(v)) * (1.0 + 1e4 * d);
    }
    return v;
  }
};

}  // namespace

NelderMeadResult minimize(const std::function<double(const Eigen::VectorXd&)>& f,
                          const Eigen::VectorXd& x0, const NelderMeadOptions& opts) {
  const int n = static_cast<int>(x0.size());
  if (n == 0) throw std::invalid_argument("nelder-mead: empty start point");
  if (opts.lower.size() != opts.upper.size() || (opts.lower.size() && opts.lower.size() != n)) {
    throw std::invalid_argument("nelder-mead: bound dimension mismatch");
  }
  if (opts.lower.size() && (opts.lower.array() > opts.upper.array()).any()) {
    throw std::invalid_argument("nelder-mead: empty box");
  }

  Bounded fb{f, opts};
  Eigen::VectorXd step = opts.initial_step;
  if (step.size() == 0) {
    step = fb.bounded() ? Eigen::VectorXd(0.05 * (opts.upper - opts.lower))
                        : Eigen::VectorXd::Constant(n, 0.1);
  }

  Eigen::VectorXd best = fb.project(x0);
  double best_value = fb(best);
  bool converged = false;

  for (int round = 0; round <= opts.restarts && fb.evals < opts.max_evals; ++round) {
    std::vector<Eigen::VectorXd> simplex(n + 1, best);
    std::vector<double> values(n + 1, best_value);
    for (int i = 0; i < n; ++i) {
      simplex[i + 1][i] += step[i];
      // Stay inside the box when the start sits on the upper bound.
      if (fb.bounded() && simplex[i + 1][i] > opts.upper[i]) simplex[i + 1][i] -= 2 * step[i];
      values[i + 1] = fb(simplex[i + 1]);
    }

    std::vector<int> order(n + 1);
    converged = false;
    while (fb.evals < opts.max_evals) {
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](int a, int b) { return values[a] < values[b]; });
      const int lo = order.front();
      const int hi = order.back();
      const int second = order[n - 1];

      double extent = 0.0;
      for (int i = 0; i <= n; ++i) {
        extent = std::max(extent, (simplex[i] - simplex[lo]).cwiseAbs().maxCoeff());
      }
      const double spread = std::abs(values[hi] - values[lo]);
      if (extent <= opts.xtol ||
          spread <= opts.ftol * (std::abs(values[lo]) + std::abs(values[hi])) + 1e-300) {
        converged = true;
        break;
      }

      Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
      for (int i = 0; i <= n; ++i) {
        if (i != hi) centroid += simplex[i];
      }
      centroid /= n;

      const Eigen::VectorXd reflected = centroid + (centroid - simplex[hi]);
      const double fr = fb(reflected);
      if (fr < values[lo]) {
        const Eigen::VectorXd expanded = centroid + 2.0 * (centroid - simplex[hi]);
        const double fe = fb(expanded);
        if (fe < fr) {
          simplex[hi] = expanded;
          values[hi] = fe;
        } else {
          simplex[hi] = reflected;
          values[hi] = fr;
        }
        continue;
      }
      if (fr < values[second]) {
        simplex[hi] = reflected;
        values[hi] = fr;
        continue;
      }
      const bool outside = fr < values[hi];
      const Eigen::VectorXd contracted = outside ? Eigen::VectorXd(centroid + 0.5 * (reflected - centroid))
                                                 : Eigen::VectorXd(centroid + 0.5 * (simplex[hi] - centroid));
      const double fc = fb(contracted);
      if (fc < (outside ? fr : values[hi])) {
        simplex[hi] = contracted;
        values[hi] = fc;
        continue;
      }
      for (int i = 0; i <= n; ++i) {
        if (i == lo) continue;
        simplex[i] = simplex[lo] + 0.5 * (simplex[i] - simplex[lo]);
        values[i] = fb(simplex[i]);
      }
    }

    const auto it = std::min_element(values.begin(), values.end());
    const int arg = static_cast<int>(it - values.begin());
    const bool improved = *it < best_value;
    if (*it <= best_value) {
      best = simplex[arg];
      best_value = *it;
    }
    if (!improved && round > 0) break;
    step *= 0.5;
  }

  NelderMeadResult r;
  r.x = fb.project(best);
  r.value = best_value;
  r.evals = fb.evals;
  r.converged = converged;
  return r;
}

}  // namespace r2r::optim
