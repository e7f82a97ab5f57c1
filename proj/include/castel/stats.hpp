#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "castel/error.hpp"

namespace castel::stats {

inline double mean(const std::vector<double>& xs) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
inline double sd(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

inline double standard_error(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  return sd(xs) / std::sqrt(static_cast<double>(xs.size()));
}

/// Standard normal quantile.
inline double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

/// Two-sided critical value for confidence level `level`, e.g. 1.96 for 0.95.
inline double z_value(double level) {
  if (!(level > 0 && level < 1)) throw ConfigError("confidence level must lie in (0, 1)");
  return normal_quantile(0.5 + level / 2.0);
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Wilson score interval for k successes out of n.
inline Interval wilson(std::size_t k, std::size_t n, double level) {
  if (n == 0) return {0.0, 1.0};
  const double z = z_value(level);
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(k) / nn;
  const double z2 = z * z;
  const double centre = (p + z2 / (2 * nn)) / (1 + z2 / nn);
  const double half = z / (1 + z2 / nn) * std::sqrt(p * (1 - p) / nn + z2 / (4 * nn * nn));
  Interval r{std::max(0.0, centre - half), std::min(1.0, centre + half)};
  r.lo = std::min(r.lo, p);
  r.hi = std::max(r.hi, p);
  return r;
}

/// Normal-approximation interval mean ± z·se.
inline Interval normal_interval(const std::vector<double>& xs, double level) {
  const double m = mean(xs);
  const double h = z_value(level) * standard_error(xs);
  return {m - h, m + h};
}

/// Kolmogorov–Smirnov statistic of a sample against a continuous CDF.
inline double ks_statistic(std::vector<double> xs, const std::function<double(double)>& cdf) {
  if (xs.empty()) throw Error("KS test needs at least one sample");
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  return d;
}

/// Asymptotic p-value of the one-sample KS statistic d for sample size n,
/// with the usual small-sample correction to the argument.
inline double ks_pvalue(double d, std::size_t n) {
  const double en = std::sqrt(static_cast<double>(n));
  const double lambda = (en + 0.12 + 0.11 / en) * d;
  if (lambda < 1e-3) return 1.0;
  double sum = 0.0;
  double sign = 1.0;
  double prev = 0.0;
  for (int j = 1; j <= 200; ++j) {
    const double term = sign * 2.0 * std::exp(-2.0 * j * j * lambda * lambda);
    sum += term;
    if (std::fabs(term) <= 1e-10 * prev || std::fabs(term) <= 1e-16 * sum) return std::clamp(sum, 0.0, 1.0);
    sign = -sign;
    prev = std::fabs(term);
  }
  return 1.0;  // series failed to converge: lambda is tiny
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Ordinary least squares y = slope·x + intercept.
inline LinearFit fit_linear(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw Error("fit needs matching x and y lengths");
  if (std::set<double>(xs.begin(), xs.end()).size() < 2) throw ConfigError("fit needs at least two distinct x values");
  const double mx = mean(xs);
  const double my = mean(ys);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double r = ys[i] - (f.slope * xs[i] + f.intercept);
    ss_res += r * r;
  }
  f.r2 = syy > 0 ? 1.0 - ss_res / syy : (ss_res == 0 ? 1.0 : 0.0);
  return f;
}

}  // namespace castel::stats
