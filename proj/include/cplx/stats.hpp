#pragma once

#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>

#include "cplx/errors.hpp"

namespace cplx {

[[nodiscard]] inline double mean(std::span<const double> x) {
  if (x.empty()) throw ContractError("mean of an empty sample");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

/// Sample standard deviation (n - 1 denominator). Zero for a single value.
[[nodiscard]] inline double stddev(std::span<const double> x) {
  const double m = mean(x);
  if (x.size() < 2) return 0.0;
  double ss = 0;
  for (const double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

struct TTest {
  double t = 0;
  double df = 0;
  double p = 1;
  /// Both samples have zero spread but different means.
  bool degenerate = false;
};

/// Unpaired two-sided Student t-test with pooled variance.
[[nodiscard]] inline TTest t_test_unpaired(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw ContractError("t_test_unpaired: each sample needs at least two values");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double ma = mean(a), mb = mean(b);
  const double sa = stddev(a), sb = stddev(b);
  TTest r;
  r.df = na + nb - 2;
  const double pooled = ((na - 1) * sa * sa + (nb - 1) * sb * sb) / r.df;
  const double se = std::sqrt(pooled * (1 / na + 1 / nb));
  if (se == 0) {
    if (ma == mb) return r;
    r.t = ma > mb ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    r.p = 0;
    r.degenerate = true;
    return r;
  }
  r.t = (ma - mb) / se;
  const boost::math::students_t dist(r.df);
  r.p = 2 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

}  // namespace cplx
