#include "vidfm/special.hpp"

#include <cmath>
#include <limits>

namespace vidfm {

double expit(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double clamped_logit(double p) {
  if (p <= 0.0) return -kLogitClamp;
  if (p >= 1.0) return kLogitClamp;
  const double v = std::log(p) - std::log1p(-p);
  if (v > kLogitClamp) return kLogitClamp;
  if (v < -kLogitClamp) return -kLogitClamp;
  return v;
}

double digamma(double x) {
  if (!(x > 0.0)) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  double result = 0.0;
  while (x < 10.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  // Bernoulli-number series: ln x - 1/(2x) - sum B_2k / (2k x^{2k})
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  const double series =
      inv2 * (1.0 / 12.0 -
              inv2 * (1.0 / 120.0 -
                      inv2 * (1.0 / 252.0 -
                              inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0))))));
  result += std::log(x) - 0.5 * inv - series;
  return result;
}

double xlogx_over_y(double x, double y) {
  if (x <= 0.0) return 0.0;
  return x * (std::log(x) - std::log(y));
}

}  // namespace vidfm
