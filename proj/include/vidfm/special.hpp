#pragma once

namespace vidfm {

inline constexpr double kLogitClamp = 700.0;

// 1 / (1 + exp(-x)) without overflow for large |x|.
double expit(double x);

// log(p / (1 - p)) clamped to [-700, 700]; p = 0 and p = 1 map to the bounds.
double clamped_logit(double p);

// Digamma via upward recurrence to x >= 10 and the asymptotic series. x > 0.
double digamma(double x);

// x log(x / y) with the 0 log 0 = 0 convention.
double xlogx_over_y(double x, double y);

}  // namespace vidfm
