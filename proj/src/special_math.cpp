#include "dpvb/special_math.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace dpvb {

namespace {

void check_positive_finite(double x, const char* what) {
  if (!std::isfinite(x) || x <= 0.0) {
    throw std::domain_error(std::string(what) + " requires a positive finite argument");
  }
}

// Bernoulli coefficients B_{2k}/(2k) for the digamma asymptotic series.
constexpr double kPsiAsym[] = {
    1.0 / 12.0,   -1.0 / 120.0,      1.0 / 252.0, -1.0 / 240.0,
    1.0 / 132.0,  -691.0 / 32760.0,  1.0 / 12.0,
};

// B_{2k}/(2k(2k-1)) for the Stirling series of log Gamma.
constexpr double kLgAsym[] = {
    1.0 / 12.0,   -1.0 / 360.0,      1.0 / 1260.0, -1.0 / 1680.0,
    1.0 / 1188.0, -691.0 / 360360.0, 1.0 / 156.0,
};

}  // namespace

double digamma(double x) {
  check_positive_finite(x, "digamma");
  double result = 0.0;
  // Lift to the asymptotic region with psi(x) = psi(x+1) - 1/x.
  while (x <= 10.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  double term = inv2;
  double series = 0.0;
  for (double coeff : kPsiAsym) {
    series += coeff * term;
    term *= inv2;
  }
  return result + std::log(x) - 0.5 * inv - series;
}

double ln_gamma(double x) {
  check_positive_finite(x, "ln_gamma");
  double shift = 0.0;
  // lnGamma(x) = lnGamma(x+n) - sum log(x+i)
  while (x <= 10.0) {
    shift += std::log(x);
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  double term = inv;
  double series = 0.0;
  for (double coeff : kLgAsym) {
    series += coeff * term;
    term *= inv2;
  }
  constexpr double half_log_2pi = 0.91893853320467274178;
  return (x - 0.5) * std::log(x) - x + half_log_2pi + series - shift;
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) {
    throw std::domain_error("log_sum_exp of an empty range");
  }
  const double m = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(m)) {
    return m;  // all -inf (or a stray +inf) dominates
  }
  double acc = 0.0;
  for (double v : values) {
    acc += std::exp(v - m);
  }
  return m + std::log(acc);
}

double regularized_incomplete_beta(double a, double b, double x) {
  check_positive_finite(a, "regularized_incomplete_beta");
  check_positive_finite(b, "regularized_incomplete_beta");
  if (!(x >= 0.0 && x <= 1.0)) {
    throw std::domain_error("regularized_incomplete_beta requires x in [0,1]");
  }
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  // Use the symmetry that keeps the continued fraction convergent.
  if (x > (a + 1.0) / (a + b + 2.0)) {
    return 1.0 - regularized_incomplete_beta(b, a, 1.0 - x);
  }
  const double front =
      std::exp(a * std::log(x) + b * std::log1p(-x) + ln_gamma(a + b) -
               ln_gamma(a) - ln_gamma(b)) /
      a;
  // Modified Lentz continued fraction.
  constexpr double tiny = 1e-300;
  double f = 1.0, c = 1.0, d = 0.0;
  for (int i = 0; i <= 400; ++i) {
    const int m = i / 2;
    double numerator;
    if (i == 0) {
      numerator = 1.0;
    } else if (i % 2 == 0) {
      numerator = m * (b - m) * x / ((a + 2.0 * m - 1.0) * (a + 2.0 * m));
    } else {
      numerator = -(a + m) * (a + b + m) * x / ((a + 2.0 * m) * (a + 2.0 * m + 1.0));
    }
    d = 1.0 + numerator * d;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    c = 1.0 + numerator / c;
    if (std::abs(c) < tiny) c = tiny;
    const double delta = c * d;
    f *= delta;
    if (std::abs(delta - 1.0) < 1e-15) break;
  }
  return std::clamp(front * (f - 1.0), 0.0, 1.0);
}

double student_t_two_sided_p(double t, double dof) {
  check_positive_finite(dof, "student_t_two_sided_p");
  if (!std::isfinite(t)) return 0.0;
  if (t == 0.0) return 1.0;
  const double x = dof / (dof + t * t);
  return std::clamp(regularized_incomplete_beta(0.5 * dof, 0.5, x), 0.0, 1.0);
}

double sample_normal(Rng& rng, double mean, double variance) {
  if (!std::isfinite(mean)) throw std::domain_error("sample_normal: non-finite mean");
  check_positive_finite(variance, "sample_normal variance");
  // Box-Muller, cosine branch only.
  const double u1 = rng.uniform();
  const double u2 = rng.uniform();
  const double z = std::sqrt(-2.0 * std::log(u1)) *
                   std::cos(2.0 * std::numbers::pi * u2);
  return mean + std::sqrt(variance) * z;
}

double sample_gamma(Rng& rng, double shape) {
  check_positive_finite(shape, "sample_gamma shape");
  if (shape < 1.0) {
    const double g = sample_gamma(rng, shape + 1.0);
    return g * std::pow(rng.uniform(), 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double z, v;
    do {
      const double u1 = rng.uniform();
      const double u2 = rng.uniform();
      z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
      v = 1.0 + c * z;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform();
    if (u < 1.0 - 0.0331 * z * z * z * z) return d * v;
    if (std::log(u) < 0.5 * z * z + d * (1.0 - v + std::log(v))) return d * v;
  }
}

double sample_beta(Rng& rng, double shape1, double shape2) {
  check_positive_finite(shape1, "sample_beta shape1");
  check_positive_finite(shape2, "sample_beta shape2");
  const double x = sample_gamma(rng, shape1);
  const double y = sample_gamma(rng, shape2);
  double r = x / (x + y);
  // Keep the draw strictly inside (0,1) for downstream logs.
  const double lo = std::numeric_limits<double>::min();
  const double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
  return std::clamp(r, lo, hi);
}

double sample_inverse_gamma(Rng& rng, double shape, double scale) {
  check_positive_finite(shape, "sample_inverse_gamma shape");
  check_positive_finite(scale, "sample_inverse_gamma scale");
  double g = sample_gamma(rng, shape);
  while (g < 1e-300) g = sample_gamma(rng, shape);
  return scale / g;
}

std::size_t sample_categorical(Rng& rng, std::span<const double> weights) {
  if (weights.empty()) throw std::domain_error("sample_categorical: empty weights");
  double total = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0) {
      throw std::domain_error("sample_categorical: weights must be finite and nonnegative");
    }
    total += w;
  }
  if (total <= 0.0) throw std::domain_error("sample_categorical: weight sum must be positive");
  const double u = rng.uniform() * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u <= acc) return i;
  }
  return weights.size() - 1;
}

std::size_t sample_categorical_log(Rng& rng, std::span<const double> log_weights) {
  if (log_weights.empty()) {
    throw std::domain_error("sample_categorical_log: empty weights");
  }
  const double lse = log_sum_exp(log_weights);
  std::vector<double> probs(log_weights.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    probs[i] = std::exp(log_weights[i] - lse);
  }
  return sample_categorical(rng, probs);
}

}  // namespace dpvb
