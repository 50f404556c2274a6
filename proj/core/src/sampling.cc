#include "privstream/sampling.h"

#include <algorithm>
#include <cmath>

namespace privstream {

StratumStat StratumStat::from_values(uint64_t population_size,
                                     const std::vector<double>& values) {
  StratumStat s;
  s.population_size = population_size;
  s.sample_size = values.size();
  for (double v : values) s.sample_sum += v;
  if (values.size() >= 2) {
    double mean = s.sample_sum / static_cast<double>(values.size());
    double ss = 0;
    for (double v : values) ss += (v - mean) * (v - mean);
    s.sample_variance = ss / static_cast<double>(values.size() - 1);
  }
  return s;
}

// --------------------------------------------------------------------------
// Special functions. Continued fractions use the modified Lentz algorithm.
// --------------------------------------------------------------------------

namespace {

constexpr double kTiny = 1e-300;
constexpr double kCfTol = 1e-15;
constexpr int kCfMaxIter = 500;

double log_beta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

// Continued fraction for the incomplete beta, converges fast for
// x < (a+1)/(a+b+2).
double ibeta_cf(double x, double a, double b) {
  double c = 1.0;
  double d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double result = d;
  for (int m = 1; m <= kCfMaxIter; ++m) {
    double m2 = 2.0 * m;
    // even step
    double num = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
    d = 1.0 + num * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + num / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    result *= d * c;
    // odd step
    num = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
    d = 1.0 + num * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + num / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    double delta = d * c;
    result *= delta;
    if (std::fabs(delta - 1.0) < kCfTol) break;
  }
  return result;
}

// Series for the lower regularized incomplete gamma P(a, x), x < a + 1.
double igamma_p_series(double a, double x) {
  double term = 1.0 / a;
  double sum = term;
  double ap = a;
  for (int i = 0; i < kCfMaxIter; ++i) {
    ap += 1.0;
    term *= x / ap;
    sum += term;
    if (std::fabs(term) < std::fabs(sum) * kCfTol) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Continued fraction for the upper regularized incomplete gamma Q(a, x),
// x >= a + 1.
double igamma_q_cf(double a, double x) {
  double b = x + 1.0 - a;
  double c = 1.0 / kTiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= kCfMaxIter; ++i) {
    double an = -static_cast<double>(i) * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = b + an / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) < kCfTol) break;
  }
  return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

}  // namespace

double regularized_incomplete_beta(double x, double a, double b) {
  if (!(a > 0.0) || !(b > 0.0) || !(x >= 0.0) || !(x <= 1.0)) {
    throw std::domain_error("regularized_incomplete_beta: bad arguments");
  }
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  double front = std::exp(a * std::log(x) + b * std::log(1.0 - x) - log_beta(a, b));
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * ibeta_cf(x, a, b) / a;
  }
  return 1.0 - std::exp(b * std::log(1.0 - x) + a * std::log(x) - log_beta(b, a)) *
                   ibeta_cf(1.0 - x, b, a) / b;
}

double regularized_gamma_q(double a, double x) {
  if (!(a > 0.0) || x < 0.0) {
    throw std::domain_error("regularized_gamma_q: bad arguments");
  }
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - igamma_p_series(a, x);
  return igamma_q_cf(a, x);
}

double t_cdf(double x, double df) {
  if (!(df > 0.0)) throw std::domain_error("t_cdf: df must be positive");
  if (x == 0.0) return 0.5;
  double ib = regularized_incomplete_beta(df / (x * x + df), df / 2.0, 0.5);
  return x > 0.0 ? 1.0 - ib / 2.0 : ib / 2.0;
}

double t_quantile(double df, double prob) {
  if (!(df >= 1.0)) throw std::domain_error("t_quantile: df must be >= 1");
  if (!(prob > 0.0) || !(prob < 1.0)) {
    throw std::domain_error("t_quantile: prob must be in (0, 1)");
  }
  if (prob == 0.5) return 0.0;
  if (prob < 0.5) return -t_quantile(df, 1.0 - prob);
  // Bracket the root, then bisect. 200 bisections give far better than the
  // 1e-6 contract; the CDF is monotone so this cannot go wrong.
  double lo = 0.0, hi = 1.0;
  while (t_cdf(hi, df) < prob) {
    hi *= 2.0;
    if (hi > 1e18) return hi;  // prob indistinguishable from 1 at this df
  }
  for (int i = 0; i < 200; ++i) {
    double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (t_cdf(mid, df) < prob) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

double chi_square_sf(double x, double df) {
  if (!(df > 0.0)) throw std::domain_error("chi_square_sf: df must be positive");
  if (x <= 0.0) return 1.0;
  return regularized_gamma_q(df / 2.0, x / 2.0);
}

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

// --------------------------------------------------------------------------
// Estimators
// --------------------------------------------------------------------------

Estimate srs_estimate(const SrsPlan& plan, double sample_sum,
                      double sample_variance) {
  if (plan.sample > plan.population) {
    throw std::invalid_argument("srs_estimate: sample exceeds population");
  }
  // Exact collapse: a simple random sample is a one-stratum stratified
  // design; delegating keeps the two estimators bit-identical there.
  StratumStat stat;
  stat.population_size = plan.population;
  stat.sample_size = plan.sample;
  stat.sample_sum = sample_sum;
  stat.sample_variance = sample_variance;
  return stratified_estimate({stat}, plan.confidence_level);
}

Estimate stratified_estimate(const std::vector<StratumStat>& strata,
                             double confidence_level) {
  if (strata.empty()) {
    throw std::invalid_argument("stratified_estimate: no strata");
  }
  if (!(confidence_level > 0.0) || !(confidence_level < 1.0)) {
    throw std::invalid_argument("stratified_estimate: confidence_level in (0,1)");
  }
  double value = 0;
  double variance = 0;
  uint64_t total_samples = 0;
  for (const auto& st : strata) {
    if (st.sample_size < 1 || st.sample_size > st.population_size) {
      throw InsufficientSample("stratified_estimate: stratum needs 1 <= b <= B");
    }
    if (st.sample_variance < 0) {
      throw std::invalid_argument("stratified_estimate: negative variance");
    }
    double big_b = static_cast<double>(st.population_size);
    double b = static_cast<double>(st.sample_size);
    value += big_b / b * st.sample_sum;
    variance += big_b * (big_b - b) * st.sample_variance / b;
    total_samples += st.sample_size;
  }
  // df = sum_i b_i - n
  if (total_samples < strata.size() + 1) {
    throw InsufficientSample(
        "stratified_estimate: degrees of freedom below 1; need more samples");
  }
  Estimate est;
  est.value = value;
  est.df = total_samples - strata.size();
  est.confidence_level = confidence_level;
  est.low_sample = total_samples < 30;
  double quantile_prob = 1.0 - (1.0 - confidence_level) / 2.0;
  est.half_width = variance > 0.0
                       ? t_quantile(static_cast<double>(est.df), quantile_prob) *
                             std::sqrt(variance)
                       : 0.0;
  return est;
}

std::vector<double> proportional_allocation(
    const std::vector<double>& rates, double s,
    const std::map<size_t, double>& overrides) {
  if (rates.empty()) {
    throw std::invalid_argument("proportional_allocation: no strata rates");
  }
  if (!(s > 0.0) || s > 1.0) {
    throw std::invalid_argument("proportional_allocation: s must be in (0, 1]");
  }
  std::vector<double> probabilities(rates.size(), s);
  for (size_t i = 0; i < rates.size(); ++i) {
    if (!(rates[i] > 0.0)) {
      throw std::invalid_argument("proportional_allocation: rates must be positive");
    }
  }
  for (const auto& [index, probability] : overrides) {
    if (index >= rates.size()) {
      throw std::invalid_argument("proportional_allocation: override out of range");
    }
    if (!(probability > 0.0) || probability > 1.0) {
      throw std::invalid_argument("proportional_allocation: override out of (0, 1]");
    }
    probabilities[index] = probability;
  }
  return probabilities;
}

double combine_errors(double sampling_half_width, double rr_half_width) {
  if (sampling_half_width < 0 || rr_half_width < 0) {
    throw std::invalid_argument("combine_errors: half-widths must be >= 0");
  }
  return sampling_half_width + rr_half_width;
}

double rr_error_halfwidth(const RRCoins& coins, uint64_t n,
                          double confidence_level,
                          std::optional<double> pilot_yes_rate) {
  if (n == 0) throw std::invalid_argument("rr_error_halfwidth: N must be >= 1");
  check_coins(coins);
  double sigma1 = rho1(coins) * (1 - rho1(coins));
  double sigma0 = rho0(coins) * (1 - rho0(coins));
  double per_response;
  if (pilot_yes_rate) {
    double r = std::clamp(*pilot_yes_rate, 0.0, 1.0);
    per_response = r * sigma1 + (1 - r) * sigma0;
  } else {
    per_response = std::max(sigma1, sigma0);
  }
  double variance = static_cast<double>(n) * per_response;
  if (variance <= 0.0) return 0.0;
  double df = n >= 2 ? static_cast<double>(n - 1) : 1.0;
  double quantile_prob = 1.0 - (1.0 - confidence_level) / 2.0;
  return t_quantile(df, quantile_prob) * std::sqrt(variance) / coins.p;
}

}  // namespace privstream
