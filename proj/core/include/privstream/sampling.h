#ifndef PRIVSTREAM_SAMPLING_H_
#define PRIVSTREAM_SAMPLING_H_

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

#include "privstream/privacy.h"

namespace privstream {

// ---------------------------------------------------------------------------
// Sampling-theory estimators and error bounds: SRS and stratified sum
// estimation with finite-population correction, Student-t quantiles, and the
// randomized-response error contribution. Pure functions, thread-safe.
// ---------------------------------------------------------------------------

struct SrsPlan {
  uint64_t population = 0;  // U: total client count
  uint64_t sample = 0;      // U': participating client count
  double confidence_level = 0.95;
};

// Sufficient statistics for one stratum: B clients, b sampled, their answer
// sum and unbiased sample variance r^2.
struct StratumStat {
  uint64_t population_size = 0;  // B
  uint64_t sample_size = 0;      // b
  double sample_sum = 0;
  double sample_variance = 0;    // r^2, (n-1) denominator

  static StratumStat from_values(uint64_t population_size,
                                 const std::vector<double>& values);
};

struct Estimate {
  double value = 0;       // tau-hat, scaled to the population
  double half_width = 0;  // t-based error bound
  double confidence_level = 0.95;
  uint64_t df = 1;
  // CLT caveat: fewer than 30 sampled answers.
  bool low_sample = false;
};

struct InsufficientSample : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Regularized incomplete beta I_x(a, b), by continued fraction.
double regularized_incomplete_beta(double x, double a, double b);
// Regularized upper incomplete gamma Q(a, x).
double regularized_gamma_q(double a, double x);

// Student-t CDF at x with df degrees of freedom.
double t_cdf(double x, double df);
// Inverse CDF: returns t with CDF_t(df)(t) = prob, |error| < 1e-6.
// Throws std::domain_error for df < 1 or prob outside (0,1).
double t_quantile(double df, double prob);
// Upper tail of the chi-square distribution (survival function).
double chi_square_sf(double x, double df);
// Standard normal survival function.
double normal_sf(double z);

// Sum estimate from a simple random sample:
//   value = (U/U') * sample_sum
//   Var-hat = (U^2/U') * variance * (U-U')/U
//   half_width = t(U'-1, 1-alpha/2) * sqrt(Var-hat)
// Throws InsufficientSample when U' < 2, std::invalid_argument when U' > U.
Estimate srs_estimate(const SrsPlan& plan, double sample_sum,
                      double sample_variance);

// Stratified sum estimate:
//   value = sum_i (B_i/b_i) * sum_i
//   Var-hat = sum_i B_i (B_i - b_i) r_i^2 / b_i
//   df = sum_i b_i - n
// Collapses exactly to srs_estimate for a single stratum.
Estimate stratified_estimate(const std::vector<StratumStat>& strata,
                             double confidence_level);

// Per-stratum sampling probabilities. Proportional allocation keeps every
// stratum at the global s (expected samples are then automatically
// proportional to arrival rates); overrides replace individual entries.
std::vector<double> proportional_allocation(
    const std::vector<double>& rates, double s,
    const std::map<size_t, double>& overrides = {});

// The total error bound adds the two independently estimated components.
double combine_errors(double sampling_half_width, double rr_half_width);

// Error contribution of randomized response to the de-biased count over N
// responses. Conditioned on the truthful bits, each response is Bernoulli
// with rate rho1 (truth 1) or rho0 (truth 0), so
//   Var(R_y | truth) = N * (r*sigma1^2 + (1-r)*sigma0^2),  sigmaK^2 = rhoK(1-rhoK)
// with r the truthful yes-rate. Without a pilot rate the worst case over r,
// N * max(sigma1^2, sigma0^2), is used; it vanishes at p = 1 and never
// exceeds N/4. The de-bias divides by p, so
//   half_width = t(N-1, 1-alpha/2) * sqrt(Var) / p.
double rr_error_halfwidth(const RRCoins& coins, uint64_t n,
                          double confidence_level,
                          std::optional<double> pilot_yes_rate = std::nullopt);

}  // namespace privstream

#endif  // PRIVSTREAM_SAMPLING_H_
