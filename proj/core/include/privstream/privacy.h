#ifndef PRIVSTREAM_PRIVACY_H_
#define PRIVSTREAM_PRIVACY_H_

#include <cstdint>
#include <stdexcept>

#include "privstream/query.h"
#include "privstream/rng.h"

namespace privstream {

// ---------------------------------------------------------------------------
// Two-coin randomized response, de-biasing, privacy-bound calculators, and
// budget inversion. Everything here is pure given the randomness source.
//
// The mechanism: with probability p the client reports its truthful bit;
// otherwise it reports an independent Bernoulli(q) bit. Hence
//   Pr[out = 1 | truth = 1] = p + (1-p)q   (rho1)
//   Pr[out = 1 | truth = 0] = (1-p)q       (rho0)
// ---------------------------------------------------------------------------

struct RRCoins {
  double p = 0.9;  // first coin: answer truthfully
  double q = 0.6;  // second coin: forced "yes"
};

struct PrivacyReport {
  double eps_rr = 0;  // per-response level (no sampling)
  double eps_dp = 0;  // differential privacy under sampling fraction s
  double eps_zk = 0;  // zero-knowledge privacy under sampling fraction s
  double ratio = 0;   // eps_zk / eps_dp, always >= 1
};

struct DebiasInput {
  uint64_t n = 0;    // randomized responses in scope
  uint64_t r_y = 0;  // observed 1-bits for one bucket
  RRCoins coins;
};

// Thrown by invert_budget when no sampling fraction in (0,1] reaches the
// requested epsilon; names the largest achievable value for these coins.
struct BudgetUnachievable : std::runtime_error {
  BudgetUnachievable(const std::string& what, double max_achievable_arg)
      : std::runtime_error(what), max_achievable(max_achievable_arg) {}
  double max_achievable;
};

inline double rho1(const RRCoins& c) { return c.p + (1 - c.p) * c.q; }
inline double rho0(const RRCoins& c) { return (1 - c.p) * c.q; }

// Throws std::invalid_argument unless 0 < p <= 1 and 0 < q < 1 (p = 1 is the
// no-privacy test mode).
void check_coins(const RRCoins& coins);

// Returns truth with probability p, else an independent Bernoulli(q) bit.
uint8_t randomize_bit(uint8_t truth, const RRCoins& coins, Rng& rng);

// Applies randomize_bit independently to each bucket bit; keeps query_id and
// timestamp. Independent per-bit coins are what make the per-bucket de-bias
// formula exact.
AnswerVector randomize_vector(const AnswerVector& truth, const RRCoins& coins,
                              Rng& rng);

// E_y = (R_y - (1-p)*q*N) / p. Deliberately not clamped to [0, N]: clamping
// would bias the estimator and the error-bound machinery assumes raw values.
// Throws std::domain_error when p = 0 (estimator undefined).
double debias_count(const DebiasInput& in);

// eta = |(A_y - E_y) / A_y|. Throws std::domain_error when A_y = 0.
double accuracy_loss(double a_y, double e_y);

// Per-response level: ln(rho1/rho0). Throws std::domain_error when p = 1 or
// q = 0 (epsilon infinite).
double eps_rr(const RRCoins& coins);

// Differential privacy under sampling: ln(1 + s*(e^eps_rr - 1)), 0 < s <= 1.
double eps_dp(double s, const RRCoins& coins);

// Zero-knowledge privacy under sampling:
// ln(s*(2-s)/(1-s)*e^eps_rr + (1-s)), 0 < s < 1.
// Throws std::domain_error at s = 1 (the bound requires sampling).
double eps_zk(double s, const RRCoins& coins);

PrivacyReport privacy_report(double s, const RRCoins& coins);

// Converts a privacy budget into the sampling fraction for fixed coins.
//   dp-kind: s = (e^eps - 1) / (e^eps_rr - 1); throws BudgetUnachievable when
//            eps > eps_rr (max achievable is eps_rr, at s = 1).
//   zk-kind: the unique root in (0,1) of
//            s^2(1-A) + s(2A-2+E) + (1-E) = 0, A = e^eps_rr, E = e^eps,
//            Newton-polished so eps_zk(invert_budget(eps)) = eps to 1e-9.
double invert_budget(const Budget& budget, const RRCoins& coins);

// Complementary count for query inversion: scale - e_y. Used when the
// truthful yes-fraction is far from q, so the analyst estimates "no" answers
// with smaller relative loss.
double invert_query_counts(double e_y, double n_truthful_scale);

}  // namespace privstream

#endif  // PRIVSTREAM_PRIVACY_H_
