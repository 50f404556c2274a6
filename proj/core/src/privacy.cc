#include "privstream/privacy.h"

#include <cmath>
#include <string>

namespace privstream {

void check_coins(const RRCoins& coins) {
  if (!(coins.p > 0.0) || coins.p > 1.0) {
    throw std::invalid_argument("RRCoins: p must be in (0, 1]");
  }
  if (!(coins.q > 0.0) || !(coins.q < 1.0)) {
    throw std::invalid_argument("RRCoins: q must be in (0, 1)");
  }
}

uint8_t randomize_bit(uint8_t truth, const RRCoins& coins, Rng& rng) {
  if (rng.bernoulli(coins.p)) return truth;
  return rng.bernoulli(coins.q) ? 1 : 0;
}

AnswerVector randomize_vector(const AnswerVector& truth, const RRCoins& coins,
                              Rng& rng) {
  AnswerVector out = truth;
  for (auto& bit : out.bits) bit = randomize_bit(bit, coins, rng);
  return out;
}

double debias_count(const DebiasInput& in) {
  if (in.coins.p <= 0.0) {
    throw std::domain_error("debias_count: estimator undefined at p = 0");
  }
  double n = static_cast<double>(in.n);
  double r_y = static_cast<double>(in.r_y);
  return (r_y - (1 - in.coins.p) * in.coins.q * n) / in.coins.p;
}

double accuracy_loss(double a_y, double e_y) {
  if (a_y == 0.0) {
    throw std::domain_error("accuracy_loss: undefined for A_y = 0");
  }
  return std::fabs((a_y - e_y) / a_y);
}

double eps_rr(const RRCoins& coins) {
  if (coins.p >= 1.0 || coins.q <= 0.0) {
    throw std::domain_error("eps_rr: epsilon is infinite when p = 1 or q = 0");
  }
  return std::log(rho1(coins) / rho0(coins));
}

double eps_dp(double s, const RRCoins& coins) {
  if (!(s > 0.0) || s > 1.0) {
    throw std::domain_error("eps_dp: s must be in (0, 1]");
  }
  return std::log1p(s * std::expm1(eps_rr(coins)));
}

double eps_zk(double s, const RRCoins& coins) {
  if (!(s > 0.0) || !(s < 1.0)) {
    throw std::domain_error(
        "eps_zk: s must be in (0, 1); the zero-knowledge bound requires sampling");
  }
  double a = std::exp(eps_rr(coins));
  return std::log(s * (2 - s) / (1 - s) * a + (1 - s));
}

PrivacyReport privacy_report(double s, const RRCoins& coins) {
  PrivacyReport r;
  r.eps_rr = eps_rr(coins);
  r.eps_dp = eps_dp(s, coins);
  r.eps_zk = s < 1.0 ? eps_zk(s, coins) : r.eps_dp;
  r.ratio = r.eps_zk / r.eps_dp;
  return r;
}

namespace {

// Newton polish of eps_zk(s) = eps; eps_zk is strictly increasing in s on
// (0,1) so the iteration is monotone near the root.
double polish_zk_root(double s, double eps, const RRCoins& coins) {
  double a = std::exp(eps_rr(coins));
  for (int i = 0; i < 64; ++i) {
    double inner = s * (2 - s) / (1 - s) * a + (1 - s);
    double f = std::log(inner) - eps;
    // d/ds [s(2-s)/(1-s)] = (s^2 - 2s + 2) / (1-s)^2
    double dinner = (s * s - 2 * s + 2) / ((1 - s) * (1 - s)) * a - 1;
    double step = f * inner / dinner;
    double next = s - step;
    if (!(next > 0.0 && next < 1.0)) break;
    s = next;
    if (std::fabs(step) < 1e-15) break;
  }
  return s;
}

}  // namespace

double invert_budget(const Budget& budget, const RRCoins& coins) {
  if (!(budget.epsilon > 0.0)) {
    throw std::invalid_argument("invert_budget: epsilon must be positive");
  }
  double rr = eps_rr(coins);  // throws when no finite epsilon exists
  if (budget.kind == Budget::Kind::kDpPrivacy) {
    double s = std::expm1(budget.epsilon) / std::expm1(rr);
    if (s > 1.0 + 1e-12) {
      throw BudgetUnachievable(
          "dp budget epsilon exceeds the per-response level; max achievable "
          "epsilon is " + std::to_string(rr) + " at s = 1",
          rr);
    }
    return s < 1.0 ? s : 1.0;
  }
  // zk-kind: s^2(1-A) + s(2A-2+E) + (1-E) = 0 with A = e^eps_rr, E = e^eps.
  // f(0) = 1-E < 0 and f(1) = A > 0, so exactly one root lies in (0,1).
  double a = std::exp(rr);
  double e = std::exp(budget.epsilon);
  // The root approaches 1 like 1 - A e^{-eps}: once that distance drops
  // below one ulp, no representable fraction under 1 can spend the whole
  // budget, so the largest expressible bound is the ceiling.
  const double s_max = std::nextafter(1.0, 0.0);
  if (!std::isfinite(e) || eps_zk(s_max, coins) < budget.epsilon) {
    double max_representable = eps_zk(s_max, coins);
    throw BudgetUnachievable(
        "zk budget epsilon is not representable; largest representable "
        "epsilon for these coins is about " + std::to_string(max_representable),
        max_representable);
  }
  double qa = 1 - a;
  double qb = 2 * a - 2 + e;
  double qc = 1 - e;
  double s;
  if (std::fabs(qa) < 1e-12) {
    // p -> 0 degenerates the quadratic to s*E + (1-E) = 0.
    s = (e - 1) / e;
  } else {
    // qb > 0 while qa and qc are both negative, so the textbook
    // (-qb + sqrt(disc)) / (2 qa) form subtracts nearly equal magnitudes
    // once E dominates. The Vieta pairing t = -(qb + sqrt(disc)) / 2 with
    // roots t / qa and qc / t is subtraction-free.
    double disc = qb * qb - 4 * qa * qc;
    double t = -0.5 * (qb + std::sqrt(disc));
    double r1 = t / qa;
    double r2 = qc / t;
    bool r1_in = r1 > 0.0 && r1 < 1.0;
    bool r2_in = r2 > 0.0 && r2 < 1.0;
    // eps_zk is strictly monotone in s, so at most one root is valid.
    if (r1_in && r2_in) {
      throw std::logic_error("invert_budget: quadratic root selection failed");
    }
    if (!r1_in && !r2_in) {
      if (r2 < 1.0) {
        throw std::logic_error("invert_budget: quadratic root selection failed");
      }
      // Rounding pushed the near-1 root onto 1.0 exactly; the gate above
      // guarantees the spend point is representable, so start the polish at
      // the largest fraction below 1.
      s = s_max;
    } else {
      s = r1_in ? r1 : r2;
    }
  }
  return polish_zk_root(s, budget.epsilon, coins);
}

double invert_query_counts(double e_y, double n_truthful_scale) {
  return n_truthful_scale - e_y;
}

}  // namespace privstream
