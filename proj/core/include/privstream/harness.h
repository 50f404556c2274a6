#ifndef PRIVSTREAM_HARNESS_H_
#define PRIVSTREAM_HARNESS_H_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "privstream/aggregator.h"
#include "privstream/privacy.h"
#include "privstream/query.h"

namespace privstream {

// ---------------------------------------------------------------------------
// Simulation harness: drives the full client -> relay -> aggregator pipeline
// in process, with known ground truth, under one deterministic seed. The
// same seed and scenario produce byte-identical CSV output.
// ---------------------------------------------------------------------------

struct Scenario {
  uint64_t seed = 1;
  uint32_t clients = 1000;
  uint32_t epochs = 10;
  uint32_t n_strata = 1;

  // "bits": per epoch each client lands in bucket y with probability
  // yes_rates[y] (no record otherwise), so per-bucket truth rates are exact
  // knobs. "records": a numeric field uniform in [records_lo, records_hi).
  std::string workload = "bits";
  std::vector<double> yes_rates;  // bits mode; empty = 0.5/n_buckets each
  double records_lo = 0;
  double records_hi = 1;

  // Probability that a share frame is lost between relay and aggregator.
  double loss_rate = 0;
  // Switch the query to inverted (complementary) reporting after this many
  // emitted windows; 0 means never.
  uint32_t invert_after_windows = 0;

  // Present: bypass budget inversion and force s, p, q.
  std::optional<ExecutionParams> forced_params;
  uint32_t pilot_windows = 0;
  double s_floor = 0.05;

  // Persist joined answers and run one batch query over the whole run with a
  // second sampling round at the aggregator.
  bool historical = false;
  double historical_sampling = 1.0;

  QueryBlock block;
};

// Scenario text: the query-block grammar plus harness keys (seed, clients,
// epochs, strata, workload, yes_rate or yes_rate.<i>, records.lo, records.hi,
// loss_rate, invert_after, params.s, params.p, params.q, pilot_windows,
// s_floor, historical, historical.sampling). '#' starts a comment.
Scenario parse_scenario(const std::string& text);

struct ExperimentResult {
  uint64_t query_id = 0;
  uint64_t population = 0;  // clients x epochs_per_window, the scale of U
  ExecutionParams initial_params;
  ExecutionParams final_params;
  PrivacyReport privacy;  // at final parameters

  std::vector<WindowEstimate> estimates;          // in emission order
  std::vector<std::vector<double>> true_counts;   // matching per-bucket truth

  uint64_t messages_dispatched = 0;
  uint64_t epochs_skipped = 0;  // sampling coin said no
  uint64_t epochs_dropped = 0;  // dispatch failure after retries
  uint64_t shares_lost = 0;     // injected transport loss
  uint64_t bytes_sent = 0;
  JoinCounters joins;
  uint64_t late = 0;
  uint64_t quarantined = 0;
  bool budget_conflict = false;

  std::optional<WindowEstimate> historical;
  double historical_effective_s = 0;  // s_client x aggregator sampling

  double elapsed_seconds = 0;
};

// Runs one scenario end to end. Throws std::invalid_argument on scenario
// inconsistencies (window length or slide not a multiple of the answer
// frequency, bits workload without numeric buckets, rates outside [0,1]).
ExperimentResult run_scenario(const Scenario& scenario);

// One run per sampling fraction, same seed: isolates the effect of s.
std::vector<ExperimentResult> sweep_s(const Scenario& scenario,
                                      const std::vector<double>& s_values);

// n runs differing only by seed (seed, seed + step, ...).
std::vector<ExperimentResult> replicate(const Scenario& scenario, uint32_t n,
                                        uint64_t seed_step = 1);

// Estimates joined with ground truth, one row per window per bucket; stable
// formatting, byte-identical for identical scenarios.
extern const char kExperimentCsvHeader[];
std::string experiment_csv(const ExperimentResult& result);

struct AccuracySummary {
  double max_abs_error = 0;
  double max_rel_error = 0;        // over buckets with nonzero truth
  double mean_rel_error = 0;
  double within_bound_fraction = 1;  // |estimate - truth| <= half_width
  uint64_t rows = 0;
};
AccuracySummary summarize_accuracy(const ExperimentResult& result);

}  // namespace privstream

#endif  // PRIVSTREAM_HARNESS_H_
