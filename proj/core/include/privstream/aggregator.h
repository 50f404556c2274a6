#ifndef PRIVSTREAM_AGGREGATOR_H_
#define PRIVSTREAM_AGGREGATOR_H_

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <vector>

#include "privstream/client.h"
#include "privstream/historical.h"
#include "privstream/privacy.h"
#include "privstream/query.h"
#include "privstream/sampling.h"
#include "privstream/transport.h"

namespace privstream {

// ---------------------------------------------------------------------------
// Aggregator: joins shares by message id, decrypts, maintains sliding
// windows, and produces de-biased per-bucket estimates with combined
// confidence intervals.
// ---------------------------------------------------------------------------

struct JoinCounters {
  uint64_t joined = 0;
  uint64_t expired = 0;    // incomplete sets past the join timeout
  uint64_t corrupt = 0;    // checksum or framing failures at join time
  uint64_t duplicate = 0;  // message_id seen again after joining, or
                           // conflicting bodies for one (id, index)
};

// Pairs shares by message_id. A message_id leaves pending exactly once:
// completed, expired, or dropped as corrupt/duplicate.
class JoinBuffer {
 public:
  JoinBuffer(uint32_t n_proxies, int64_t timeout_ms);

  // Returns the decrypted message when this share completes its set.
  std::optional<PlainMessage> offer(const ShareMessage& share, int64_t now_ms);
  // Discards pending sets whose deadline passed.
  void expire_stale(int64_t now_ms);
  void set_timeout_ms(int64_t timeout_ms) { timeout_ms_ = timeout_ms; }
  const JoinCounters& counters() const { return counters_; }
  size_t pending() const { return pending_.size(); }

 private:
  struct PendingSet {
    int64_t deadline_ms = 0;
    std::vector<ShareMessage> shares;
  };

  uint32_t n_proxies_;
  int64_t timeout_ms_;
  std::map<MessageId, PendingSet> pending_;
  std::set<MessageId> completed_ids_;
  JoinCounters counters_;
};

// One sliding window [start_ms, end_ms), end - start = w.
struct Window {
  int64_t start_ms = 0;
  int64_t end_ms = 0;
  std::vector<PlainMessage> messages;               // timestamps in [start, end)
  std::map<uint16_t, uint64_t> participation;       // per-stratum counts
};

struct BucketEstimate {
  uint64_t r_y = 0;       // raw 1-bit count over the window sample
  double e_y = 0;         // de-biased count at sample scale
  double estimate = 0;    // de-biased count scaled to the population
  double half_width = 0;  // combined sampling + randomization bound
};

struct WindowEstimate {
  uint64_t query_id = 0;
  int64_t start_ms = 0;
  int64_t end_ms = 0;
  uint64_t sample_size = 0;  // U': messages aggregated in this window
  double confidence_level = 0.95;
  bool low_sample = false;
  bool inverted = false;
  std::vector<BucketEstimate> buckets;
};

// Orders incoming messages into sliding windows. Emission happens when the
// watermark (advance) crosses the current window end; each message is then
// part of ceil(w / delta) consecutive emissions.
class WindowPipeline {
 public:
  WindowPipeline(int64_t base_ms, int64_t window_length_ms, int64_t slide_ms);

  void feed(PlainMessage msg);
  // Emits one Window snapshot per slide boundary crossed by now_ms.
  std::vector<Window> advance(int64_t now_ms);

  const Window& current() const { return window_; }
  uint64_t late() const { return late_; }
  uint64_t quarantined() const { return quarantined_; }

 private:
  int64_t slide_ms_;
  Window window_;
  std::deque<PlainMessage> pending_;  // timestamps in [end, end + slide)
  uint64_t late_ = 0;
  uint64_t quarantined_ = 0;
};

// One watermark step: inserts incoming items, emits a snapshot when now_ms
// reached the window end, then slides by slide_ms and evicts items below the
// new start. Incoming timestamps must lie in [win.start_ms, win.end_ms);
// others are returned as quarantined. Call in a loop until emitted is empty
// to cross several boundaries.
struct AdvanceOutcome {
  std::optional<Window> emitted;  // boundary snapshot, taken before eviction
  std::vector<PlainMessage> quarantined;
};
AdvanceOutcome advance_window(Window& win, int64_t slide_ms, int64_t now_ms,
                              std::vector<PlainMessage> incoming);

// Per-bucket de-biased estimates with combined error bounds.
//   R_y: raw 1-bit count; E_y = debias at sample scale; the population value
//   comes from the SRS/stratified estimator over the randomized bits,
//   de-biased (divide the randomized-scale bound by p), plus the
//   randomized-response bound scaled by U/U'. Inverted queries report the
//   complementary counts at both scales.
// Strata present in the window but absent from population_per_stratum are
// skipped and counted via the returned estimate's sample_size delta.
WindowEstimate estimate_window(
    const Window& win, const Query& query, const ExecutionParams& params,
    const std::map<uint16_t, uint64_t>& population_per_stratum,
    double confidence_level = 0.95,
    const std::vector<double>* pilot_yes_rates = nullptr);

// Adaptive feedback: raise s (x1.25) while the worst relative half-width
// exceeds the target, clamped so the privacy budget still holds; lower s
// (x0.9, floored at s_floor) when the bound is under half the target.
// p and q never change mid-query.
struct FeedbackResult {
  ExecutionParams params;
  bool changed = false;
  // The clamp bound: the target is unreachable within the epsilon budget.
  bool budget_conflict = false;
};
FeedbackResult adaptive_feedback(const WindowEstimate& est, const Budget& budget,
                                 const ExecutionParams& current,
                                 double s_floor = 0.05);

// Broadcast channel from the aggregator to subscribed agents. A republished
// query_id refreshes parameters on the agent side.
class QueryHub {
 public:
  using Subscriber = std::function<void(const Query&, const ExecutionParams&)>;

  void subscribe(Subscriber s) { subscribers_.push_back(std::move(s)); }
  void publish(const Query& query, const ExecutionParams& params) {
    for (auto& s : subscribers_) s(query, params);
  }

 private:
  std::vector<Subscriber> subscribers_;
};

// CSV emission: one row per window per bucket.
extern const char kWindowEstimateCsvHeader[];
std::string window_estimate_csv_rows(const WindowEstimate& est);

// The full per-query streaming state machine.
class Aggregator {
 public:
  struct Config {
    RRCoins coins{0.9, 0.6};
    uint32_t n_proxies = 2;
    // Join timeout = factor x the largest registered slide interval: shares
    // of one message are sent together, so skew beyond a slide means loss.
    int64_t join_timeout_factor = 2;
    double s_floor = 0.05;
    // Windows aggregated before the randomized-response bound switches from
    // worst-case to the measured pilot yes-rate. 0 keeps worst-case mode.
    uint32_t pilot_windows = 0;
    std::optional<std::filesystem::path> historical_root;
    int64_t base_time_ms = 0;
  };

  explicit Aggregator(Config config);

  // Converts the budget into execution parameters (coins from config, s via
  // budget inversion), registers the window pipeline, and broadcasts the
  // query. Throws BudgetUnachievable or std::invalid_argument (duplicate
  // query_id, invalid query).
  ExecutionParams publish_query(const Query& query, const Budget& budget);
  // Same, but with explicitly chosen parameters (simulation path).
  ExecutionParams publish_query(const Query& query, const Budget& budget,
                                const ExecutionParams& forced_params);

  // Population counts per stratum, fixed at registration time.
  void register_population(uint64_t query_id,
                           const std::map<uint16_t, uint64_t>& per_stratum);

  void ingest_share(const ShareMessage& share, int64_t now_ms);
  // Advances the watermark for every query; emits completed windows and runs
  // the feedback loop.
  std::vector<WindowEstimate> advance_time(int64_t now_ms);

  void set_inverted(uint64_t query_id, bool inverted);
  const Query* find_query(uint64_t query_id) const;
  std::optional<Budget> find_budget(uint64_t query_id) const;
  ExecutionParams current_params(uint64_t query_id) const;
  std::optional<WindowEstimate> latest_estimate(uint64_t query_id) const;
  bool last_feedback_conflict(uint64_t query_id) const;

  // Batch analytics over the historical store with a second sampling round
  // at this end; the effective sampling probability composes as
  // s_client x aggregator_sampling. Requires a historical_root.
  WindowEstimate historical_query(uint64_t query_id, int64_t from_ms,
                                  int64_t to_ms, double aggregator_sampling,
                                  uint64_t seed);

  QueryHub& hub() { return hub_; }
  const JoinCounters& join_counters() const { return joins_.counters(); }
  uint64_t quarantined() const;
  uint64_t late() const;
  uint64_t windows_emitted(uint64_t query_id) const;
  uint64_t unknown_query() const { return unknown_query_; }
  std::vector<uint64_t> query_ids() const;
  const Config& config() const { return config_; }

 private:
  struct QueryState {
    Query query;
    Budget budget;
    ExecutionParams params;
    std::map<uint16_t, uint64_t> population;
    std::unique_ptr<WindowPipeline> pipeline;
    std::optional<WindowEstimate> latest;
    uint64_t windows_emitted = 0;
    bool feedback_conflict = false;
    // Cumulative de-biased sums for pilot-rate calibration.
    std::vector<double> cumulative_e_y;
    uint64_t cumulative_samples = 0;
  };

  void run_feedback(QueryState& state, const WindowEstimate& est);
  std::vector<double> pilot_rates(const QueryState& state) const;

  Config config_;
  JoinBuffer joins_;
  QueryHub hub_;
  std::map<uint64_t, QueryState> queries_;
  std::unique_ptr<HistoricalStore> historical_;
  uint64_t unknown_query_ = 0;
};

}  // namespace privstream

#endif  // PRIVSTREAM_AGGREGATOR_H_
