#include "privstream/aggregator.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "privstream/rng.h"

namespace privstream {

// ---------------------------------------------------------------------------
// JoinBuffer
// ---------------------------------------------------------------------------

JoinBuffer::JoinBuffer(uint32_t n_proxies, int64_t timeout_ms)
    : n_proxies_(n_proxies), timeout_ms_(timeout_ms) {
  if (n_proxies_ < 2) {
    throw std::invalid_argument("JoinBuffer: need at least two proxies");
  }
}

std::optional<PlainMessage> JoinBuffer::offer(const ShareMessage& share,
                                              int64_t now_ms) {
  if (completed_ids_.count(share.message_id) != 0) {
    // Already joined (or poisoned by a conflicting duplicate).
    ++counters_.duplicate;
    return std::nullopt;
  }
  if (share.n_proxies != n_proxies_ || share.share_index < 1 ||
      share.share_index > share.n_proxies || share.body.empty()) {
    ++counters_.corrupt;
    return std::nullopt;
  }

  auto [it, inserted] = pending_.try_emplace(share.message_id);
  PendingSet& set = it->second;
  if (inserted) {
    set.deadline_ms = now_ms + timeout_ms_;
  }

  for (const ShareMessage& have : set.shares) {
    if (have.share_index != share.share_index) continue;
    if (have.body == share.body) return std::nullopt;  // benign retransmit
    // Conflicting bodies for one (id, index): drop the whole set and block
    // the id so stragglers cannot resurrect it.
    ++counters_.duplicate;
    pending_.erase(it);
    completed_ids_.insert(share.message_id);
    return std::nullopt;
  }
  set.shares.push_back(share);
  if (set.shares.size() < n_proxies_) return std::nullopt;

  std::optional<PlainMessage> joined;
  try {
    joined = join_decrypt(set.shares);
    ++counters_.joined;
  } catch (const MissingShares&) {
    // Unreachable: the set is complete by construction.
    ++counters_.corrupt;
  } catch (const std::runtime_error&) {  // MalformedShare, CorruptMessage
    ++counters_.corrupt;
  }
  pending_.erase(it);
  // Ids are 128-bit random, so remembering all of them is the simple and
  // safe duplicate guard at this scale.
  completed_ids_.insert(share.message_id);
  return joined;
}

void JoinBuffer::expire_stale(int64_t now_ms) {
  for (auto it = pending_.begin(); it != pending_.end();) {
    if (it->second.deadline_ms <= now_ms) {
      ++counters_.expired;
      it = pending_.erase(it);
    } else {
      ++it;
    }
  }
}

// ---------------------------------------------------------------------------
// Sliding windows
// ---------------------------------------------------------------------------

namespace {

void window_insert(Window& win, PlainMessage msg) {
  ++win.participation[msg.stratum_id];
  win.messages.push_back(std::move(msg));
}

void window_evict_before(Window& win, int64_t start_ms) {
  auto keep = std::remove_if(
      win.messages.begin(), win.messages.end(), [&](const PlainMessage& m) {
        if (m.timestamp_ms >= start_ms) return false;
        auto it = win.participation.find(m.stratum_id);
        if (it != win.participation.end() && --it->second == 0) {
          win.participation.erase(it);
        }
        return true;
      });
  win.messages.erase(keep, win.messages.end());
}

}  // namespace

AdvanceOutcome advance_window(Window& win, int64_t slide_ms, int64_t now_ms,
                              std::vector<PlainMessage> incoming) {
  if (slide_ms <= 0) throw std::invalid_argument("advance_window: slide <= 0");
  AdvanceOutcome out;
  for (PlainMessage& msg : incoming) {
    if (msg.timestamp_ms >= win.start_ms && msg.timestamp_ms < win.end_ms) {
      window_insert(win, std::move(msg));
    } else {
      out.quarantined.push_back(std::move(msg));
    }
  }
  if (now_ms >= win.end_ms) {
    out.emitted = win;  // snapshot before eviction
    win.start_ms += slide_ms;
    win.end_ms += slide_ms;
    window_evict_before(win, win.start_ms);
  }
  return out;
}

WindowPipeline::WindowPipeline(int64_t base_ms, int64_t window_length_ms,
                               int64_t slide_ms)
    : slide_ms_(slide_ms) {
  if (window_length_ms <= 0 || slide_ms <= 0 || slide_ms > window_length_ms) {
    throw std::invalid_argument("WindowPipeline: invalid window geometry");
  }
  window_.start_ms = base_ms;
  window_.end_ms = base_ms + window_length_ms;
}

void WindowPipeline::feed(PlainMessage msg) {
  if (msg.timestamp_ms < window_.start_ms) {
    // Missed every window it belonged to.
    ++late_;
    return;
  }
  if (msg.timestamp_ms < window_.end_ms) {
    window_insert(window_, std::move(msg));
    return;
  }
  if (msg.timestamp_ms < window_.end_ms + slide_ms_) {
    // Belongs to the next slide; held until the boundary passes.
    pending_.push_back(std::move(msg));
    return;
  }
  ++quarantined_;
  std::cerr << "window: quarantined message " << quarantined_
            << " with timestamp " << msg.timestamp_ms << " beyond "
            << window_.end_ms + slide_ms_ << "\n";
}

std::vector<Window> WindowPipeline::advance(int64_t now_ms) {
  std::vector<Window> emitted;
  while (now_ms >= window_.end_ms) {
    // After one slide the pending range [end, end + slide) becomes part of
    // the window, so drain it into this advance step.
    std::vector<PlainMessage> due;
    due.reserve(pending_.size());
    while (!pending_.empty()) {
      due.push_back(std::move(pending_.front()));
      pending_.pop_front();
    }
    int64_t boundary = window_.end_ms;
    AdvanceOutcome out = advance_window(window_, slide_ms_, boundary, std::move(due));
    for (PlainMessage& msg : out.quarantined) {
      // advance_window already slid the window, so messages that were ahead
      // of the old range may now fall inside the current one.
      if (msg.timestamp_ms >= window_.end_ms) {
        pending_.push_back(std::move(msg));
      } else if (msg.timestamp_ms >= window_.start_ms) {
        window_insert(window_, std::move(msg));
      } else {
        ++late_;
      }
    }
    if (!out.emitted) break;  // defensive; now_ms >= end guarantees emission
    emitted.push_back(std::move(*out.emitted));
  }
  return emitted;
}

// ---------------------------------------------------------------------------
// Window estimation
// ---------------------------------------------------------------------------

WindowEstimate estimate_window(
    const Window& win, const Query& query, const ExecutionParams& params,
    const std::map<uint16_t, uint64_t>& population_per_stratum,
    double confidence_level, const std::vector<double>* pilot_yes_rates) {
  const size_t n_buckets = query.buckets.size();
  RRCoins coins{params.p, params.q};
  check_coins(coins);

  WindowEstimate est;
  est.query_id = query.query_id;
  est.start_ms = win.start_ms;
  est.end_ms = win.end_ms;
  est.confidence_level = confidence_level;
  est.inverted = query.inverted;
  est.buckets.resize(n_buckets);

  // Per-stratum randomized bit sums. Strata absent from the registered
  // population cannot be scaled, so their messages are skipped.
  struct StratumBits {
    uint64_t count = 0;
    std::vector<uint64_t> sums;
  };
  std::map<uint16_t, StratumBits> by_stratum;
  for (const PlainMessage& msg : win.messages) {
    if (msg.payload_bits.size() != n_buckets) continue;  // join validated widths
    if (population_per_stratum.find(msg.stratum_id) ==
        population_per_stratum.end()) {
      est.low_sample = true;
      continue;
    }
    StratumBits& sb = by_stratum[msg.stratum_id];
    if (sb.sums.empty()) sb.sums.assign(n_buckets, 0);
    ++sb.count;
    for (size_t y = 0; y < n_buckets; ++y) sb.sums[y] += msg.payload_bits[y];
  }

  uint64_t population_total = 0;
  for (const auto& [sid, size] : population_per_stratum) {
    population_total += size;
  }
  uint64_t sampled_total = 0;
  for (const auto& [sid, sb] : by_stratum) sampled_total += sb.count;
  est.sample_size = sampled_total;

  const double p = coins.p;
  const double q = coins.q;
  const double u = static_cast<double>(population_total);
  const double u_prime = static_cast<double>(sampled_total);

  // Whether any registered stratum went unsampled: its share of the
  // population cannot be represented, so the estimate is flagged.
  for (const auto& [sid, size] : population_per_stratum) {
    if (size > 0 && by_stratum.find(sid) == by_stratum.end()) {
      est.low_sample = true;
    }
  }

  for (size_t y = 0; y < n_buckets; ++y) {
    BucketEstimate& be = est.buckets[y];
    for (const auto& [sid, sb] : by_stratum) be.r_y += sb.sums[y];

    if (sampled_total == 0 || population_total == 0) {
      est.low_sample = true;
      continue;  // all-zero bucket row
    }
    be.e_y = debias_count({sampled_total, be.r_y, coins});

    // Population-scale value and sampling bound over the randomized bits.
    bool have_interval = sampled_total >= 2;
    double randomized_value = 0;
    double sampling_half_width = 0;
    if (have_interval) {
      std::vector<StratumStat> stats;
      stats.reserve(by_stratum.size());
      for (const auto& [sid, sb] : by_stratum) {
        StratumStat st;
        st.population_size = population_per_stratum.at(sid);
        st.sample_size = sb.count;
        st.sample_sum = static_cast<double>(sb.sums[y]);
        // Sample variance of 0/1 values: s(b - s) / (b (b - 1)).
        if (sb.count >= 2) {
          double b = static_cast<double>(sb.count);
          double s = static_cast<double>(sb.sums[y]);
          st.sample_variance = s * (b - s) / (b * (b - 1.0));
        }
        stats.push_back(st);
      }
      try {
        Estimate samp = stratified_estimate(stats, confidence_level);
        randomized_value = samp.value;
        sampling_half_width = samp.half_width;
        est.low_sample = est.low_sample || samp.low_sample;
      } catch (const InsufficientSample&) {
        have_interval = false;
      }
    }
    if (!have_interval) {
      // Too few samples for a variance estimate: report the scaled value
      // with a zero interval and flag the row.
      for (const auto& [sid, sb] : by_stratum) {
        double scale = static_cast<double>(population_per_stratum.at(sid)) /
                       static_cast<double>(sb.count);
        randomized_value += scale * static_cast<double>(sb.sums[y]);
      }
      sampling_half_width = 0;
      est.low_sample = true;
    }

    // De-bias: E[R] = p A + (1-p) q U at population scale, so the same
    // correction applies after scaling; the interval divides by p.
    be.estimate = (randomized_value - (1.0 - p) * q * u) / p;
    double hw_sampling = sampling_half_width / p;

    double hw_rr = 0;
    if (have_interval) {
      std::optional<double> pilot;
      if (pilot_yes_rates != nullptr && y < pilot_yes_rates->size()) {
        pilot = std::clamp((*pilot_yes_rates)[y], 0.0, 1.0);
      }
      hw_rr = rr_error_halfwidth(coins, sampled_total, confidence_level, pilot) *
              (u / u_prime);
    }
    be.half_width = combine_errors(hw_sampling, hw_rr);
  }

  if (query.inverted) {
    // Complementary counts at both scales; the error bound is symmetric.
    for (BucketEstimate& be : est.buckets) {
      be.e_y = invert_query_counts(be.e_y, u_prime);
      be.estimate = invert_query_counts(be.estimate, u);
    }
  }
  return est;
}

// ---------------------------------------------------------------------------
// Adaptive feedback
// ---------------------------------------------------------------------------

FeedbackResult adaptive_feedback(const WindowEstimate& est, const Budget& budget,
                                 const ExecutionParams& current, double s_floor) {
  FeedbackResult res;
  res.params = current;
  if (!budget.error_target.has_value() || est.sample_size == 0) return res;
  const double target = *budget.error_target;
  if (target <= 0) throw std::invalid_argument("adaptive_feedback: target <= 0");
  if (s_floor <= 0 || s_floor > 1) {
    throw std::invalid_argument("adaptive_feedback: s_floor outside (0, 1]");
  }

  // Worst relative half-width across buckets with a usable denominator.
  double worst = -1;
  for (const BucketEstimate& be : est.buckets) {
    if (std::abs(be.estimate) < 1e-9) continue;
    worst = std::max(worst, be.half_width / std::abs(be.estimate));
  }
  if (worst < 0) return res;  // nothing measurable this window

  RRCoins coins{current.p, current.q};
  if (worst > target) {
    double desired = current.s * 1.25;
    // Largest s the budget allows with these coins. A dp budget looser than
    // the coins can ever spend allows full sampling.
    double ceiling = 1.0;
    try {
      ceiling = invert_budget(budget, coins);
    } catch (const BudgetUnachievable&) {
      ceiling = 1.0;
    }
    double next = std::min({desired, ceiling, 1.0});
    if (desired > ceiling + 1e-15) res.budget_conflict = true;
    if (std::abs(next - current.s) > 1e-15) {
      res.params.s = next;
      res.changed = true;
    }
  } else if (worst < 0.5 * target) {
    double next = std::max(current.s * 0.9, s_floor);
    if (next < current.s - 1e-15) {
      res.params.s = next;
      res.changed = true;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// CSV emission
// ---------------------------------------------------------------------------

const char kWindowEstimateCsvHeader[] =
    "query_id,window_start_ms,window_end_ms,bucket_index,r_y,e_y,estimate,"
    "half_width,confidence_level,flags";

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

std::string window_estimate_csv_rows(const WindowEstimate& est) {
  std::string flags;
  if (est.low_sample) flags += "low-sample";
  if (est.inverted) {
    if (!flags.empty()) flags += '|';
    flags += "inverted";
  }
  std::ostringstream out;
  for (size_t y = 0; y < est.buckets.size(); ++y) {
    const BucketEstimate& be = est.buckets[y];
    out << est.query_id << ',' << est.start_ms << ',' << est.end_ms << ',' << y
        << ',' << be.r_y << ',' << fmt_double(be.e_y) << ','
        << fmt_double(be.estimate) << ',' << fmt_double(be.half_width) << ','
        << fmt_double(est.confidence_level) << ',' << flags << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Aggregator
// ---------------------------------------------------------------------------

Aggregator::Aggregator(Config config)
    : config_(std::move(config)),
      joins_(config_.n_proxies,
             /*timeout_ms=*/config_.join_timeout_factor * 1000) {
  check_coins(config_.coins);
  if (config_.s_floor <= 0 || config_.s_floor > 1) {
    throw std::invalid_argument("Aggregator: s_floor outside (0, 1]");
  }
  if (config_.historical_root.has_value()) {
    historical_ = std::make_unique<HistoricalStore>(*config_.historical_root);
  }
}

ExecutionParams Aggregator::publish_query(const Query& query,
                                          const Budget& budget) {
  ExecutionParams params;
  params.p = config_.coins.p;
  params.q = config_.coins.q;
  params.s = invert_budget(budget, config_.coins);  // may throw
  return publish_query(query, budget, params);
}

ExecutionParams Aggregator::publish_query(const Query& query,
                                          const Budget& budget,
                                          const ExecutionParams& forced_params) {
  auto violations = validate_query(query);
  if (!violations.empty()) {
    std::string msg = "publish_query: invalid query:";
    for (const std::string& v : violations) msg += " " + v + ";";
    throw std::invalid_argument(msg);
  }
  if (queries_.count(query.query_id) != 0) {
    throw std::invalid_argument("publish_query: duplicate query_id " +
                                std::to_string(query.query_id));
  }
  check_coins({forced_params.p, forced_params.q});
  if (!(forced_params.s > 0) || forced_params.s > 1) {
    throw std::invalid_argument("publish_query: s outside (0, 1]");
  }

  QueryState state;
  state.query = query;
  state.budget = budget;
  state.params = forced_params;
  state.pipeline = std::make_unique<WindowPipeline>(
      config_.base_time_ms, query.window_length_ms, query.slide_interval_ms);
  state.cumulative_e_y.assign(query.buckets.size(), 0.0);
  queries_.emplace(query.query_id, std::move(state));

  // Shares of one message leave the client together, so relative delivery
  // skew beyond a couple of slides means the set is lost.
  int64_t max_slide = 0;
  for (const auto& [qid, st] : queries_) {
    max_slide = std::max(max_slide, st.query.slide_interval_ms);
  }
  joins_.set_timeout_ms(config_.join_timeout_factor * max_slide);

  hub_.publish(query, forced_params);
  return forced_params;
}

void Aggregator::register_population(
    uint64_t query_id, const std::map<uint16_t, uint64_t>& per_stratum) {
  auto it = queries_.find(query_id);
  if (it == queries_.end()) {
    throw std::invalid_argument("register_population: unknown query_id");
  }
  it->second.population = per_stratum;
}

void Aggregator::ingest_share(const ShareMessage& share, int64_t now_ms) {
  std::optional<PlainMessage> msg = joins_.offer(share, now_ms);
  if (!msg.has_value()) return;
  auto it = queries_.find(msg->query_id);
  if (it == queries_.end()) {
    ++unknown_query_;
    return;
  }
  if (historical_) historical_->append(*msg);
  it->second.pipeline->feed(std::move(*msg));
}

std::vector<double> Aggregator::pilot_rates(const QueryState& state) const {
  if (config_.pilot_windows == 0 ||
      state.windows_emitted < config_.pilot_windows ||
      state.cumulative_samples == 0) {
    return {};
  }
  std::vector<double> rates(state.cumulative_e_y.size());
  for (size_t y = 0; y < rates.size(); ++y) {
    rates[y] = std::clamp(
        state.cumulative_e_y[y] / static_cast<double>(state.cumulative_samples),
        0.0, 1.0);
  }
  return rates;
}

void Aggregator::run_feedback(QueryState& state, const WindowEstimate& est) {
  FeedbackResult fb =
      adaptive_feedback(est, state.budget, state.params, config_.s_floor);
  state.feedback_conflict = fb.budget_conflict;
  if (fb.changed) {
    state.params = fb.params;
    hub_.publish(state.query, state.params);
  }
}

std::vector<WindowEstimate> Aggregator::advance_time(int64_t now_ms) {
  joins_.expire_stale(now_ms);
  std::vector<WindowEstimate> out;
  for (auto& [qid, state] : queries_) {
    RRCoins coins{state.params.p, state.params.q};
    for (Window& win : state.pipeline->advance(now_ms)) {
      std::vector<double> rates = pilot_rates(state);
      WindowEstimate est = estimate_window(
          win, state.query, state.params, state.population,
          state.budget.confidence_level, rates.empty() ? nullptr : &rates);

      // Pilot accumulation always uses the non-inverted de-biased rate.
      if (est.sample_size > 0) {
        for (size_t y = 0; y < est.buckets.size(); ++y) {
          state.cumulative_e_y[y] +=
              debias_count({est.sample_size, est.buckets[y].r_y, coins});
        }
        state.cumulative_samples += est.sample_size;
      }
      ++state.windows_emitted;
      state.latest = est;
      run_feedback(state, est);
      out.push_back(std::move(est));
    }
  }
  return out;
}

void Aggregator::set_inverted(uint64_t query_id, bool inverted) {
  auto it = queries_.find(query_id);
  if (it == queries_.end()) {
    throw std::invalid_argument("set_inverted: unknown query_id");
  }
  it->second.query.inverted = inverted;
}

const Query* Aggregator::find_query(uint64_t query_id) const {
  auto it = queries_.find(query_id);
  return it == queries_.end() ? nullptr : &it->second.query;
}

std::optional<Budget> Aggregator::find_budget(uint64_t query_id) const {
  auto it = queries_.find(query_id);
  if (it == queries_.end()) return std::nullopt;
  return it->second.budget;
}

ExecutionParams Aggregator::current_params(uint64_t query_id) const {
  auto it = queries_.find(query_id);
  if (it == queries_.end()) {
    throw std::invalid_argument("current_params: unknown query_id");
  }
  return it->second.params;
}

std::optional<WindowEstimate> Aggregator::latest_estimate(
    uint64_t query_id) const {
  auto it = queries_.find(query_id);
  if (it == queries_.end()) return std::nullopt;
  return it->second.latest;
}

bool Aggregator::last_feedback_conflict(uint64_t query_id) const {
  auto it = queries_.find(query_id);
  return it != queries_.end() && it->second.feedback_conflict;
}

WindowEstimate Aggregator::historical_query(uint64_t query_id, int64_t from_ms,
                                            int64_t to_ms,
                                            double aggregator_sampling,
                                            uint64_t seed) {
  if (!historical_) {
    throw std::runtime_error("historical_query: no historical store configured");
  }
  if (!(aggregator_sampling > 0) || aggregator_sampling > 1) {
    throw std::invalid_argument(
        "historical_query: sampling probability outside (0, 1]");
  }
  if (from_ms >= to_ms) {
    throw std::invalid_argument("historical_query: empty time range");
  }
  auto it = queries_.find(query_id);
  if (it == queries_.end()) {
    throw std::invalid_argument("historical_query: unknown query_id");
  }
  QueryState& state = it->second;

  historical_->flush();
  std::vector<PlainMessage> stored =
      historical_->read_range(query_id, from_ms, to_ms);
  if (stored.empty()) {
    throw std::runtime_error("historical_query: no stored answers in range");
  }

  // Second sampling round at the aggregator: the effective sampling
  // probability composes as s_client x aggregator_sampling.
  Rng rng(seed);
  Window win;
  win.start_ms = from_ms;
  win.end_ms = to_ms;
  for (PlainMessage& msg : stored) {
    if (aggregator_sampling >= 1.0 || rng.bernoulli(aggregator_sampling)) {
      window_insert(win, std::move(msg));
    }
  }
  return estimate_window(win, state.query, state.params, state.population,
                         state.budget.confidence_level);
}

uint64_t Aggregator::quarantined() const {
  uint64_t total = 0;
  for (const auto& [qid, state] : queries_) {
    total += state.pipeline->quarantined();
  }
  return total;
}

uint64_t Aggregator::late() const {
  uint64_t total = 0;
  for (const auto& [qid, state] : queries_) {
    total += state.pipeline->late();
  }
  return total;
}

uint64_t Aggregator::windows_emitted(uint64_t query_id) const {
  auto it = queries_.find(query_id);
  return it == queries_.end() ? 0 : it->second.windows_emitted;
}

std::vector<uint64_t> Aggregator::query_ids() const {
  std::vector<uint64_t> ids;
  ids.reserve(queries_.size());
  for (const auto& [qid, state] : queries_) ids.push_back(qid);
  return ids;
}

}  // namespace privstream
