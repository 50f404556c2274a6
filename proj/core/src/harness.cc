#include "privstream/harness.h"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "privstream/client.h"
#include "privstream/relay.h"
#include "privstream/rng.h"

namespace privstream {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& value, const std::string& key) {
  try {
    size_t pos = 0;
    double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("scenario key " + key + ": bad number '" +
                                value + "'");
  }
}

uint64_t parse_u64(const std::string& value, const std::string& key) {
  try {
    size_t pos = 0;
    uint64_t v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("scenario key " + key + ": bad integer '" +
                                value + "'");
  }
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

// A value guaranteed to fall inside the half-open range.
double range_representative(const BucketRange& r) {
  if (std::isfinite(r.lo)) return r.lo;
  if (std::isfinite(r.hi)) return r.hi - 1.0;
  return 0.0;
}

std::filesystem::path fresh_store_dir() {
  static std::atomic<uint64_t> counter{0};
  return std::filesystem::temp_directory_path() /
         ("privstream-harness-" + std::to_string(::getpid()) + "-" +
          std::to_string(counter.fetch_add(1)));
}

}  // namespace

// ---------------------------------------------------------------------------
// Scenario parsing
// ---------------------------------------------------------------------------

Scenario parse_scenario(const std::string& text) {
  Scenario sc;
  std::string block_text;
  std::optional<double> default_yes_rate;
  std::map<size_t, double> yes_overrides;
  std::optional<double> forced_s, forced_p, forced_q;

  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("scenario line " + std::to_string(line_no) +
                                  ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));

    if (key == "seed") {
      sc.seed = parse_u64(value, key);
    } else if (key == "clients") {
      sc.clients = static_cast<uint32_t>(parse_u64(value, key));
    } else if (key == "epochs") {
      sc.epochs = static_cast<uint32_t>(parse_u64(value, key));
    } else if (key == "strata") {
      sc.n_strata = static_cast<uint32_t>(parse_u64(value, key));
    } else if (key == "workload") {
      sc.workload = value;
    } else if (key == "yes_rate") {
      default_yes_rate = parse_double(value, key);
    } else if (key.rfind("yes_rate.", 0) == 0) {
      size_t idx = parse_u64(key.substr(9), key);
      yes_overrides[idx] = parse_double(value, key);
    } else if (key == "records.lo") {
      sc.records_lo = parse_double(value, key);
    } else if (key == "records.hi") {
      sc.records_hi = parse_double(value, key);
    } else if (key == "loss_rate") {
      sc.loss_rate = parse_double(value, key);
    } else if (key == "invert_after") {
      sc.invert_after_windows = static_cast<uint32_t>(parse_u64(value, key));
    } else if (key == "params.s") {
      forced_s = parse_double(value, key);
    } else if (key == "params.p") {
      forced_p = parse_double(value, key);
    } else if (key == "params.q") {
      forced_q = parse_double(value, key);
    } else if (key == "pilot_windows") {
      sc.pilot_windows = static_cast<uint32_t>(parse_u64(value, key));
    } else if (key == "s_floor") {
      sc.s_floor = parse_double(value, key);
    } else if (key == "historical") {
      sc.historical = (value == "1" || value == "true");
    } else if (key == "historical.sampling") {
      sc.historical_sampling = parse_double(value, key);
    } else {
      // Everything else belongs to the embedded query block.
      block_text += line;
      block_text += '\n';
    }
  }

  sc.block = parse_query_block(block_text);

  if (forced_s || forced_p || forced_q) {
    ExecutionParams params;  // defaults s=1, p=0.9, q=0.6
    if (forced_s) params.s = *forced_s;
    if (forced_p) params.p = *forced_p;
    if (forced_q) params.q = *forced_q;
    sc.forced_params = params;
  }

  size_t n = sc.block.query.buckets.size();
  if (default_yes_rate || !yes_overrides.empty()) {
    sc.yes_rates.assign(n, default_yes_rate.value_or(0.5 / std::max<size_t>(n, 1)));
    for (const auto& [idx, rate] : yes_overrides) {
      if (idx >= n) {
        throw std::invalid_argument("yes_rate." + std::to_string(idx) +
                                    ": bucket index out of range");
      }
      sc.yes_rates[idx] = rate;
    }
  }
  return sc;
}

// ---------------------------------------------------------------------------
// Scenario execution
// ---------------------------------------------------------------------------

namespace {

void validate_scenario(const Scenario& sc) {
  const Query& query = sc.block.query;
  if (sc.clients == 0) throw std::invalid_argument("scenario: clients == 0");
  if (sc.epochs == 0) throw std::invalid_argument("scenario: epochs == 0");
  if (sc.n_strata == 0 || sc.n_strata > sc.clients) {
    throw std::invalid_argument("scenario: strata outside [1, clients]");
  }
  if (sc.workload != "bits" && sc.workload != "records") {
    throw std::invalid_argument("scenario: unknown workload '" + sc.workload + "'");
  }
  if (sc.loss_rate < 0 || sc.loss_rate >= 1) {
    throw std::invalid_argument("scenario: loss_rate outside [0, 1)");
  }
  int64_t f = query.answer_frequency_ms;
  if (f <= 0 || query.window_length_ms % f != 0 ||
      query.slide_interval_ms % f != 0) {
    // Windows must aggregate whole epochs, or the population scale U would
    // change from window to window.
    throw std::invalid_argument(
        "scenario: window length and slide must be multiples of the answer "
        "frequency");
  }
  if (sc.workload == "bits" &&
      query.buckets.kind != BucketSpec::Kind::kNumericRanges) {
    throw std::invalid_argument("scenario: bits workload needs numeric buckets");
  }
  if (sc.workload == "records" && !(sc.records_hi > sc.records_lo)) {
    throw std::invalid_argument("scenario: records.hi must exceed records.lo");
  }
  if (!sc.yes_rates.empty()) {
    if (sc.yes_rates.size() != query.buckets.size()) {
      throw std::invalid_argument("scenario: yes_rate count != bucket count");
    }
    double sum = 0;
    for (double r : sc.yes_rates) {
      if (r < 0 || r > 1) throw std::invalid_argument("scenario: yes_rate outside [0, 1]");
      sum += r;
    }
    if (sum > 1 + 1e-9) {
      throw std::invalid_argument("scenario: yes_rates sum above 1");
    }
  }
  if (sc.historical &&
      (!(sc.historical_sampling > 0) || sc.historical_sampling > 1)) {
    throw std::invalid_argument("scenario: historical.sampling outside (0, 1]");
  }
}

}  // namespace

ExperimentResult run_scenario(const Scenario& sc) {
  validate_scenario(sc);
  auto t0 = std::chrono::steady_clock::now();

  const Query& query = sc.block.query;
  const uint64_t qid = query.query_id;
  const int64_t f = query.answer_frequency_ms;
  const uint64_t epochs_per_window =
      static_cast<uint64_t>(query.window_length_ms / f);
  const size_t n_buckets = query.buckets.size();

  std::vector<double> yes_rates = sc.yes_rates;
  if (sc.workload == "bits" && yes_rates.empty()) {
    yes_rates.assign(n_buckets, 0.5 / std::max<size_t>(n_buckets, 1));
  }

  // Aggregator with an optional throwaway historical store.
  Aggregator::Config acfg;
  if (sc.forced_params) {
    acfg.coins = RRCoins{sc.forced_params->p, sc.forced_params->q};
  }
  acfg.s_floor = sc.s_floor;
  acfg.pilot_windows = sc.pilot_windows;
  acfg.base_time_ms = 0;
  std::filesystem::path store_dir;
  if (sc.historical) {
    store_dir = fresh_store_dir();
    acfg.historical_root = store_dir;
  }
  Aggregator agg(acfg);

  // In-process relays: two non-colluding proxies as bounded FIFOs.
  RelayBuffer relay_answer(relay_topic_name(1), size_t{1} << 20);
  RelayBuffer relay_keys(relay_topic_name(2), size_t{1} << 20);
  std::vector<ShareSink> sinks = {
      [&relay_answer](const ShareMessage& s) { return relay_forward(relay_answer, s); },
      [&relay_keys](const ShareMessage& s) { return relay_forward(relay_keys, s); },
  };

  // Clients round-robin across strata, each with derived, order-independent
  // randomness.
  std::vector<std::unique_ptr<ClientAgent>> agents;
  agents.reserve(sc.clients);
  std::map<uint16_t, uint64_t> stratum_clients;
  for (uint32_t c = 0; c < sc.clients; ++c) {
    ClientConfig cc;
    cc.client_id = c;
    cc.stratum_id = static_cast<uint16_t>(c % sc.n_strata);
    cc.n_proxies = 2;
    cc.rng_seed = derive_seed(sc.seed, 1'000'000 + c);
    agents.push_back(std::make_unique<ClientAgent>(cc, sinks));
    ++stratum_clients[cc.stratum_id];
  }
  agg.hub().subscribe([&agents](const Query& q, const ExecutionParams& p) {
    for (auto& agent : agents) agent->subscribe(q, p);
  });

  ExperimentResult result;
  result.query_id = qid;
  result.initial_params = sc.forced_params
                              ? agg.publish_query(query, sc.block.budget,
                                                  *sc.forced_params)
                              : agg.publish_query(query, sc.block.budget);

  // U counts client-epochs: each client contributes one answer per epoch and
  // a window spans w / f epochs.
  std::map<uint16_t, uint64_t> population;
  for (const auto& [stratum, count] : stratum_clients) {
    population[stratum] = count * epochs_per_window;
  }
  agg.register_population(qid, population);
  uint64_t population_total = 0;
  for (const auto& [stratum, count] : population) population_total += count;
  result.population = population_total;

  // Workload randomness is split per client so client count changes do not
  // reshuffle everyone's stream.
  std::vector<Rng> workload_rngs;
  workload_rngs.reserve(sc.clients);
  for (uint32_t c = 0; c < sc.clients; ++c) {
    workload_rngs.emplace_back(derive_seed(sc.seed, 5'000'000 + c));
  }
  Rng loss_rng(derive_seed(sc.seed, 42));

  // Ground truth per epoch per bucket, across the whole population.
  std::vector<std::vector<double>> epoch_truth(
      sc.epochs, std::vector<double>(n_buckets, 0.0));

  bool inverted = false;
  auto drain_relays = [&](int64_t now_ms) {
    for (RelayBuffer* relay : {&relay_answer, &relay_keys}) {
      while (std::optional<ShareMessage> share = relay->poll()) {
        if (sc.loss_rate > 0 && loss_rng.bernoulli(sc.loss_rate)) {
          ++result.shares_lost;
          continue;
        }
        agg.ingest_share(*share, now_ms);
      }
    }
  };

  for (uint32_t e = 0; e < sc.epochs; ++e) {
    const int64_t epoch_start = static_cast<int64_t>(e) * f;
    const int64_t epoch_end = epoch_start + f;

    for (uint32_t c = 0; c < sc.clients; ++c) {
      Rng& wrng = workload_rngs[c];
      std::optional<double> value;
      if (sc.workload == "bits") {
        double u = wrng.uniform_double();
        double cum = 0;
        for (size_t y = 0; y < n_buckets; ++y) {
          cum += yes_rates[y];
          if (u < cum) {
            value = range_representative(query.buckets.ranges[y]);
            break;
          }
        }
        // No bucket drawn: the client has no matching observation this
        // epoch, which answers as an all-zero vector.
      } else {
        value = sc.records_lo +
                wrng.uniform_double() * (sc.records_hi - sc.records_lo);
      }
      if (value.has_value()) {
        Record r;
        r.timestamp_ms = epoch_start;
        r.fields.emplace_back(query.buckets.field, Scalar{*value});
        std::vector<uint8_t> truth_bits = bucketize(Scalar{*value}, query.buckets);
        for (size_t y = 0; y < n_buckets; ++y) {
          epoch_truth[e][y] += truth_bits[y];
        }
        agents[c]->observe(std::move(r));
      }
      EpochOutcome outcome = agents[c]->answer_epoch(qid, epoch_end);
      if (outcome.dispatched) ++result.messages_dispatched;
    }

    drain_relays(epoch_end);
    for (WindowEstimate& est : agg.advance_time(epoch_end)) {
      // Append matching ground truth before moving the estimate.
      std::vector<double> truth(n_buckets, 0.0);
      uint64_t e_from = static_cast<uint64_t>(est.start_ms / f);
      uint64_t e_to = static_cast<uint64_t>(est.end_ms / f);
      for (uint64_t te = e_from; te < e_to && te < sc.epochs; ++te) {
        for (size_t y = 0; y < n_buckets; ++y) truth[y] += epoch_truth[te][y];
      }
      if (est.inverted) {
        for (double& t : truth) {
          t = static_cast<double>(population_total) - t;
        }
      }
      result.true_counts.push_back(std::move(truth));
      result.estimates.push_back(std::move(est));

      if (sc.invert_after_windows > 0 && !inverted &&
          result.estimates.size() >= sc.invert_after_windows) {
        agg.set_inverted(qid, true);
        inverted = true;
      }
    }
  }

  result.final_params = agg.current_params(qid);
  // p = 1 is the deliberate no-privacy mode (responses pass through
  // unperturbed), where the per-response bound is infinite; leave the
  // report zeroed rather than evaluating it.
  if (result.final_params.p < 1.0) {
    result.privacy = privacy_report(result.final_params.s,
                                    RRCoins{result.final_params.p,
                                            result.final_params.q});
  }
  for (const auto& agent : agents) {
    result.bytes_sent += agent->bytes_sent();
    result.epochs_skipped += agent->epochs_skipped();
    result.epochs_dropped += agent->epochs_dropped();
  }
  result.joins = agg.join_counters();
  result.late = agg.late();
  result.quarantined = agg.quarantined();
  result.budget_conflict = agg.last_feedback_conflict(qid);

  if (sc.historical) {
    result.historical = agg.historical_query(
        qid, 0, static_cast<int64_t>(sc.epochs) * f, sc.historical_sampling,
        derive_seed(sc.seed, 777));
    result.historical_effective_s =
        result.final_params.s * sc.historical_sampling;
    std::error_code ec;
    std::filesystem::remove_all(store_dir, ec);  // best effort cleanup
  }

  result.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return result;
}

std::vector<ExperimentResult> sweep_s(const Scenario& scenario,
                                      const std::vector<double>& s_values) {
  std::vector<ExperimentResult> results;
  results.reserve(s_values.size());
  for (double s : s_values) {
    Scenario sc = scenario;
    ExecutionParams params = sc.forced_params.value_or(ExecutionParams{});
    params.s = s;
    sc.forced_params = params;
    results.push_back(run_scenario(sc));
  }
  return results;
}

std::vector<ExperimentResult> replicate(const Scenario& scenario, uint32_t n,
                                        uint64_t seed_step) {
  std::vector<ExperimentResult> results;
  results.reserve(n);
  for (uint32_t i = 0; i < n; ++i) {
    Scenario sc = scenario;
    sc.seed = scenario.seed + i * seed_step;
    results.push_back(run_scenario(sc));
  }
  return results;
}

// ---------------------------------------------------------------------------
// Reporting
// ---------------------------------------------------------------------------

const char kExperimentCsvHeader[] =
    "query_id,window_start_ms,window_end_ms,bucket_index,r_y,e_y,estimate,"
    "half_width,confidence_level,flags,true_count,abs_error,within_bound";

std::string experiment_csv(const ExperimentResult& result) {
  std::ostringstream out;
  out << kExperimentCsvHeader << '\n';
  for (size_t i = 0; i < result.estimates.size(); ++i) {
    const WindowEstimate& est = result.estimates[i];
    const std::vector<double>& truth = result.true_counts[i];
    std::string flags;
    if (est.low_sample) flags += "low-sample";
    if (est.inverted) {
      if (!flags.empty()) flags += '|';
      flags += "inverted";
    }
    for (size_t y = 0; y < est.buckets.size(); ++y) {
      const BucketEstimate& be = est.buckets[y];
      double abs_err = std::abs(be.estimate - truth[y]);
      out << est.query_id << ',' << est.start_ms << ',' << est.end_ms << ','
          << y << ',' << be.r_y << ',' << fmt_double(be.e_y) << ','
          << fmt_double(be.estimate) << ',' << fmt_double(be.half_width) << ','
          << fmt_double(est.confidence_level) << ',' << flags << ','
          << fmt_double(truth[y]) << ',' << fmt_double(abs_err) << ','
          << (abs_err <= be.half_width ? 1 : 0) << '\n';
    }
  }
  return out.str();
}

AccuracySummary summarize_accuracy(const ExperimentResult& result) {
  AccuracySummary s;
  double rel_sum = 0;
  uint64_t rel_rows = 0;
  uint64_t within = 0;
  for (size_t i = 0; i < result.estimates.size(); ++i) {
    const WindowEstimate& est = result.estimates[i];
    for (size_t y = 0; y < est.buckets.size(); ++y) {
      const BucketEstimate& be = est.buckets[y];
      double truth = result.true_counts[i][y];
      double abs_err = std::abs(be.estimate - truth);
      s.max_abs_error = std::max(s.max_abs_error, abs_err);
      if (truth != 0) {
        double rel = abs_err / std::abs(truth);
        s.max_rel_error = std::max(s.max_rel_error, rel);
        rel_sum += rel;
        ++rel_rows;
      }
      if (abs_err <= be.half_width) ++within;
      ++s.rows;
    }
  }
  if (rel_rows > 0) s.mean_rel_error = rel_sum / rel_rows;
  if (s.rows > 0) s.within_bound_fraction = static_cast<double>(within) / s.rows;
  return s;
}

}  // namespace privstream
