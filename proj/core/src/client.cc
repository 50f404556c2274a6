#include "privstream/client.h"

#include <iostream>
#include <stdexcept>

namespace privstream {

void LocalStore::append(Record r) {
  if (!records_.empty() && r.timestamp_ms < records_.back().timestamp_ms) {
    throw std::invalid_argument("LocalStore: timestamps must be nondecreasing");
  }
  records_.push_back(std::move(r));
  if (capacity_ && records_.size() > *capacity_) {
    records_.erase(records_.begin());
  }
}

bool sampling_coin(double s, Rng& rng) {
  if (!(s > 0.0) || s > 1.0) {
    throw std::invalid_argument("sampling_coin: s must be in (0, 1]");
  }
  return rng.bernoulli(s);
}

ClientAgent::ClientAgent(ClientConfig config, std::vector<ShareSink> proxies)
    : config_(std::move(config)),
      proxies_(std::move(proxies)),
      rng_(config_.rng_seed ? Rng(*config_.rng_seed) : Rng()) {
  if (proxies_.size() < 2 || proxies_.size() != config_.n_proxies) {
    throw std::invalid_argument(
        "ClientAgent: proxies must match n_proxies and be >= 2");
  }
}

void ClientAgent::subscribe(const Query& query, const ExecutionParams& params) {
  // Idempotent: a republished query_id keeps the original query definition
  // and only adopts the (possibly feedback-adjusted) parameters.
  auto [it, inserted] =
      subscriptions_.emplace(query.query_id, std::make_pair(query, params));
  if (!inserted) it->second.second = params;
}

void ClientAgent::update_params(uint64_t query_id, const ExecutionParams& params) {
  auto it = subscriptions_.find(query_id);
  if (it != subscriptions_.end()) it->second.second = params;
}

EpochOutcome ClientAgent::answer_epoch(uint64_t query_id, int64_t epoch_end_ms) {
  auto it = subscriptions_.find(query_id);
  if (it == subscriptions_.end()) {
    throw std::invalid_argument("answer_epoch: not subscribed to this query");
  }
  const Query& query = it->second.first;
  const ExecutionParams& params = it->second.second;
  EpochOutcome outcome;
  if (!sampling_coin(params.s, rng_)) {
    ++epochs_skipped_;
    return outcome;  // silent: non-participation leaves no trace on the wire
  }
  int64_t epoch_start_ms = epoch_end_ms - query.answer_frequency_ms;

  // Most recent record in the epoch that matches the predicate and carries
  // the bucketized field; none matching yields the all-zero truthful vector.
  AnswerVector truth;
  truth.query_id = query_id;
  truth.timestamp_ms = epoch_start_ms;
  truth.bits.assign(query.buckets.size(), 0);
  const auto& records = store_.records();
  for (auto r = records.rbegin(); r != records.rend(); ++r) {
    if (r->timestamp_ms >= epoch_end_ms) continue;
    if (r->timestamp_ms < epoch_start_ms) break;
    if (!query.predicate.matches(*r)) continue;
    const Scalar* value = r->find_field(query.buckets.field);
    if (value == nullptr) continue;
    truth.bits = bucketize(*value, query.buckets);
    break;
  }

  AnswerVector randomized = randomize_vector(truth, RRCoins{params.p, params.q}, rng_);
  PlainMessage msg;
  msg.query_id = query_id;
  msg.stratum_id = config_.stratum_id;
  msg.timestamp_ms = randomized.timestamp_ms;
  msg.payload_bits = randomized.bits;

  auto shares = split_encrypt(msg, static_cast<int>(config_.n_proxies), rng_);
  // Share i goes to proxy i and only proxy i: the non-collusion assumption
  // is meaningful only under this routing.
  for (size_t i = 0; i < shares.size(); ++i) {
    RelayAck ack = RelayAck::kFull;
    for (int attempt = 0; attempt <= config_.max_dispatch_retries; ++attempt) {
      ack = proxies_[i](shares[i]);
      if (ack != RelayAck::kFull) break;
    }
    if (ack != RelayAck::kAccepted) {
      // Dropping the whole epoch keeps shares from straddling windows; the
      // estimator sees a non-participant, which sampling tolerates. Shares
      // already accepted stay with their relays and expire at the join stage.
      ++epochs_dropped_;
      std::cerr << "client " << config_.client_id << ": dropped epoch for query "
                << query_id << " (proxy " << i + 1 << " unavailable)\n";
      return outcome;
    }
    bytes_sent_ += kShareFrameHeaderSize + shares[i].body.size();
  }
  outcome.dispatched = true;
  outcome.message_id = shares[0].message_id;
  return outcome;
}

}  // namespace privstream
