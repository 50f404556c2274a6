#include "privstream/aggregator.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include <gtest/gtest.h>

#include "privstream/rng.h"
#include "privstream/transport.h"

namespace privstream {
namespace {

Query one_bucket_query(uint64_t id = 9) {
  Query q;
  q.query_id = id;
  q.buckets.kind = BucketSpec::Kind::kNumericRanges;
  q.buckets.field = "v";
  q.buckets.ranges = {{0, 1}};
  q.answer_frequency_ms = 1000;
  q.window_length_ms = 4000;
  q.slide_interval_ms = 2000;
  return q;
}

PlainMessage bit_message(uint64_t qid, uint16_t stratum, int64_t ts,
                         std::vector<uint8_t> bits) {
  PlainMessage msg;
  msg.query_id = qid;
  msg.stratum_id = stratum;
  msg.timestamp_ms = ts;
  msg.payload_bits = std::move(bits);
  return msg;
}

// ---------------------------------------------------------------------------
// JoinBuffer
// ---------------------------------------------------------------------------

TEST(JoinBuffer, RequiresTwoProxies) {
  EXPECT_THROW(JoinBuffer(1, 1000), std::invalid_argument);
  EXPECT_THROW(JoinBuffer(0, 1000), std::invalid_argument);
}

TEST(JoinBuffer, JoinsInAnyShareOrder) {
  Rng rng(3);
  PlainMessage msg = bit_message(9, 0, 100, {1, 0, 1});
  auto shares = split_encrypt(msg, 3, rng);

  JoinBuffer joins(3, 1000);
  EXPECT_FALSE(joins.offer(shares[2], 0).has_value());
  EXPECT_FALSE(joins.offer(shares[0], 0).has_value());
  EXPECT_EQ(joins.pending(), 1u);
  auto joined = joins.offer(shares[1], 0);
  ASSERT_TRUE(joined.has_value());
  EXPECT_EQ(*joined, msg);
  EXPECT_EQ(joins.counters().joined, 1u);
  EXPECT_EQ(joins.pending(), 0u);
}

TEST(JoinBuffer, DuplicateAfterJoinIsCounted) {
  Rng rng(4);
  auto shares = split_encrypt(bit_message(9, 0, 1, {1}), 2, rng);
  JoinBuffer joins(2, 1000);
  joins.offer(shares[0], 0);
  joins.offer(shares[1], 0);
  EXPECT_EQ(joins.counters().joined, 1u);

  EXPECT_FALSE(joins.offer(shares[0], 0).has_value());
  EXPECT_EQ(joins.counters().duplicate, 1u);
}

TEST(JoinBuffer, BenignRetransmitIsSilent) {
  Rng rng(5);
  auto shares = split_encrypt(bit_message(9, 0, 1, {1}), 2, rng);
  JoinBuffer joins(2, 1000);
  joins.offer(shares[0], 0);
  // Same (id, index, body) again: ignored without suspicion.
  EXPECT_FALSE(joins.offer(shares[0], 0).has_value());
  EXPECT_EQ(joins.counters().duplicate, 0u);

  auto joined = joins.offer(shares[1], 0);
  EXPECT_TRUE(joined.has_value());
}

TEST(JoinBuffer, ConflictingBodyPoisonsTheMessageId) {
  Rng rng(6);
  auto shares = split_encrypt(bit_message(9, 0, 1, {1}), 2, rng);
  JoinBuffer joins(2, 1000);
  joins.offer(shares[0], 0);

  ShareMessage conflict = shares[0];
  conflict.body[0] ^= 0xff;
  EXPECT_FALSE(joins.offer(conflict, 0).has_value());
  EXPECT_EQ(joins.counters().duplicate, 1u);
  EXPECT_EQ(joins.pending(), 0u);

  // Stragglers cannot resurrect the poisoned id.
  EXPECT_FALSE(joins.offer(shares[1], 0).has_value());
  EXPECT_FALSE(joins.offer(shares[0], 0).has_value());
  EXPECT_EQ(joins.counters().joined, 0u);
  EXPECT_EQ(joins.counters().duplicate, 3u);
}

TEST(JoinBuffer, StructurallyInvalidSharesAreCorrupt) {
  Rng rng(7);
  auto shares = split_encrypt(bit_message(9, 0, 1, {1}), 2, rng);
  JoinBuffer joins(2, 1000);

  ShareMessage bad = shares[0];
  bad.n_proxies = 3;  // wrong fan-out for this deployment
  EXPECT_FALSE(joins.offer(bad, 0).has_value());

  bad = shares[0];
  bad.share_index = 0;  // indices are 1-based
  EXPECT_FALSE(joins.offer(bad, 0).has_value());

  bad = shares[0];
  bad.share_index = 3;  // above n_proxies
  EXPECT_FALSE(joins.offer(bad, 0).has_value());

  bad = shares[0];
  bad.body.clear();
  EXPECT_FALSE(joins.offer(bad, 0).has_value());

  EXPECT_EQ(joins.counters().corrupt, 4u);
  EXPECT_EQ(joins.pending(), 0u);
}

TEST(JoinBuffer, TamperedCompleteSetCountsCorrupt) {
  Rng rng(8);
  auto shares = split_encrypt(bit_message(9, 0, 1, {1, 1}), 2, rng);
  shares[1].body[2] ^= 0x10;  // breaks the embedded checksum after XOR
  JoinBuffer joins(2, 1000);
  joins.offer(shares[0], 0);
  EXPECT_FALSE(joins.offer(shares[1], 0).has_value());
  EXPECT_EQ(joins.counters().corrupt, 1u);
  EXPECT_EQ(joins.counters().joined, 0u);
}

TEST(JoinBuffer, ExpiresExactlyAtDeadline) {
  Rng rng(9);
  auto shares = split_encrypt(bit_message(9, 0, 1, {1}), 2, rng);
  JoinBuffer joins(2, 1000);
  joins.offer(shares[0], 0);  // deadline = 1000

  joins.expire_stale(999);
  EXPECT_EQ(joins.pending(), 1u);
  EXPECT_EQ(joins.counters().expired, 0u);

  joins.expire_stale(1000);
  EXPECT_EQ(joins.pending(), 0u);
  EXPECT_EQ(joins.counters().expired, 1u);

  // The second share now opens a fresh set (the id never completed).
  EXPECT_FALSE(joins.offer(shares[1], 2000).has_value());
  EXPECT_EQ(joins.pending(), 1u);
}

TEST(JoinBuffer, InterleavedStreamsJoinByteIdentically) {
  Rng rng(10);
  const int n = 10'000;
  std::vector<PlainMessage> originals;
  std::vector<std::vector<ShareMessage>> all_shares;
  originals.reserve(n);
  for (int i = 0; i < n; ++i) {
    PlainMessage msg = bit_message(9, uint16_t(i % 4), i,
                                   {uint8_t(i & 1), uint8_t((i >> 1) & 1)});
    originals.push_back(msg);
    all_shares.push_back(split_encrypt(msg, 3, rng));
  }

  // Deliver index 2 of everything, then 3, then 1: maximal interleaving.
  JoinBuffer joins(3, 1'000'000);
  int joined = 0;
  for (int idx : {1, 2, 0}) {
    for (int i = 0; i < n; ++i) {
      auto m = joins.offer(all_shares[i][idx], 0);
      if (m.has_value()) {
        EXPECT_EQ(*m, originals[i]);
        ++joined;
      }
    }
  }
  EXPECT_EQ(joined, n);
  EXPECT_EQ(joins.counters().joined, uint64_t(n));
  EXPECT_EQ(joins.pending(), 0u);
}

// ---------------------------------------------------------------------------
// Windowing
// ---------------------------------------------------------------------------

TEST(AdvanceWindow, EmitsSnapshotThenSlides) {
  Window win;
  win.start_ms = 0;
  win.end_ms = 4000;
  std::vector<PlainMessage> batch = {bit_message(9, 0, 500, {1}),
                                     bit_message(9, 0, 2500, {1})};
  // Watermark short of the end: no emission, items inserted.
  AdvanceOutcome out = advance_window(win, 2000, 3999, std::move(batch));
  EXPECT_FALSE(out.emitted.has_value());
  EXPECT_EQ(win.messages.size(), 2u);

  // Watermark reaches the end: snapshot taken before eviction.
  out = advance_window(win, 2000, 4000, {});
  ASSERT_TRUE(out.emitted.has_value());
  EXPECT_EQ(out.emitted->start_ms, 0);
  EXPECT_EQ(out.emitted->end_ms, 4000);
  EXPECT_EQ(out.emitted->messages.size(), 2u);
  // The live window slid by delta and evicted ts 500.
  EXPECT_EQ(win.start_ms, 2000);
  EXPECT_EQ(win.end_ms, 6000);
  EXPECT_EQ(win.messages.size(), 1u);
  EXPECT_EQ(win.messages[0].timestamp_ms, 2500);
}

TEST(AdvanceWindow, QuarantinesOutOfRangeIncoming) {
  Window win;
  win.start_ms = 2000;
  win.end_ms = 6000;
  AdvanceOutcome out = advance_window(
      win, 2000, 3000,
      {bit_message(9, 0, 1500, {1}), bit_message(9, 0, 2000, {1}),
       bit_message(9, 0, 6000, {1})});
  EXPECT_EQ(win.messages.size(), 1u);  // only ts 2000 is in range
  ASSERT_EQ(out.quarantined.size(), 2u);
  EXPECT_THROW(advance_window(win, 0, 3000, {}), std::invalid_argument);
}

TEST(WindowPipeline, SlidingEmissionPattern) {
  WindowPipeline pipe(0, 4000, 2000);
  pipe.feed(bit_message(9, 0, 500, {1}));
  pipe.feed(bit_message(9, 0, 2500, {1}));

  std::vector<Window> emitted = pipe.advance(4000);
  ASSERT_EQ(emitted.size(), 1u);
  EXPECT_EQ(emitted[0].start_ms, 0);
  EXPECT_EQ(emitted[0].end_ms, 4000);
  EXPECT_EQ(emitted[0].messages.size(), 2u);
  EXPECT_EQ(emitted[0].participation.at(0), 2u);

  pipe.feed(bit_message(9, 1, 4500, {1}));
  emitted = pipe.advance(6000);
  ASSERT_EQ(emitted.size(), 1u);
  EXPECT_EQ(emitted[0].start_ms, 2000);
  // ts 500 evicted; 2500 and 4500 remain.
  EXPECT_EQ(emitted[0].messages.size(), 2u);
  EXPECT_EQ(emitted[0].participation.at(0), 1u);
  EXPECT_EQ(emitted[0].participation.at(1), 1u);
}

TEST(WindowPipeline, EachMessageAppearsInTwoWindows) {
  // w / delta = 2: every timestamp belongs to exactly two emitted windows
  // (once fully inside the stream).
  WindowPipeline pipe(0, 4000, 2000);
  pipe.feed(bit_message(9, 0, 2500, {1}));
  int appearances = 0;
  for (const Window& w : pipe.advance(10'000)) {
    if (w.start_ms <= 2500 && 2500 < w.end_ms) {
      EXPECT_EQ(w.messages.size(), 1u);
      ++appearances;
    } else {
      EXPECT_EQ(w.messages.size(), 0u);
    }
  }
  EXPECT_EQ(appearances, 2);
}

TEST(WindowPipeline, CrossesMultipleBoundariesInOneAdvance) {
  WindowPipeline pipe(0, 4000, 2000);
  std::vector<Window> emitted = pipe.advance(8000);
  ASSERT_EQ(emitted.size(), 3u);
  EXPECT_EQ(emitted[0].start_ms, 0);
  EXPECT_EQ(emitted[1].start_ms, 2000);
  EXPECT_EQ(emitted[2].start_ms, 4000);
}

TEST(WindowPipeline, LatePendingAndQuarantine) {
  WindowPipeline pipe(0, 4000, 2000);
  pipe.advance(4000);  // current window now [2000, 6000)

  pipe.feed(bit_message(9, 0, 1500, {1}));  // below start: late
  EXPECT_EQ(pipe.late(), 1u);

  pipe.feed(bit_message(9, 0, 6500, {1}));  // in [6000, 8000): pending
  EXPECT_EQ(pipe.quarantined(), 0u);

  pipe.feed(bit_message(9, 0, 9000, {1}));  // beyond end + slide
  EXPECT_EQ(pipe.quarantined(), 1u);

  // The pending message surfaces once its window becomes current.
  std::vector<Window> emitted = pipe.advance(8000);
  ASSERT_EQ(emitted.size(), 2u);
  EXPECT_EQ(emitted[1].start_ms, 4000);
  ASSERT_EQ(emitted[1].messages.size(), 1u);
  EXPECT_EQ(emitted[1].messages[0].timestamp_ms, 6500);
}

// ---------------------------------------------------------------------------
// estimate_window
// ---------------------------------------------------------------------------

Window hundred_message_window(uint64_t ones, std::vector<uint8_t> extra = {}) {
  Window win;
  win.start_ms = 0;
  win.end_ms = 4000;
  for (uint64_t i = 0; i < 100; ++i) {
    win.messages.push_back(bit_message(9, 0, int64_t(i % 4000),
                                       {uint8_t(i < ones ? 1 : 0)}));
  }
  for (uint8_t b : extra) {
    win.messages.push_back(bit_message(9, 0, 1, {b}));
  }
  return win;
}

TEST(EstimateWindow, HandComputedCombinedBound) {
  // U = 200, U' = 100, R_y = 50 at s = p = q = 0.5:
  //   e_y = (50 - 25) / 0.5 = 50
  //   randomized scale-up = 2 * 50 = 100 -> estimate = (100 - 50)/0.5 = 100
  //   bit variance = 50*50/(100*99) = 25/99
  //   sampling hw = t(99,.975) sqrt(200*100*(25/99)/100) / 0.5 = 28.2024317
  //   rr hw = t(99,.975) sqrt(100 * 0.1875) / 0.5 * 2 = 34.3676457
  Window win = hundred_message_window(50);
  WindowEstimate est =
      estimate_window(win, one_bucket_query(), ExecutionParams{0.5, 0.5, 0.5},
                      {{0, 200}});
  EXPECT_EQ(est.sample_size, 100u);
  EXPECT_FALSE(est.low_sample);
  ASSERT_EQ(est.buckets.size(), 1u);
  const BucketEstimate& be = est.buckets[0];
  EXPECT_EQ(be.r_y, 50u);
  EXPECT_DOUBLE_EQ(be.e_y, 50.0);
  EXPECT_DOUBLE_EQ(be.estimate, 100.0);
  EXPECT_NEAR(be.half_width, 28.202431697773115 + 34.3676457325247, 1e-3);
}

TEST(EstimateWindow, CensusWithoutPrivacyIsExact) {
  Window win = hundred_message_window(37);
  WindowEstimate est =
      estimate_window(win, one_bucket_query(), ExecutionParams{1.0, 1.0, 0.5},
                      {{0, 100}});
  ASSERT_EQ(est.buckets.size(), 1u);
  EXPECT_DOUBLE_EQ(est.buckets[0].estimate, 37.0);
  EXPECT_DOUBLE_EQ(est.buckets[0].half_width, 0.0);
  EXPECT_FALSE(est.low_sample);
}

TEST(EstimateWindow, UnknownStratumSkippedAndFlagged) {
  Window win = hundred_message_window(50, {1, 1, 1});
  for (size_t i = 100; i < win.messages.size(); ++i) {
    win.messages[i].stratum_id = 9;  // never registered
  }
  WindowEstimate est =
      estimate_window(win, one_bucket_query(), ExecutionParams{0.5, 0.5, 0.5},
                      {{0, 200}});
  EXPECT_EQ(est.sample_size, 100u);  // the unknown stratum is excluded
  EXPECT_TRUE(est.low_sample);
  EXPECT_EQ(est.buckets[0].r_y, 50u);
}

TEST(EstimateWindow, UnsampledRegisteredStratumFlagsLowSample) {
  Window win = hundred_message_window(50);
  WindowEstimate est =
      estimate_window(win, one_bucket_query(), ExecutionParams{0.5, 0.5, 0.5},
                      {{0, 200}, {1, 500}});
  EXPECT_TRUE(est.low_sample);
}

TEST(EstimateWindow, EmptyWindowYieldsZeroRows) {
  Window win;
  win.start_ms = 0;
  win.end_ms = 4000;
  WindowEstimate est =
      estimate_window(win, one_bucket_query(), ExecutionParams{0.5, 0.5, 0.5},
                      {{0, 200}});
  EXPECT_EQ(est.sample_size, 0u);
  EXPECT_TRUE(est.low_sample);
  ASSERT_EQ(est.buckets.size(), 1u);
  EXPECT_DOUBLE_EQ(est.buckets[0].estimate, 0.0);
  EXPECT_DOUBLE_EQ(est.buckets[0].half_width, 0.0);
}

TEST(EstimateWindow, InvertedReportsComplements) {
  Window win = hundred_message_window(60);
  Query q = one_bucket_query();
  q.inverted = true;
  WindowEstimate est =
      estimate_window(win, q, ExecutionParams{0.5, 0.5, 0.5}, {{0, 200}});
  EXPECT_TRUE(est.inverted);
  // Native: e_y = (60-25)/0.5 = 70, estimate = (120-50)/0.5 = 140.
  // Inverted: U' - 70 = 30 and U - 140 = 60; r_y stays raw.
  EXPECT_EQ(est.buckets[0].r_y, 60u);
  EXPECT_DOUBLE_EQ(est.buckets[0].e_y, 30.0);
  EXPECT_DOUBLE_EQ(est.buckets[0].estimate, 60.0);

  Query native = one_bucket_query();
  WindowEstimate nat =
      estimate_window(win, native, ExecutionParams{0.5, 0.5, 0.5}, {{0, 200}});
  // The error bound is symmetric under complementation.
  EXPECT_DOUBLE_EQ(est.buckets[0].half_width, nat.buckets[0].half_width);
}

TEST(EstimateWindow, PilotRateTightensTheBound) {
  // At coins (0.9, 0.6): sigma0^2 = 0.0564 dominates sigma1^2 = 0.0384, so
  // a pilot yes-rate of 1 must shrink the randomization term strictly.
  Window win = hundred_message_window(50);
  ExecutionParams params{0.5, 0.9, 0.6};
  std::vector<double> pilot = {1.0};
  WindowEstimate worst =
      estimate_window(win, one_bucket_query(), params, {{0, 200}});
  WindowEstimate tight = estimate_window(win, one_bucket_query(), params,
                                         {{0, 200}}, 0.95, &pilot);
  EXPECT_LT(tight.buckets[0].half_width, worst.buckets[0].half_width);
  EXPECT_DOUBLE_EQ(tight.buckets[0].estimate, worst.buckets[0].estimate);
}

TEST(EstimateWindow, SingleMessageFallsBackToDirectScaling) {
  Window win;
  win.start_ms = 0;
  win.end_ms = 4000;
  win.messages.push_back(bit_message(9, 0, 1, {1}));
  WindowEstimate est =
      estimate_window(win, one_bucket_query(), ExecutionParams{0.5, 0.5, 0.5},
                      {{0, 200}});
  // Scale-up 200 * 1, de-bias: (200 - 50)/0.5 = 300; no interval.
  EXPECT_TRUE(est.low_sample);
  EXPECT_DOUBLE_EQ(est.buckets[0].estimate, 300.0);
  EXPECT_DOUBLE_EQ(est.buckets[0].half_width, 0.0);
}

// ---------------------------------------------------------------------------
// adaptive_feedback
// ---------------------------------------------------------------------------

WindowEstimate feedback_estimate(double estimate, double half_width) {
  WindowEstimate est;
  est.sample_size = 100;
  BucketEstimate be;
  be.estimate = estimate;
  be.half_width = half_width;
  est.buckets.push_back(be);
  return est;
}

Budget zk_budget(double eps, std::optional<double> target = std::nullopt) {
  Budget b;
  b.kind = Budget::Kind::kZkPrivacy;
  b.epsilon = eps;
  b.error_target = target;
  return b;
}

TEST(AdaptiveFeedback, NoTargetMeansNoChange) {
  FeedbackResult fb = adaptive_feedback(feedback_estimate(100, 50),
                                        zk_budget(3.0), {0.4, 0.5, 0.5});
  EXPECT_FALSE(fb.changed);
  EXPECT_DOUBLE_EQ(fb.params.s, 0.4);
}

TEST(AdaptiveFeedback, RaisesSamplingWhenBoundTooWide) {
  // Relative width 0.2 over a 0.05 target: s rises by 25%.
  FeedbackResult fb = adaptive_feedback(feedback_estimate(100, 20),
                                        zk_budget(50.0, 0.05), {0.4, 0.5, 0.5});
  EXPECT_TRUE(fb.changed);
  EXPECT_FALSE(fb.budget_conflict);
  EXPECT_DOUBLE_EQ(fb.params.s, 0.5);
  // The coins never move mid-query.
  EXPECT_DOUBLE_EQ(fb.params.p, 0.5);
  EXPECT_DOUBLE_EQ(fb.params.q, 0.5);
}

TEST(AdaptiveFeedback, ClampsAtTheBudgetCeilingAndFlagsConflict) {
  // zk budget ln(5) at coins (0.5, 0.5) caps s at exactly 0.5. Raising from
  // 0.45 wants 0.5625: clamped, and the conflict is reported.
  FeedbackResult fb =
      adaptive_feedback(feedback_estimate(100, 20),
                        zk_budget(std::log(5.0), 0.05), {0.45, 0.5, 0.5});
  EXPECT_TRUE(fb.changed);
  EXPECT_TRUE(fb.budget_conflict);
  EXPECT_NEAR(fb.params.s, 0.5, 1e-9);
  // The clamped parameters still satisfy the budget.
  EXPECT_LE(eps_zk(fb.params.s, RRCoins{0.5, 0.5}), std::log(5.0) + 1e-9);
}

TEST(AdaptiveFeedback, LooseDpBudgetCapsAtFullSampling) {
  Budget b;
  b.kind = Budget::Kind::kDpPrivacy;
  b.epsilon = 10.0;  // above eps_rr(0.5, 0.5): no s in (0,1] can spend it
  b.error_target = 0.05;
  FeedbackResult fb =
      adaptive_feedback(feedback_estimate(100, 20), b, {0.9, 0.5, 0.5});
  EXPECT_TRUE(fb.changed);
  EXPECT_DOUBLE_EQ(fb.params.s, 1.0);  // desired 1.125, physical cap 1
  EXPECT_TRUE(fb.budget_conflict);     // the target still is not reachable
}

TEST(AdaptiveFeedback, LowersSamplingWhenComfortablyWithinTarget) {
  // Relative width 0.01 against a 0.05 target: below half, s falls by 10%.
  FeedbackResult fb = adaptive_feedback(feedback_estimate(100, 1),
                                        zk_budget(3.0, 0.05), {0.4, 0.5, 0.5});
  EXPECT_TRUE(fb.changed);
  EXPECT_NEAR(fb.params.s, 0.36, 1e-12);
}

TEST(AdaptiveFeedback, DeadbandHoldsParameters) {
  // Width in [target/2, target]: stay put to avoid oscillation.
  FeedbackResult fb = adaptive_feedback(feedback_estimate(100, 4),
                                        zk_budget(3.0, 0.05), {0.4, 0.5, 0.5});
  EXPECT_FALSE(fb.changed);
  EXPECT_DOUBLE_EQ(fb.params.s, 0.4);
}

TEST(AdaptiveFeedback, FloorStopsTheDescent) {
  FeedbackResult fb = adaptive_feedback(feedback_estimate(100, 1),
                                        zk_budget(3.0, 0.05),
                                        {0.05, 0.5, 0.5}, 0.05);
  EXPECT_FALSE(fb.changed);
  EXPECT_DOUBLE_EQ(fb.params.s, 0.05);
}

TEST(AdaptiveFeedback, IgnoresEmptyWindowsAndNearZeroBuckets) {
  WindowEstimate empty = feedback_estimate(100, 50);
  empty.sample_size = 0;
  EXPECT_FALSE(adaptive_feedback(empty, zk_budget(3.0, 0.05), {0.4, 0.5, 0.5})
                   .changed);

  // A zero estimate has no usable relative width; only the other bucket
  // (comfortably tight) should drive the decision.
  WindowEstimate est = feedback_estimate(100, 1);
  BucketEstimate zero;
  zero.estimate = 0.0;
  zero.half_width = 1e9;
  est.buckets.push_back(zero);
  FeedbackResult fb = adaptive_feedback(est, zk_budget(3.0, 0.05), {0.4, 0.5, 0.5});
  EXPECT_TRUE(fb.changed);
  EXPECT_NEAR(fb.params.s, 0.36, 1e-12);
}

TEST(AdaptiveFeedback, RejectsBadTargetAndFloor) {
  EXPECT_THROW(adaptive_feedback(feedback_estimate(100, 1),
                                 zk_budget(3.0, 0.0), {0.4, 0.5, 0.5}),
               std::invalid_argument);
  EXPECT_THROW(adaptive_feedback(feedback_estimate(100, 1),
                                 zk_budget(3.0, 0.05), {0.4, 0.5, 0.5}, 0.0),
               std::invalid_argument);
  EXPECT_THROW(adaptive_feedback(feedback_estimate(100, 1),
                                 zk_budget(3.0, 0.05), {0.4, 0.5, 0.5}, 1.5),
               std::invalid_argument);
}

// ---------------------------------------------------------------------------
// QueryHub and CSV
// ---------------------------------------------------------------------------

TEST(QueryHub, FansOutToEverySubscriber) {
  QueryHub hub;
  int calls_a = 0, calls_b = 0;
  double seen_s = 0;
  hub.subscribe([&](const Query& q, const ExecutionParams& p) {
    ++calls_a;
    seen_s = p.s;
    EXPECT_EQ(q.query_id, 9u);
  });
  hub.subscribe([&](const Query&, const ExecutionParams&) { ++calls_b; });
  hub.publish(one_bucket_query(), ExecutionParams{0.25, 0.9, 0.6});
  EXPECT_EQ(calls_a, 1);
  EXPECT_EQ(calls_b, 1);
  EXPECT_DOUBLE_EQ(seen_s, 0.25);
}

TEST(WindowEstimateCsv, GoldenRows) {
  EXPECT_STREQ(kWindowEstimateCsvHeader,
               "query_id,window_start_ms,window_end_ms,bucket_index,r_y,e_y,"
               "estimate,half_width,confidence_level,flags");

  WindowEstimate est;
  est.query_id = 9;
  est.start_ms = 0;
  est.end_ms = 4000;
  est.confidence_level = 0.95;
  BucketEstimate b0;
  b0.r_y = 50;
  b0.e_y = 50;
  b0.estimate = 100;
  b0.half_width = 62.570077430297815;
  BucketEstimate b1;
  b1.r_y = 0;
  b1.e_y = 0.123456789012;
  b1.estimate = -30.5;
  b1.half_width = 0.001;
  est.buckets = {b0, b1};

  EXPECT_EQ(window_estimate_csv_rows(est),
            "9,0,4000,0,50,50,100,62.5700774,0.95,\n"
            "9,0,4000,1,0,0.123456789,-30.5,0.001,0.95,\n");

  est.low_sample = true;
  est.inverted = true;
  est.buckets.resize(1);
  EXPECT_EQ(window_estimate_csv_rows(est),
            "9,0,4000,0,50,50,100,62.5700774,0.95,low-sample|inverted\n");
}

// ---------------------------------------------------------------------------
// Aggregator
// ---------------------------------------------------------------------------

void ingest_message(Aggregator& agg, Rng& rng, const PlainMessage& msg,
                    int64_t now_ms) {
  for (const ShareMessage& sh : split_encrypt(msg, 2, rng)) {
    agg.ingest_share(sh, now_ms);
  }
}

TEST(Aggregator, PublishConvertsBudgetAndBroadcasts) {
  Aggregator::Config cfg;
  cfg.coins = {0.5, 0.5};
  Aggregator agg(cfg);

  double broadcast_s = -1;
  agg.hub().subscribe([&](const Query&, const ExecutionParams& p) {
    broadcast_s = p.s;
  });

  // zk epsilon ln(5) at coins (0.5, 0.5) inverts to s = 1/2 exactly.
  ExecutionParams params =
      agg.publish_query(one_bucket_query(), zk_budget(std::log(5.0)));
  EXPECT_NEAR(params.s, 0.5, 1e-9);
  EXPECT_DOUBLE_EQ(params.p, 0.5);
  EXPECT_DOUBLE_EQ(params.q, 0.5);
  EXPECT_NEAR(broadcast_s, 0.5, 1e-9);
  EXPECT_EQ(agg.query_ids(), std::vector<uint64_t>{9});

  // Duplicate id and invalid query are rejected.
  EXPECT_THROW(agg.publish_query(one_bucket_query(), zk_budget(1.0)),
               std::invalid_argument);
  Query broken = one_bucket_query(10);
  broken.window_length_ms = 0;
  EXPECT_THROW(agg.publish_query(broken, zk_budget(1.0)),
               std::invalid_argument);
}

TEST(Aggregator, ForcedParamsBypassInversion) {
  Aggregator agg({});
  ExecutionParams forced{0.3, 0.9, 0.6};
  EXPECT_DOUBLE_EQ(
      agg.publish_query(one_bucket_query(), zk_budget(1.0), forced).s, 0.3);
  EXPECT_DOUBLE_EQ(agg.current_params(9).s, 0.3);

  Query q2 = one_bucket_query(10);
  EXPECT_THROW(agg.publish_query(q2, zk_budget(1.0), {0.0, 0.9, 0.6}),
               std::invalid_argument);
  EXPECT_THROW(agg.publish_query(q2, zk_budget(1.0), {1.5, 0.9, 0.6}),
               std::invalid_argument);
}

TEST(Aggregator, UnknownQueryCountedAfterJoin) {
  Aggregator agg({});
  agg.publish_query(one_bucket_query(), zk_budget(1.0), {1.0, 1.0, 0.5});
  Rng rng(20);
  ingest_message(agg, rng, bit_message(404, 0, 100, {1}), 0);
  EXPECT_EQ(agg.unknown_query(), 1u);
  // Pre-join shares reveal nothing, so only the joined message counts.
  EXPECT_EQ(agg.join_counters().joined, 1u);
}

TEST(Aggregator, EndToEndExactWindowWithoutPrivacy) {
  Aggregator agg({});
  ExecutionParams params =
      agg.publish_query(one_bucket_query(), zk_budget(1.0), {1.0, 1.0, 0.5});
  ASSERT_DOUBLE_EQ(params.p, 1.0);
  agg.register_population(9, {{0, 40}});

  Rng rng(21);
  // 40 clients answer epochs 0..3999; 13 ones.
  for (int i = 0; i < 40; ++i) {
    ingest_message(agg, rng,
                   bit_message(9, 0, (i % 4) * 1000, {uint8_t(i < 13 ? 1 : 0)}),
                   (i % 4) * 1000);
  }
  std::vector<WindowEstimate> estimates = agg.advance_time(4000);
  ASSERT_EQ(estimates.size(), 1u);
  EXPECT_EQ(estimates[0].sample_size, 40u);
  EXPECT_DOUBLE_EQ(estimates[0].buckets[0].estimate, 13.0);
  EXPECT_DOUBLE_EQ(estimates[0].buckets[0].half_width, 0.0);
  EXPECT_EQ(agg.windows_emitted(9), 1u);
  ASSERT_TRUE(agg.latest_estimate(9).has_value());
  EXPECT_DOUBLE_EQ(agg.latest_estimate(9)->buckets[0].estimate, 13.0);
}

TEST(Aggregator, AdvanceTimeRunsFeedbackAndRebroadcasts) {
  Aggregator::Config cfg;
  cfg.coins = {0.5, 0.5};
  Aggregator agg(cfg);
  // Forced s = 0.3 under a zk ln(5) budget (ceiling 0.5) with a tight
  // target: the first window is noisy, so feedback raises s to 0.375.
  Budget budget = zk_budget(std::log(5.0), 0.01);
  agg.publish_query(one_bucket_query(), budget, {0.3, 0.5, 0.5});
  agg.register_population(9, {{0, 1000}});

  double rebroadcast_s = -1;
  agg.hub().subscribe([&](const Query&, const ExecutionParams& p) {
    rebroadcast_s = p.s;
  });

  Rng rng(22);
  for (int i = 0; i < 200; ++i) {
    ingest_message(agg, rng, bit_message(9, 0, i % 4000, {uint8_t(i & 1)}),
                   i % 4000);
  }
  std::vector<WindowEstimate> estimates = agg.advance_time(4000);
  ASSERT_EQ(estimates.size(), 1u);
  EXPECT_DOUBLE_EQ(agg.current_params(9).s, 0.375);
  EXPECT_DOUBLE_EQ(rebroadcast_s, 0.375);
  EXPECT_FALSE(agg.last_feedback_conflict(9));

  // A second noisy window pushes against the ceiling: conflict.
  for (int i = 0; i < 200; ++i) {
    ingest_message(agg, rng, bit_message(9, 0, 4000 + i % 2000, {uint8_t(i & 1)}),
                   4000 + i % 2000);
  }
  agg.advance_time(6000);
  EXPECT_DOUBLE_EQ(agg.current_params(9).s, 0.46875);
  agg.advance_time(8000);
  EXPECT_DOUBLE_EQ(agg.current_params(9).s, 0.5);  // clamped at the budget
  EXPECT_TRUE(agg.last_feedback_conflict(9));
}

TEST(Aggregator, SetInvertedTakesEffectAndValidates) {
  Aggregator agg({});
  agg.publish_query(one_bucket_query(), zk_budget(1.0), {1.0, 1.0, 0.5});
  agg.register_population(9, {{0, 10}});
  EXPECT_THROW(agg.set_inverted(404, true), std::invalid_argument);
  EXPECT_THROW(agg.register_population(404, {{0, 1}}), std::invalid_argument);
  EXPECT_THROW(agg.current_params(404), std::invalid_argument);
  agg.set_inverted(9, true);

  Rng rng(23);
  for (int i = 0; i < 10; ++i) {
    ingest_message(agg, rng, bit_message(9, 0, i * 100, {uint8_t(i < 4)}), 0);
  }
  std::vector<WindowEstimate> estimates = agg.advance_time(4000);
  ASSERT_EQ(estimates.size(), 1u);
  EXPECT_TRUE(estimates[0].inverted);
  // 4 ones among 10 in a 10-client census: complementary count 6.
  EXPECT_DOUBLE_EQ(estimates[0].buckets[0].estimate, 6.0);
}

TEST(Aggregator, LateAndQuarantineCountersSurface) {
  Aggregator agg({});
  agg.publish_query(one_bucket_query(), zk_budget(1.0), {1.0, 1.0, 0.5});
  agg.register_population(9, {{0, 10}});
  Rng rng(24);
  agg.advance_time(4000);  // current window [2000, 6000)
  ingest_message(agg, rng, bit_message(9, 0, 100, {1}), 4000);   // late
  ingest_message(agg, rng, bit_message(9, 0, 9999, {1}), 4000);  // far future
  EXPECT_EQ(agg.late(), 1u);
  EXPECT_EQ(agg.quarantined(), 1u);
}

TEST(Aggregator, HistoricalMatchesStreamingOnTheSameRange) {
  std::filesystem::path root =
      std::filesystem::temp_directory_path() / "privstream_agg_hist_test";
  std::filesystem::remove_all(root);

  Aggregator::Config cfg;
  cfg.historical_root = root;
  Aggregator agg(cfg);
  agg.publish_query(one_bucket_query(), zk_budget(1.0), {0.5, 0.5, 0.5});
  agg.register_population(9, {{0, 200}});

  Rng rng(25);
  for (int i = 0; i < 100; ++i) {
    ingest_message(agg, rng, bit_message(9, 0, i % 4000, {uint8_t(i < 50)}),
                   i % 4000);
  }
  std::vector<WindowEstimate> streamed = agg.advance_time(4000);
  ASSERT_EQ(streamed.size(), 1u);

  // Full-rate batch pass over the identical range reproduces the streaming
  // numbers exactly.
  WindowEstimate batch = agg.historical_query(9, 0, 4000, 1.0, 7);
  EXPECT_EQ(batch.sample_size, streamed[0].sample_size);
  EXPECT_DOUBLE_EQ(batch.buckets[0].estimate, streamed[0].buckets[0].estimate);
  EXPECT_DOUBLE_EQ(batch.buckets[0].half_width,
                   streamed[0].buckets[0].half_width);

  // A second sampling round keeps a strict subset.
  WindowEstimate thinned = agg.historical_query(9, 0, 4000, 0.6, 7);
  EXPECT_LT(thinned.sample_size, batch.sample_size);
  EXPECT_GT(thinned.sample_size, 0u);

  EXPECT_THROW(agg.historical_query(9, 0, 4000, 0.0, 7), std::invalid_argument);
  EXPECT_THROW(agg.historical_query(9, 4000, 0, 1.0, 7), std::invalid_argument);
  EXPECT_THROW(agg.historical_query(404, 0, 4000, 1.0, 7), std::invalid_argument);
  EXPECT_THROW(agg.historical_query(9, 100000, 200000, 1.0, 7),
               std::runtime_error);

  std::filesystem::remove_all(root);
}

TEST(Aggregator, HistoricalWithoutRootThrows) {
  Aggregator agg({});
  agg.publish_query(one_bucket_query(), zk_budget(1.0), {1.0, 1.0, 0.5});
  EXPECT_THROW(agg.historical_query(9, 0, 4000, 1.0, 7), std::runtime_error);
}

// ---------------------------------------------------------------------------
// HistoricalStore
// ---------------------------------------------------------------------------

TEST(HistoricalStore, RoundTripsAcrossHourBoundaries) {
  std::filesystem::path root =
      std::filesystem::temp_directory_path() / "privstream_store_test";
  std::filesystem::remove_all(root);
  {
    HistoricalStore store(root);
    store.append(bit_message(9, 0, 3'599'999, {1}));
    store.append(bit_message(9, 1, 3'600'000, {0}));
    store.append(bit_message(9, 2, 7'200'001, {1}));
    store.append(bit_message(10, 0, 100, {1, 1}));  // other query
    store.flush();

    std::vector<PlainMessage> all = store.read_range(9, 0, 8'000'000);
    ASSERT_EQ(all.size(), 3u);
    EXPECT_EQ(all[0].timestamp_ms, 3'599'999);
    EXPECT_EQ(all[2].timestamp_ms, 7'200'001);

    // Half-open range straddling one hour file.
    std::vector<PlainMessage> mid = store.read_range(9, 3'600'000, 7'200'000);
    ASSERT_EQ(mid.size(), 1u);
    EXPECT_EQ(mid[0].stratum_id, 1);

    EXPECT_TRUE(store.read_range(404, 0, 8'000'000).empty());
    EXPECT_THROW(store.append(bit_message(9, 0, -5, {1})),
                 std::invalid_argument);
  }

  // Reopening reads everything back from disk.
  HistoricalStore reopened(root);
  EXPECT_EQ(reopened.read_range(9, 0, 8'000'000).size(), 3u);
  EXPECT_EQ(reopened.read_range(10, 0, 8'000'000).size(), 1u);
  std::filesystem::remove_all(root);
}

TEST(HistoricalStore, DetectsOnDiskCorruption) {
  std::filesystem::path root =
      std::filesystem::temp_directory_path() / "privstream_store_corrupt_test";
  std::filesystem::remove_all(root);
  {
    HistoricalStore store(root);
    store.append(bit_message(9, 0, 1000, {1, 0, 1}));
  }
  // Flip one byte inside the only .log file: the embedded checksum on each
  // stored message must catch it.
  std::filesystem::path log;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
    if (entry.path().extension() == ".log") log = entry.path();
  }
  ASSERT_FALSE(log.empty());
  {
    std::fstream f(log, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(10);
    char byte;
    f.seekg(10);
    f.get(byte);
    byte ^= 0x01;
    f.seekp(10);
    f.put(byte);
  }
  HistoricalStore store(root);
  EXPECT_THROW(store.read_range(9, 0, 10'000), CorruptMessage);
  std::filesystem::remove_all(root);
}

}  // namespace
}  // namespace privstream
