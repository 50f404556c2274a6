// Microbenchmarks for the hot paths: client-side randomization and share
// splitting, aggregator-side joining and window estimation, and the
// statistical primitives behind the error bounds.

#include <benchmark/benchmark.h>

#include <vector>

#include "privstream/aggregator.h"
#include "privstream/privacy.h"
#include "privstream/query.h"
#include "privstream/rng.h"
#include "privstream/sampling.h"
#include "privstream/transport.h"

namespace {

using namespace privstream;

AnswerVector make_truth(size_t n_buckets) {
  AnswerVector truth;
  truth.query_id = 7;
  truth.timestamp_ms = 123456;
  truth.bits.assign(n_buckets, 0);
  if (n_buckets > 1) truth.bits[1] = 1;
  return truth;
}

void BM_RandomizeVector(benchmark::State& state) {
  Rng rng(42);
  RRCoins coins{0.9, 0.6};
  AnswerVector truth = make_truth(static_cast<size_t>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(randomize_vector(truth, coins, rng));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_RandomizeVector)->Arg(8)->Arg(64)->Arg(512);

void BM_SplitEncrypt(benchmark::State& state) {
  Rng rng(42);
  PlainMessage msg;
  msg.query_id = 7;
  msg.stratum_id = 0;
  msg.timestamp_ms = 123456;
  msg.payload_bits.assign(static_cast<size_t>(state.range(0)), 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(split_encrypt(msg, 2, rng));
  }
}
BENCHMARK(BM_SplitEncrypt)->Arg(8)->Arg(64)->Arg(512);

void BM_JoinDecrypt(benchmark::State& state) {
  Rng rng(42);
  PlainMessage msg;
  msg.query_id = 7;
  msg.stratum_id = 0;
  msg.timestamp_ms = 123456;
  msg.payload_bits.assign(static_cast<size_t>(state.range(0)), 1);
  std::vector<ShareMessage> shares = split_encrypt(msg, 2, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(join_decrypt(shares));
  }
}
BENCHMARK(BM_JoinDecrypt)->Arg(8)->Arg(64)->Arg(512);

void BM_SerializePlain(benchmark::State& state) {
  PlainMessage msg;
  msg.query_id = 7;
  msg.stratum_id = 3;
  msg.timestamp_ms = 123456;
  msg.payload_bits.assign(static_cast<size_t>(state.range(0)), 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(serialize_plain(msg));
  }
}
BENCHMARK(BM_SerializePlain)->Arg(8)->Arg(512);

void BM_TQuantile(benchmark::State& state) {
  int64_t df = state.range(0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(t_quantile(static_cast<double>(df), 0.975));
  }
}
BENCHMARK(BM_TQuantile)->Arg(1)->Arg(29)->Arg(999)->Arg(1000000);

void BM_EstimateWindow(benchmark::State& state) {
  const size_t n_msgs = static_cast<size_t>(state.range(0));
  const size_t n_buckets = 10;
  Rng rng(42);
  RRCoins coins{0.9, 0.6};

  Query query;
  query.query_id = 7;
  for (size_t y = 0; y < n_buckets; ++y) {
    query.buckets.ranges.push_back(
        {static_cast<double>(y) * 10, static_cast<double>(y + 1) * 10});
  }
  query.buckets.field = "v";
  query.answer_frequency_ms = 1000;
  query.window_length_ms = 10000;
  query.slide_interval_ms = 1000;

  Window win;
  win.start_ms = 0;
  win.end_ms = 10000;
  for (size_t i = 0; i < n_msgs; ++i) {
    AnswerVector truth = make_truth(n_buckets);
    AnswerVector noisy = randomize_vector(truth, coins, rng);
    PlainMessage msg;
    msg.query_id = 7;
    msg.stratum_id = 0;
    msg.timestamp_ms = static_cast<int64_t>(i % 10) * 1000;
    msg.payload_bits = noisy.bits;
    ++win.participation[0];
    win.messages.push_back(std::move(msg));
  }

  ExecutionParams params{0.6, coins.p, coins.q};
  std::map<uint16_t, uint64_t> population{{0, n_msgs * 2}};
  for (auto _ : state) {
    benchmark::DoNotOptimize(estimate_window(win, query, params, population));
  }
  state.SetItemsProcessed(state.iterations() * n_msgs);
}
BENCHMARK(BM_EstimateWindow)->Arg(100)->Arg(1000)->Arg(10000);

void BM_Crc32(benchmark::State& state) {
  std::vector<uint8_t> data(static_cast<size_t>(state.range(0)), 0xa5);
  for (auto _ : state) {
    benchmark::DoNotOptimize(crc32(data.data(), data.size()));
  }
  state.SetBytesProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Crc32)->Arg(64)->Arg(4096);

}  // namespace

BENCHMARK_MAIN();
