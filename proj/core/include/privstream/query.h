#ifndef PRIVSTREAM_QUERY_H_
#define PRIVSTREAM_QUERY_H_

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "privstream/record.h"

namespace privstream {

// ---------------------------------------------------------------------------
// Query vocabulary shared by every other component. All types here are
// immutable values after construction: safe to share across threads.
// ---------------------------------------------------------------------------

enum class PredicateOp { kEq, kNe, kLt, kLe, kGt, kGe, kContains };

struct PredicateClause {
  std::string field;
  PredicateOp op = PredicateOp::kEq;
  Scalar value;
};

// Conjunction of clauses over one record. An empty clause list matches every
// record (used by synthetic workloads).
struct Predicate {
  std::vector<PredicateClause> clauses;

  bool matches(const Record& r) const;
};

// Half-open numeric interval [lo, hi). hi may be +infinity.
struct BucketRange {
  double lo = 0;
  double hi = 0;
};

struct BucketSpec {
  enum class Kind { kNumericRanges, kRegexRules };
  Kind kind = Kind::kNumericRanges;
  // Record field whose value is bucketized.
  std::string field;
  // kNumericRanges: pairwise-disjoint intervals sorted by lo.
  std::vector<BucketRange> ranges;
  // kRegexRules: every matching rule's bucket gets a 1.
  std::vector<std::string> rules;

  size_t size() const {
    return kind == Kind::kNumericRanges ? ranges.size() : rules.size();
  }
};

// The n-bucket bit vector: the unit that is randomized, encrypted, shipped,
// and aggregated. bits holds one 0/1 byte per bucket.
struct AnswerVector {
  std::vector<uint8_t> bits;
  uint64_t query_id = 0;
  int64_t timestamp_ms = 0;
};

struct Budget {
  enum class Kind { kZkPrivacy, kDpPrivacy };
  Kind kind = Kind::kZkPrivacy;
  double epsilon = 0;
  // Relative accuracy-loss target driving adaptive feedback; unset disables
  // the feedback loop.
  std::optional<double> error_target;
  // 1 - alpha for reported confidence intervals.
  double confidence_level = 0.95;
};

// The system parameters a budget is converted into: sampling fraction s and
// the two response-randomization coin probabilities.
struct ExecutionParams {
  double s = 1.0;
  double p = 0.9;
  double q = 0.6;
};

struct Query {
  uint64_t query_id = 0;
  Predicate predicate;
  BucketSpec buckets;
  int64_t answer_frequency_ms = 0;  // f: one answer per client per epoch
  int64_t window_length_ms = 0;     // w
  int64_t slide_interval_ms = 0;    // delta
  bool inverted = false;            // report complementary counts
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// Returns every invariant violation; empty means the query is valid.
// Violations are data, not faults.
std::vector<std::string> validate_query(const Query& q);

// Maps a record value onto bucket bits. Numeric specs set the bit whose
// interval contains the value (at most one; none if the value lies outside
// every interval). Regex specs set every matching rule's bit.
// Throws std::invalid_argument when the value type does not match the
// bucket kind.
std::vector<uint8_t> bucketize(const Scalar& value, const BucketSpec& spec);

// Query file/wire form: a line-oriented key=value block carrying the query
// and its budget. parse_query_block accepts the output of format_query_block
// losslessly. See README.md for the exact grammar.
struct QueryBlock {
  Query query;
  Budget budget;
};
std::string format_query_block(const QueryBlock& qb);
// Throws std::invalid_argument with a line-precise message on bad input.
QueryBlock parse_query_block(const std::string& text);

// Predicate text form: "field op value [&& field op value ...]" with op in
// {=, !=, <, <=, >, >=, contains}; "*" or empty means match-all.
std::string format_predicate(const Predicate& p);
Predicate parse_predicate(const std::string& text);

constexpr double kBucketInf = std::numeric_limits<double>::infinity();

}  // namespace privstream

#endif  // PRIVSTREAM_QUERY_H_
