#include "privstream/query.h"

#include <cmath>
#include <cstdio>
#include <regex>
#include <sstream>
#include <stdexcept>

namespace privstream {

namespace {

bool scalar_equal(const Scalar& a, const Scalar& b) {
  if (is_number(a) != is_number(b)) return false;
  if (is_number(a)) return as_number(a) == as_number(b);
  return as_text(a) == as_text(b);
}

// Numeric comparison only; text fields support =, != and contains.
bool compare(const Scalar& lhs, PredicateOp op, const Scalar& rhs) {
  switch (op) {
    case PredicateOp::kEq:
      return scalar_equal(lhs, rhs);
    case PredicateOp::kNe:
      return !scalar_equal(lhs, rhs);
    case PredicateOp::kContains:
      return !is_number(lhs) && !is_number(rhs) &&
             as_text(lhs).find(as_text(rhs)) != std::string::npos;
    default:
      break;
  }
  if (!is_number(lhs) || !is_number(rhs)) return false;
  double a = as_number(lhs), b = as_number(rhs);
  switch (op) {
    case PredicateOp::kLt: return a < b;
    case PredicateOp::kLe: return a <= b;
    case PredicateOp::kGt: return a > b;
    case PredicateOp::kGe: return a >= b;
    default: return false;
  }
}

}  // namespace

bool Predicate::matches(const Record& r) const {
  for (const auto& clause : clauses) {
    const Scalar* value = r.find_field(clause.field);
    if (value == nullptr || !compare(*value, clause.op, clause.value)) {
      return false;
    }
  }
  return true;
}

std::vector<std::string> validate_query(const Query& q) {
  std::vector<std::string> violations;
  if (q.buckets.size() == 0) violations.push_back("empty bucket spec");
  if (q.buckets.field.empty()) violations.push_back("bucket field name is empty");
  if (q.buckets.kind == BucketSpec::Kind::kNumericRanges) {
    const auto& ranges = q.buckets.ranges;
    for (size_t i = 0; i < ranges.size(); ++i) {
      if (!(ranges[i].lo < ranges[i].hi)) {
        violations.push_back("bucket " + std::to_string(i) + " has lo >= hi");
      }
      if (i > 0 && ranges[i].lo < ranges[i - 1].lo) {
        violations.push_back("buckets not sorted by lo");
      }
      if (i > 0 && ranges[i].lo < ranges[i - 1].hi) {
        violations.push_back("buckets overlap");
      }
    }
  } else {
    for (size_t i = 0; i < q.buckets.rules.size(); ++i) {
      try {
        std::regex re(q.buckets.rules[i]);
      } catch (const std::regex_error&) {
        violations.push_back("bucket rule " + std::to_string(i) +
                             " is not a valid regex");
      }
    }
  }
  if (q.answer_frequency_ms <= 0) violations.push_back("answer_frequency_ms must be positive");
  if (q.window_length_ms <= 0) violations.push_back("window_length_ms must be positive");
  if (q.slide_interval_ms <= 0) violations.push_back("slide_interval_ms must be positive");
  if (q.slide_interval_ms > q.window_length_ms) {
    violations.push_back("slide interval exceeds window length");
  }
  for (const auto& clause : q.predicate.clauses) {
    if (clause.field.empty()) violations.push_back("predicate clause with empty field name");
  }
  return violations;
}

std::vector<uint8_t> bucketize(const Scalar& value, const BucketSpec& spec) {
  std::vector<uint8_t> bits(spec.size(), 0);
  if (spec.kind == BucketSpec::Kind::kNumericRanges) {
    if (!is_number(value)) {
      throw std::invalid_argument("bucketize: numeric spec given a text value");
    }
    double v = as_number(value);
    for (size_t i = 0; i < spec.ranges.size(); ++i) {
      if (v >= spec.ranges[i].lo && v < spec.ranges[i].hi) {
        bits[i] = 1;
        break;  // disjoint intervals: at most one bucket contains v
      }
    }
  } else {
    if (is_number(value)) {
      throw std::invalid_argument("bucketize: regex spec given a numeric value");
    }
    const std::string& text = as_text(value);
    for (size_t i = 0; i < spec.rules.size(); ++i) {
      std::regex re(spec.rules[i]);
      if (std::regex_search(text, re)) bits[i] = 1;
    }
  }
  return bits;
}

// --------------------------------------------------------------------------
// Text forms
// --------------------------------------------------------------------------

namespace {

const char* op_name(PredicateOp op) {
  switch (op) {
    case PredicateOp::kEq: return "=";
    case PredicateOp::kNe: return "!=";
    case PredicateOp::kLt: return "<";
    case PredicateOp::kLe: return "<=";
    case PredicateOp::kGt: return ">";
    case PredicateOp::kGe: return ">=";
    case PredicateOp::kContains: return "contains";
  }
  return "=";
}

std::optional<PredicateOp> parse_op(const std::string& text) {
  if (text == "=") return PredicateOp::kEq;
  if (text == "!=") return PredicateOp::kNe;
  if (text == "<") return PredicateOp::kLt;
  if (text == "<=") return PredicateOp::kLe;
  if (text == ">") return PredicateOp::kGt;
  if (text == ">=") return PredicateOp::kGe;
  if (text == "contains") return PredicateOp::kContains;
  return std::nullopt;
}

std::string format_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_number_or_throw(const std::string& text, const std::string& what) {
  if (text == "inf") return kBucketInf;
  if (text == "-inf") return -kBucketInf;
  char* end = nullptr;
  double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size()) {
    throw std::invalid_argument("bad number for " + what + ": '" + text + "'");
  }
  return v;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

std::string format_predicate(const Predicate& p) {
  if (p.clauses.empty()) return "*";
  std::string out;
  for (size_t i = 0; i < p.clauses.size(); ++i) {
    if (i > 0) out += " && ";
    const auto& c = p.clauses[i];
    out += c.field;
    out += ' ';
    out += op_name(c.op);
    out += ' ';
    out += is_number(c.value) ? format_number(as_number(c.value)) : as_text(c.value);
  }
  return out;
}

Predicate parse_predicate(const std::string& text) {
  Predicate p;
  std::string t = trim(text);
  if (t.empty() || t == "*") return p;
  size_t pos = 0;
  while (pos <= t.size()) {
    size_t next = t.find("&&", pos);
    std::string part = trim(next == std::string::npos ? t.substr(pos)
                                                      : t.substr(pos, next - pos));
    std::istringstream in(part);
    PredicateClause c;
    std::string op_text, value_text;
    if (!(in >> c.field >> op_text)) {
      throw std::invalid_argument("bad predicate clause: '" + part + "'");
    }
    std::getline(in, value_text);
    value_text = trim(value_text);
    auto op = parse_op(op_text);
    if (!op || value_text.empty()) {
      throw std::invalid_argument("bad predicate clause: '" + part + "'");
    }
    c.op = *op;
    char* end = nullptr;
    double num = std::strtod(value_text.c_str(), &end);
    if (end == value_text.c_str() + value_text.size() && !value_text.empty()) {
      c.value = num;
    } else {
      c.value = value_text;
    }
    p.clauses.push_back(std::move(c));
    if (next == std::string::npos) break;
    pos = next + 2;
  }
  return p;
}

std::string format_query_block(const QueryBlock& qb) {
  const Query& q = qb.query;
  std::ostringstream out;
  out << "query_id=" << q.query_id << "\n";
  out << "predicate=" << format_predicate(q.predicate) << "\n";
  out << "buckets.kind="
      << (q.buckets.kind == BucketSpec::Kind::kNumericRanges ? "numeric" : "regex")
      << "\n";
  out << "buckets.field=" << q.buckets.field << "\n";
  if (q.buckets.kind == BucketSpec::Kind::kNumericRanges) {
    for (const auto& r : q.buckets.ranges) {
      out << "bucket=" << format_number(r.lo) << ',' << format_number(r.hi) << "\n";
    }
  } else {
    for (const auto& rule : q.buckets.rules) out << "bucket=" << rule << "\n";
  }
  out << "f=" << q.answer_frequency_ms << "\n";
  out << "w=" << q.window_length_ms << "\n";
  out << "delta=" << q.slide_interval_ms << "\n";
  out << "inverted=" << (q.inverted ? 1 : 0) << "\n";
  out << "budget.kind=" << (qb.budget.kind == Budget::Kind::kZkPrivacy ? "zk" : "dp")
      << "\n";
  out << "budget.epsilon=" << format_number(qb.budget.epsilon) << "\n";
  if (qb.budget.error_target) {
    out << "budget.error_target=" << format_number(*qb.budget.error_target) << "\n";
  }
  out << "budget.confidence=" << format_number(qb.budget.confidence_level) << "\n";
  return out.str();
}

QueryBlock parse_query_block(const std::string& text) {
  QueryBlock qb;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  bool saw_id = false;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("query block line " + std::to_string(line_no) +
                                  ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key == "query_id") {
      qb.query.query_id = std::stoull(value);
      saw_id = true;
    } else if (key == "predicate") {
      qb.query.predicate = parse_predicate(value);
    } else if (key == "buckets.kind") {
      if (value == "numeric") {
        qb.query.buckets.kind = BucketSpec::Kind::kNumericRanges;
      } else if (value == "regex") {
        qb.query.buckets.kind = BucketSpec::Kind::kRegexRules;
      } else {
        throw std::invalid_argument("unknown buckets.kind '" + value + "'");
      }
    } else if (key == "buckets.field") {
      qb.query.buckets.field = value;
    } else if (key == "bucket") {
      if (qb.query.buckets.kind == BucketSpec::Kind::kNumericRanges) {
        auto comma = value.find(',');
        if (comma == std::string::npos) {
          throw std::invalid_argument("numeric bucket needs 'lo,hi': '" + value + "'");
        }
        BucketRange r;
        r.lo = parse_number_or_throw(trim(value.substr(0, comma)), "bucket lo");
        r.hi = parse_number_or_throw(trim(value.substr(comma + 1)), "bucket hi");
        qb.query.buckets.ranges.push_back(r);
      } else {
        qb.query.buckets.rules.push_back(value);
      }
    } else if (key == "f") {
      qb.query.answer_frequency_ms = std::stoll(value);
    } else if (key == "w") {
      qb.query.window_length_ms = std::stoll(value);
    } else if (key == "delta") {
      qb.query.slide_interval_ms = std::stoll(value);
    } else if (key == "inverted") {
      qb.query.inverted = (value == "1" || value == "true");
    } else if (key == "budget.kind") {
      if (value == "zk") {
        qb.budget.kind = Budget::Kind::kZkPrivacy;
      } else if (value == "dp") {
        qb.budget.kind = Budget::Kind::kDpPrivacy;
      } else {
        throw std::invalid_argument("unknown budget.kind '" + value + "'");
      }
    } else if (key == "budget.epsilon") {
      qb.budget.epsilon = parse_number_or_throw(value, "budget.epsilon");
    } else if (key == "budget.error_target") {
      qb.budget.error_target = parse_number_or_throw(value, "budget.error_target");
    } else if (key == "budget.confidence") {
      qb.budget.confidence_level = parse_number_or_throw(value, "budget.confidence");
    } else {
      throw std::invalid_argument("unknown query block key '" + key + "'");
    }
  }
  if (!saw_id) throw std::invalid_argument("query block missing query_id");
  return qb;
}

}  // namespace privstream
