#ifndef PRIVSTREAM_RECORD_H_
#define PRIVSTREAM_RECORD_H_

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace privstream {

// A scalar field value: number or text.
using Scalar = std::variant<double, std::string>;

inline bool is_number(const Scalar& s) { return std::holds_alternative<double>(s); }
inline double as_number(const Scalar& s) { return std::get<double>(s); }
inline const std::string& as_text(const Scalar& s) { return std::get<std::string>(s); }

// One client-local data item: an event timestamp plus named fields.
struct Record {
  int64_t timestamp_ms = 0;
  std::vector<std::pair<std::string, Scalar>> fields;

  const Scalar* find_field(const std::string& name) const;
};

// Parses "timestamp_ms,field=value,..." (the record file line format).
// Values that parse as a number become numbers, everything else is text.
// Returns nullopt on malformed input.
std::optional<Record> parse_record_line(const std::string& line);
std::string format_record_line(const Record& r);

}  // namespace privstream

#endif  // PRIVSTREAM_RECORD_H_
