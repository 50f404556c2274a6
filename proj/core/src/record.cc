#include "privstream/record.h"

#include <cstdio>
#include <cstdlib>
#include <sstream>

namespace privstream {

const Scalar* Record::find_field(const std::string& name) const {
  for (const auto& [field, value] : fields) {
    if (field == name) return &value;
  }
  return nullptr;
}

namespace {

bool parse_number(const std::string& text, double* out) {
  if (text.empty()) return false;
  char* end = nullptr;
  double v = std::strtod(text.c_str(), &end);
  if (end != text.c_str() + text.size()) return false;
  *out = v;
  return true;
}

}  // namespace

std::optional<Record> parse_record_line(const std::string& line) {
  std::istringstream in(line);
  std::string token;
  if (!std::getline(in, token, ',')) return std::nullopt;
  Record r;
  double ts;
  if (!parse_number(token, &ts)) return std::nullopt;
  r.timestamp_ms = static_cast<int64_t>(ts);
  while (std::getline(in, token, ',')) {
    auto eq = token.find('=');
    if (eq == std::string::npos || eq == 0) return std::nullopt;
    std::string name = token.substr(0, eq);
    std::string value = token.substr(eq + 1);
    double num;
    if (parse_number(value, &num)) {
      r.fields.emplace_back(std::move(name), num);
    } else {
      r.fields.emplace_back(std::move(name), std::move(value));
    }
  }
  return r;
}

std::string format_record_line(const Record& r) {
  std::ostringstream out;
  out << r.timestamp_ms;
  for (const auto& [field, value] : r.fields) {
    out << ',' << field << '=';
    if (is_number(value)) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.17g", as_number(value));
      out << buf;
    } else {
      out << as_text(value);
    }
  }
  return out.str();
}

}  // namespace privstream
