#include "pvudf/config/fields.hpp"

#include <charconv>
#include <cmath>
#include <stdexcept>

namespace pvudf::fields {
namespace {

[[noreturn]] void fail(const std::string& context, const std::string& expected, const std::string& text) {
  throw std::invalid_argument(context + ": expected " + expected + ", got '" + text + "'");
}

template <typename T>
T parse_integer(const std::string& context, const std::string& raw) {
  const std::string text = trim(raw);
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (text.empty() || ec != std::errc() || ptr != end) fail(context, "a non-negative integer", raw);
  return value;
}

std::vector<std::string> split(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = text.find(',', start);
    out.push_back(trim(text.substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

std::string trim(const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = text.find_last_not_of(" \t\r");
  return text.substr(first, last - first + 1);
}

std::size_t to_size(const std::string& context, const std::string& text) {
  return parse_integer<std::size_t>(context, text);
}

std::uint64_t to_u64(const std::string& context, const std::string& text) {
  return parse_integer<std::uint64_t>(context, text);
}

double to_real(const std::string& context, const std::string& raw) {
  const std::string text = trim(raw);
  double value = 0.0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (text.empty() || ec != std::errc() || ptr != end || !std::isfinite(value)) {
    fail(context, "a finite number", raw);
  }
  return value;
}

bool to_bool(const std::string& context, const std::string& raw) {
  const std::string text = trim(raw);
  if (text == "true") return true;
  if (text == "false") return false;
  fail(context, "true or false", raw);
}

std::vector<std::size_t> to_size_list(const std::string& context, const std::string& text) {
  std::vector<std::size_t> out;
  for (const std::string& item : split(text)) out.push_back(to_size(context, item));
  return out;
}

std::vector<double> to_real_list(const std::string& context, const std::string& text) {
  std::vector<double> out;
  for (const std::string& item : split(text)) out.push_back(to_real(context, item));
  return out;
}

std::string format(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

std::string format(bool value) { return value ? "true" : "false"; }

std::string format(const std::vector<std::size_t>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + std::to_string(values[i]);
  return out;
}

std::string format(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + format(values[i]);
  return out;
}

}  // namespace pvudf::fields
