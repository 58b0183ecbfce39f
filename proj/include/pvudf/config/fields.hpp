#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace pvudf::fields {

using Fields = std::map<std::string, std::string>;

// Strict scalar parsers; `context` prefixes the error message.
std::size_t to_size(const std::string& context, const std::string& text);
std::uint64_t to_u64(const std::string& context, const std::string& text);
double to_real(const std::string& context, const std::string& text);
bool to_bool(const std::string& context, const std::string& text);
std::vector<std::size_t> to_size_list(const std::string& context, const std::string& text);
std::vector<double> to_real_list(const std::string& context, const std::string& text);

/// Shortest decimal form that reads back to the same double.
std::string format(double value);
std::string format(bool value);
std::string format(const std::vector<std::size_t>& values);
std::string format(const std::vector<double>& values);

std::string trim(const std::string& text);

}  // namespace pvudf::fields
