#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "pvudf/nn/parameters.hpp"

namespace pvudf::nn {

/// Binary checkpoint: "PVUDFCKP", u32 version, a text header of key=value
/// lines, the optimizer step, then every parameter (value and Adam moments)
/// and buffer by name. All integers and doubles are little-endian, so a
/// save/load round trip is bit-exact.
struct Checkpoint {
  std::map<std::string, std::string> header;
  ParameterStore store;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Writes to a sibling temporary file, then renames over `path`.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pvudf::nn
