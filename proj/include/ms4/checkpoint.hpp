#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>

#include "ms4/data.hpp"
#include "ms4/model.hpp"

namespace ms4 {

inline constexpr int kCheckpointFormatVersion = 1;

/// A trained model plus the input normalization it was trained with.
struct Checkpoint {
  ModelParams<double> model;
  std::optional<FeatureStats> input_stats;
};

/// Text checkpoint:
///   format_version 1
///   <key> <value>            (one line per hyperparameter)
///   array <name> <rows> <cols>
///   <row-major values, one matrix row per line, comma-separated>
///   ...
///   end
/// Values use shortest round-trip decimal text, so save -> load is exact.
void save_checkpoint(const Checkpoint& ckpt, std::ostream& out);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(std::istream& in, const std::string& source = "<stream>");
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ms4
