#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "remn/errors.hpp"
#include "remn/model.hpp"

namespace remn {

// Layout, all integers little-endian:
//   "REMN" | u32 version | u32 tensor count
//   per tensor: u16 name length, UTF-8 name, u8 rank, rank x u32 dims, f32 data
// Parameters come first in model order, then "<bn>.running_mean" and
// "<bn>.running_var" for every batch norm, then "__mode__" ([1], 0 train / 1 eval).
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr const char* kModeTensorName = "__mode__";

class CheckpointError : public DataError {
 public:
  enum class Kind { Io, BadMagic, UnsupportedVersion, Truncated, NameMismatch, ShapeMismatch, CountMismatch, TrailingData };

  CheckpointError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

void save_checkpoint(const ResEmoteNet& model, const std::filesystem::path& path);

/// Builds a model from `config` and overwrites every parameter, running
/// statistic and the mode flag from the file. Throws CheckpointError.
ResEmoteNet load_checkpoint(const std::filesystem::path& path, const ModelConfig& config);

}  // namespace remn
