#pragma once

#include <cstdint>

namespace tamcl {

inline constexpr const char* kVersion = "0.1.0";

// Bumped whenever the result-document or file layouts change incompatibly.
inline constexpr int kResultSchemaVersion = 1;
inline constexpr std::uint32_t kDatasetFormatVersion = 1;
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

}  // namespace tamcl
