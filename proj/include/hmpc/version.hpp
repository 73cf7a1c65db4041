#pragma once

namespace hmpc {

// reported in run manifests; bump on file-format changes
inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kCheckpointFormatVersion = 1;

}  // namespace hmpc
