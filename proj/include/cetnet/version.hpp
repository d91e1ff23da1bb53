#pragma once

namespace cetnet {

inline constexpr const char* kToolName = "cetnet";
inline constexpr const char* kVersion = "0.1.0";

}  // namespace cetnet
