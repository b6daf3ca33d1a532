#pragma once

namespace oodkit {

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace oodkit
