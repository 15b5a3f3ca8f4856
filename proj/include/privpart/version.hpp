#pragma once

namespace privpart {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace privpart
