#pragma once

namespace octdn {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace octdn
