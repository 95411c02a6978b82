#pragma once

namespace dvg {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace dvg
