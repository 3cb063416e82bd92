#pragma once

namespace merf {

inline constexpr const char* version = "0.1.0";

}  // namespace merf
