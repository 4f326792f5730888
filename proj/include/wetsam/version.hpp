#pragma once

namespace wetsam {

inline constexpr const char* kVersion = "0.1.0";

} // namespace wetsam
