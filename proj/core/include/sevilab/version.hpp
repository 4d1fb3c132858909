#pragma once

namespace sevilab {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace sevilab
