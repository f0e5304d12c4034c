#pragma once

namespace qpst {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace qpst
