#pragma once

namespace eirm {

inline constexpr const char* kVersion = "0.1.0";

}
