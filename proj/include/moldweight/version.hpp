#pragma once

namespace moldweight {

inline constexpr const char* kVersion = "1.0.0";

}  // namespace moldweight
