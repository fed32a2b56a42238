#pragma once

namespace pibench {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kRecordsSchemaVersion = 1;

} // namespace pibench
