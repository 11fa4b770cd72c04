#pragma once

#include <chrono>
#include <cstdint>

namespace rollforge::core {

// Milliseconds since the Unix epoch, UTC.
inline std::int64_t now_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

// Monotonic milliseconds (fractional) for latency and window accounting.
inline double steady_ms() {
  using namespace std::chrono;
  return duration<double, std::milli>(steady_clock::now().time_since_epoch()).count();
}

}  // namespace rollforge::core
