#pragma once

#include <atomic>
#include <cstdint>

namespace dvpe {

/// Process-wide counters for recoverable degenerate cases.
struct Diagnostics {
  std::atomic<std::uint64_t> degenerate_origin{0};  // point on the z-axis during grouping
  std::atomic<std::uint64_t> empty_wedge_passthrough{0};
  std::atomic<std::uint64_t> roi_depth_clamped{0};

  void reset();
};

Diagnostics& diagnostics();

}  // namespace dvpe
