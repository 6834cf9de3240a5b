#include "dvpe/diagnostics.hpp"

namespace dvpe {

void Diagnostics::reset() {
  degenerate_origin = 0;
  empty_wedge_passthrough = 0;
  roi_depth_clamped = 0;
}

Diagnostics& diagnostics() {
  static Diagnostics d;
  return d;
}

}  // namespace dvpe
