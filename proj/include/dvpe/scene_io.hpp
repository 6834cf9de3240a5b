#pragma once

#include "dvpe/metrics.hpp"
#include "dvpe/sim.hpp"

#include <string>

namespace dvpe {

/// JSON document with version, rig and frames; doubles are written with
/// round-trip precision.
std::string scene_to_json(const Scene& scene);
Scene scene_from_json(const std::string& text);

void save_scene(const std::string& path, const Scene& scene);
Scene load_scene(const std::string& path);

std::string metrics_to_json(const MetricsReport& report);

}  // namespace dvpe
