#pragma once

#include "dvpe/model.hpp"

#include <string>
#include <vector>

namespace dvpe {

struct BevPlotLayer {
  int layer = 0;
  double theta_s = 0.0;
};

/// Top-down plot with one panel per layer: wedge edges, reference points
/// filled by wedge and outlined by query group, and the layer's shift angle.
std::string bev_wedge_svg(const std::vector<Vec3>& ref_points, const std::vector<int>& query_group, int views,
                          const std::vector<BevPlotLayer>& layers, double radius);

/// Attention of one query over every token of the rig, zero outside its
/// wedge. Throws on an out-of-range head or query.
std::vector<double> query_token_attention(const AttentionTrace& trace, std::size_t heads, std::size_t head,
                                          std::size_t query);

/// One heatmap per camera, tokens laid out on the feature grid.
std::string attention_heatmap_svg(const std::vector<double>& token_weights, const std::vector<CameraModel>& rig,
                                  const std::string& title);

}  // namespace dvpe
