#include "dvpe/viz.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace dvpe {

namespace {

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

// Sequential white-to-red ramp.
std::string heat(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const int g = static_cast<int>(std::lround(255 * (1.0 - t)));
  char buf[16];
  std::snprintf(buf, sizeof buf, "#ff%02x%02x", g, g);
  return buf;
}

int wedge_of(const Vec3& p, int views, double theta_s) {
  const double a = bev_angle(p);
  int g = static_cast<int>(std::floor(views * (a + theta_s) / kTwoPi));
  return ((g % views) + views) % views;
}

}  // namespace

std::string bev_wedge_svg(const std::vector<Vec3>& refs, const std::vector<int>& query_group, int views,
                          const std::vector<BevPlotLayer>& layers, double radius) {
  if (views < 1) throw std::invalid_argument("bev_wedge_svg: views must be positive");
  if (!query_group.empty() && query_group.size() != refs.size())
    throw std::invalid_argument("bev_wedge_svg: one group id per reference point");
  const double panel = 320, half = panel / 2, s = (half - 20) / radius;
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << panel * std::max<std::size_t>(1, layers.size())
    << "\" height=\"" << panel + 30 << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const auto& L = layers[li];
    const double ox = panel * li + half, oy = half + 25;
    o << "<g>\n<text x=\"" << ox << "\" y=\"16\" text-anchor=\"middle\">layer " << L.layer
      << "  theta_s = " << fmt(L.theta_s * 180.0 / kPi) << " deg</text>\n";
    o << "<circle cx=\"" << ox << "\" cy=\"" << oy << "\" r=\"" << radius * s
      << "\" fill=\"none\" stroke=\"#999\"/>\n";
    // Edges sit where V(angle + theta_s) / 2pi is an integer.
    for (int v = 0; v < views && views > 1; ++v) {
      const double a = kTwoPi * v / views - L.theta_s;
      o << "<line x1=\"" << ox << "\" y1=\"" << oy << "\" x2=\"" << fmt(ox - std::sin(a) * radius * s)
        << "\" y2=\"" << fmt(oy - std::cos(a) * radius * s) << "\" stroke=\"#444\" stroke-dasharray=\"4 3\"/>\n";
    }
    for (std::size_t i = 0; i < refs.size(); ++i) {
      // Ego +x points up the page, +y to the left.
      const double px = ox - refs[i].y() * s, py = oy - refs[i].x() * s;
      const int w = wedge_of(refs[i], views, L.theta_s);
      const int g = query_group.empty() ? 0 : query_group[i];
      o << "<circle cx=\"" << fmt(px) << "\" cy=\"" << fmt(py) << "\" r=\"3\" fill=\"" << kPalette[w % 10]
        << "\" stroke=\"" << (g == 0 ? "#000" : kPalette[(g + 5) % 10]) << "\" stroke-width=\"" << (g == 0 ? 0.5 : 1.5)
        << "\"/>\n";
    }
    o << "</g>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::vector<double> query_token_attention(const AttentionTrace& trace, std::size_t heads, std::size_t head,
                                          std::size_t query) {
  const auto& qp = trace.query_part;
  const auto& kp = trace.token_part;
  if (head >= heads) throw std::out_of_range("query_token_attention: head out of range");
  if (query >= qp.items()) throw std::out_of_range("query_token_attention: query out of range");
  const std::size_t V = static_cast<std::size_t>(qp.views), Lq = qp.max_len, Lk = kp.max_len;
  if (trace.probs.size() != V * heads * Lq * Lk)
    throw std::invalid_argument("query_token_attention: trace does not match the partitions");
  std::vector<double> out(kp.items(), 0.0);
  const auto w = static_cast<std::size_t>(qp.group[query]);
  const auto& qm = qp.members[w];
  const auto slot = static_cast<std::size_t>(std::lower_bound(qm.begin(), qm.end(), query) - qm.begin());
  const auto& km = kp.members[w];
  const double* row = trace.probs.data() + ((w * heads + head) * Lq + slot) * Lk;
  for (std::size_t j = 0; j < km.size(); ++j) out[km[j]] = row[j];
  return out;
}

std::string attention_heatmap_svg(const std::vector<double>& weights, const std::vector<CameraModel>& rig,
                                  const std::string& title) {
  std::size_t total = 0;
  for (const auto& c : rig) total += c.tokens();
  if (weights.size() != total) throw std::invalid_argument("attention_heatmap_svg: one weight per token");
  const double peak = weights.empty() ? 1.0 : std::max(1e-12, *std::max_element(weights.begin(), weights.end()));
  const double cell = 10, gap = 16;
  double width = gap, height = 0;
  for (const auto& c : rig) {
    width += c.feat_w * cell + gap;
    height = std::max(height, c.feat_h * cell);
  }
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height + 50
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n<text x=\"" << gap << "\" y=\"16\">" << title
    << "  (peak " << fmt(peak) << ")</text>\n";
  double x0 = gap;
  std::size_t base = 0;
  for (std::size_t v = 0; v < rig.size(); ++v) {
    const auto& c = rig[v];
    o << "<text x=\"" << x0 << "\" y=\"38\">view " << v << "</text>\n";
    for (int r = 0; r < c.feat_h; ++r)
      for (int col = 0; col < c.feat_w; ++col) {
        const double w = weights[base + static_cast<std::size_t>(r) * c.feat_w + col] / peak;
        o << "<rect x=\"" << x0 + col * cell << "\" y=\"" << 44 + r * cell << "\" width=\"" << cell << "\" height=\""
          << cell << "\" fill=\"" << heat(w) << "\"/>\n";
      }
    o << "<rect x=\"" << x0 << "\" y=\"44\" width=\"" << c.feat_w * cell << "\" height=\"" << c.feat_h * cell
      << "\" fill=\"none\" stroke=\"#333\"/>\n";
    x0 += c.feat_w * cell + gap;
    base += c.tokens();
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace dvpe
