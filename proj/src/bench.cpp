#include "dvpe/bench.hpp"

#include "dvpe/attention.hpp"
#include "dvpe/geom.hpp"
#include "dvpe/partition.hpp"

#include "json.hpp"

#include <chrono>
#include <cmath>
#include <random>

namespace dvpe {

namespace {

std::vector<Vec3> sample_points(std::size_t n, TokenLayout layout, int views, num::Rng& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<Vec3> pts;
  pts.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = layout == TokenLayout::Uniform ? kTwoPi * u01(rng) : (kTwoPi / views) * (0.05 + 0.9 * u01(rng));
    const double r = 5.0 + 50.0 * u01(rng);
    pts.emplace_back(r * std::cos(a), r * std::sin(a), -2.0 + 4.0 * u01(rng));
  }
  return pts;
}

num::Tensor<float> random_tensor(std::size_t rows, std::size_t cols, num::Rng& rng) {
  std::normal_distribution<float> nd(0.0f, 1.0f);
  num::Tensor<float> t({rows, cols});
  for (auto& x : t.data) x = nd(rng);
  return t;
}

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::vector<BenchRow> bench_attention(const std::vector<BenchCase>& grid, std::uint64_t seed, std::size_t dim,
                                      std::size_t heads, bool timed) {
  num::Rng rng(seed);
  num::ParamStore<float> store;
  const auto block = AttnBlock<float>::create(store, "bench", dim, heads, rng);
  std::vector<BenchRow> rows;
  for (const auto& c : grid) {
    BenchRow row;
    row.views = c.views;
    row.tokens = c.tokens;
    row.queries = c.queries;
    row.trials = c.trials;
    row.layout = c.layout == TokenLayout::Uniform ? "uniform" : "one_wedge";
    double div_sum = 0.0, padded = 0.0, valid = 0.0;
    std::size_t qcount = 0;
    for (int t = 0; t < c.trials; ++t) {
      const auto qpts = sample_points(c.queries, TokenLayout::Uniform, c.views, rng);
      const auto kpts = sample_points(c.tokens, c.layout, c.views, rng);
      const auto qpart = partition_points(qpts, c.views, 0.0);
      const auto kpart = partition_points(kpts, c.views, 0.0);
      for (std::size_t i = 0; i < qpart.items(); ++i) {
        div_sum += static_cast<double>(kpart.members[static_cast<std::size_t>(qpart.group[i])].size());
        ++qcount;
      }
      padded += static_cast<double>(kpart.slots());
      valid += static_cast<double>(kpart.items());
      if (!timed) continue;

      num::Tape<float> tape;
      tape.set_grad_enabled(false);
      auto q = tape.constant(random_tensor(c.queries, dim, rng));
      auto f = tape.constant(random_tensor(c.tokens, dim, rng));
      auto qpe_items = tape.constant(random_tensor(c.queries, dim, rng));
      auto kpe_items = tape.constant(random_tensor(c.tokens, dim, rng));
      const std::vector<std::uint8_t> all(c.queries * c.tokens, 1);
      auto t0 = std::chrono::steady_clock::now();
      oracle_global_attention(tape, block, q, f, all, qpe_items, kpe_items);
      row.global_ms += elapsed_ms(t0);
      t0 = std::chrono::steady_clock::now();
      const auto qs = qpart.slot_items();
      const auto ks = kpart.slot_items();
      auto qpe = num::gather_rows(qpe_items, qs, 0.0f);
      auto kpe = num::gather_rows(kpe_items, ks, 0.0f);
      visibility_cross_attention(tape, block, q, f, qpart, kpart, qpe, kpe);
      row.divided_ms += elapsed_ms(t0);
    }
    row.global_interactions = static_cast<double>(c.tokens);
    row.divided_interactions = qcount > 0 ? div_sum / static_cast<double>(qcount) : 0.0;
    row.interaction_ratio = row.global_interactions > 0.0 ? row.divided_interactions / row.global_interactions : 0.0;
    row.padding_overhead = valid > 0.0 ? padded / valid : 0.0;
    if (c.trials > 0) {
      row.global_ms /= c.trials;
      row.divided_ms /= c.trials;
    }
    rows.push_back(row);
  }
  return rows;
}

std::string bench_to_json(const std::vector<BenchRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows)
    j.push_back({{"views", r.views},
                 {"tokens", r.tokens},
                 {"queries", r.queries},
                 {"trials", r.trials},
                 {"layout", r.layout},
                 {"global_interactions", r.global_interactions},
                 {"divided_interactions", r.divided_interactions},
                 {"interaction_ratio", r.interaction_ratio},
                 {"padding_overhead", r.padding_overhead},
                 {"global_ms", r.global_ms},
                 {"divided_ms", r.divided_ms}});
  return j.dump(2);
}

}  // namespace dvpe
