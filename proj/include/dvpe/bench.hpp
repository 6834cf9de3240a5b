#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dvpe {

enum class TokenLayout { Uniform, OneWedge };

struct BenchCase {
  int views = 6;
  std::size_t tokens = 512;
  std::size_t queries = 64;
  int trials = 5;
  TokenLayout layout = TokenLayout::Uniform;
};

struct BenchRow {
  int views = 0;
  std::size_t tokens = 0;
  std::size_t queries = 0;
  int trials = 0;
  std::string layout;
  double global_interactions = 0.0;   // mean keys per query
  double divided_interactions = 0.0;  // mean keys per query
  double interaction_ratio = 0.0;     // divided / global
  double padding_overhead = 0.0;      // sum padded key slots / sum valid keys
  double global_ms = 0.0;
  double divided_ms = 0.0;
};

/// Counts key interactions and times both attention paths on random layouts.
std::vector<BenchRow> bench_attention(const std::vector<BenchCase>& grid, std::uint64_t seed, std::size_t dim = 32,
                                      std::size_t heads = 4, bool timed = true);

std::string bench_to_json(const std::vector<BenchRow>& rows);

}  // namespace dvpe
