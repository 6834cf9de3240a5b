#pragma once

#include "dvpe/num/tape.hpp"

#include <cstdint>
#include <vector>

namespace dvpe::num {

/// Layout and masking for a batch of independent attention problems.
/// q is [batch*lq x C], k and v are [batch*lk x C]; C splits into `heads`.
struct AttnSpec {
  std::size_t batch = 1;
  std::size_t lq = 0;
  std::size_t lk = 0;
  std::size_t heads = 1;
  std::vector<std::uint8_t> key_valid;     // batch*lk; empty means all valid
  std::vector<std::uint8_t> pair_valid;    // batch*lq*lk; empty means all valid
  std::vector<std::uint8_t> query_active;  // batch*lq; inactive rows output zero

  bool allowed(std::size_t b, std::size_t i, std::size_t j) const {
    if (!key_valid.empty() && !key_valid[b * lk + j]) return false;
    if (!pair_valid.empty() && !pair_valid[(b * lq + i) * lk + j]) return false;
    return true;
  }
  bool active(std::size_t b, std::size_t i) const { return query_active.empty() || query_active[b * lq + i]; }
};

/// Multi-head softmax(q k^T / sqrt(d)) v without projections. Masked keys get
/// exactly zero weight; keys dropped by key_valid are never read. An active query row with no
/// allowed key throws std::invalid_argument. When `probs_out` is given it
/// receives the weights as [batch x heads x lq x lk].
template <typename T>
Var<T> scaled_dot_attention(Var<T> q, Var<T> k, Var<T> v, const AttnSpec& spec, std::vector<T>* probs_out = nullptr);

}  // namespace dvpe::num
