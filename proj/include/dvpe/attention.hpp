#pragma once

#include "dvpe/num/attention_op.hpp"
#include "dvpe/num/ops.hpp"
#include "dvpe/partition.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace dvpe {

template <typename T>
struct MhaParams {
  num::Param<T>* wq = nullptr;
  num::Param<T>* bq = nullptr;
  num::Param<T>* wk = nullptr;
  num::Param<T>* bk = nullptr;
  num::Param<T>* wv = nullptr;
  num::Param<T>* bv = nullptr;
  num::Param<T>* wo = nullptr;
  num::Param<T>* bo = nullptr;
  std::size_t heads = 1;
  std::size_t dim = 0;

  static MhaParams create(num::ParamStore<T>& store, const std::string& prefix, std::size_t dim, std::size_t heads,
                          num::Rng& rng);
};

/// Pre-norm attention sub-layer: out = x + MHA(LN(x) + pe, ...).
template <typename T>
struct AttnBlock {
  num::LayerNormParams<T> norm;
  MhaParams<T> mha;

  static AttnBlock create(num::ParamStore<T>& store, const std::string& prefix, std::size_t dim, std::size_t heads,
                          num::Rng& rng);
};

/// Projected multi-head attention. Positional terms are added to q and k
/// only; either PE may be an invalid Var. Output rows of inactive queries
/// are the output-projection bias.
template <typename T>
num::Var<T> masked_mha(num::Tape<T>& tape, const MhaParams<T>& p, num::Var<T> q, num::Var<T> k, num::Var<T> v,
                       num::Var<T> q_pe, num::Var<T> k_pe, const num::AttnSpec& spec,
                       std::vector<T>* probs = nullptr);

struct CrossAttnStats {
  std::size_t passthrough_queries = 0;           // queries whose wedge holds no token
  std::vector<std::size_t> interactions;         // per query: keys attended
};

/// Per-wedge isolated cross-attention. `queries` [Mq x C] and `features`
/// [Nk x C] are in item order; `q_pe`/`k_pe` are in the padded layouts of
/// `qpart`/`kpart`. Returns updated queries in item order. Queries in a
/// wedge without tokens pass through unchanged.
template <typename T>
num::Var<T> visibility_cross_attention(num::Tape<T>& tape, const AttnBlock<T>& block, num::Var<T> queries,
                                       num::Var<T> features, const ViewPartition& qpart, const ViewPartition& kpart,
                                       num::Var<T> q_pe, num::Var<T> k_pe, T fill = T{0},
                                       CrossAttnStats* stats = nullptr, std::vector<T>* probs = nullptr);

/// Membership mask [Mq x Nk]: true iff query and token share a wedge.
std::vector<std::uint8_t> membership_mask(const ViewPartition& qpart, const ViewPartition& kpart);

/// One masked attention over every token. PEs are in item order.
template <typename T>
num::Var<T> oracle_global_attention(num::Tape<T>& tape, const AttnBlock<T>& block, num::Var<T> queries,
                                    num::Var<T> features, std::span<const std::uint8_t> membership, num::Var<T> q_pe,
                                    num::Var<T> k_pe);

/// Key/value mask for temporal attention: queries attend to queries of their
/// own group; only group 0 (the default set) also sees memory entries.
std::vector<std::uint8_t> temporal_mask(std::span<const int> query_groups, std::size_t memory_count);

/// Self-attention over queries extended with memory keys/values.
/// memory_emb/memory_pe may be invalid Vars when memory is empty.
template <typename T>
num::Var<T> temporal_attention(num::Tape<T>& tape, const AttnBlock<T>& block, num::Var<T> queries,
                               num::Var<T> q_world_pe, num::Var<T> memory_emb, num::Var<T> memory_pe,
                               std::span<const int> query_groups);

}  // namespace dvpe
