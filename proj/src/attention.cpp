#include "dvpe/attention.hpp"

#include "dvpe/diagnostics.hpp"

#include <stdexcept>

namespace dvpe {

template <typename T>
MhaParams<T> MhaParams<T>::create(num::ParamStore<T>& store, const std::string& prefix, std::size_t dim,
                                  std::size_t heads, num::Rng& rng) {
  if (heads == 0 || dim % heads != 0) throw std::invalid_argument("MhaParams: dim must be divisible by heads");
  MhaParams p;
  p.heads = heads;
  p.dim = dim;
  p.wq = &store.uniform(prefix + ".wq", {dim, dim}, dim, rng);
  p.bq = &store.filled(prefix + ".bq", {dim}, T(0));
  p.wk = &store.uniform(prefix + ".wk", {dim, dim}, dim, rng);
  p.bk = &store.filled(prefix + ".bk", {dim}, T(0));
  p.wv = &store.uniform(prefix + ".wv", {dim, dim}, dim, rng);
  p.bv = &store.filled(prefix + ".bv", {dim}, T(0));
  p.wo = &store.uniform(prefix + ".wo", {dim, dim}, dim, rng);
  p.bo = &store.filled(prefix + ".bo", {dim}, T(0));
  return p;
}

template <typename T>
AttnBlock<T> AttnBlock<T>::create(num::ParamStore<T>& store, const std::string& prefix, std::size_t dim,
                                  std::size_t heads, num::Rng& rng) {
  AttnBlock b;
  b.norm = num::LayerNormParams<T>::create(store, prefix + ".norm", dim);
  b.mha = MhaParams<T>::create(store, prefix + ".mha", dim, heads, rng);
  return b;
}

template <typename T>
num::Var<T> masked_mha(num::Tape<T>& tape, const MhaParams<T>& p, num::Var<T> q, num::Var<T> k, num::Var<T> v,
                       num::Var<T> q_pe, num::Var<T> k_pe, const num::AttnSpec& spec, std::vector<T>* probs) {
  if (q_pe.valid()) q = num::add(q, q_pe);
  if (k_pe.valid()) k = num::add(k, k_pe);
  auto qp = num::linear(q, tape.param(*p.wq), tape.param(*p.bq));
  auto kp = num::linear(k, tape.param(*p.wk), tape.param(*p.bk));
  auto vp = num::linear(v, tape.param(*p.wv), tape.param(*p.bv));
  num::AttnSpec s = spec;
  s.heads = p.heads;
  auto o = num::scaled_dot_attention(qp, kp, vp, s, probs);
  return num::linear(o, tape.param(*p.wo), tape.param(*p.bo));
}

std::vector<std::uint8_t> membership_mask(const ViewPartition& qpart, const ViewPartition& kpart) {
  std::vector<std::uint8_t> m(qpart.items() * kpart.items(), 0);
  for (std::size_t i = 0; i < qpart.items(); ++i)
    for (std::size_t j = 0; j < kpart.items(); ++j) m[i * kpart.items() + j] = qpart.group[i] == kpart.group[j];
  return m;
}

template <typename T>
num::Var<T> visibility_cross_attention(num::Tape<T>& tape, const AttnBlock<T>& block, num::Var<T> queries,
                                       num::Var<T> features, const ViewPartition& qpart, const ViewPartition& kpart,
                                       num::Var<T> q_pe, num::Var<T> k_pe, T fill, CrossAttnStats* stats,
                                       std::vector<T>* probs) {
  if (qpart.views != kpart.views) throw std::invalid_argument("visibility_cross_attention: view count mismatch");
  if (queries.rows() != qpart.items() || features.rows() != kpart.items())
    throw std::invalid_argument("visibility_cross_attention: partition does not cover queries and tokens");
  const std::size_t V = static_cast<std::size_t>(qpart.views);
  const std::size_t Lq = qpart.max_len, Lk = kpart.max_len;

  num::AttnSpec spec;
  spec.batch = V;
  spec.lq = Lq;
  spec.lk = Lk;
  spec.key_valid = kpart.mask;
  spec.query_active.assign(V * Lq, 0);
  std::vector<long> out_index = qpart.item_slots();
  std::size_t passthrough = 0;
  for (std::size_t v = 0; v < V; ++v) {
    const bool has_tokens = !kpart.members[v].empty();
    for (std::size_t k = 0; k < qpart.members[v].size(); ++k) {
      if (has_tokens) {
        spec.query_active[v * Lq + k] = 1;
      } else {
        out_index[qpart.members[v][k]] = -1;
        ++passthrough;
      }
    }
  }
  if (passthrough > 0) diagnostics().empty_wedge_passthrough += passthrough;
  if (stats != nullptr) {
    stats->passthrough_queries = passthrough;
    stats->interactions.assign(qpart.items(), 0);
    for (std::size_t i = 0; i < qpart.items(); ++i)
      stats->interactions[i] = kpart.members[static_cast<std::size_t>(qpart.group[i])].size();
  }

  auto qn = num::layernorm_apply(tape, block.norm, queries);
  const auto q_slots = qpart.slot_items();
  const auto k_slots = kpart.slot_items();
  auto qpad = num::gather_rows(qn, q_slots, T{0});
  auto kpad = num::gather_rows(features, k_slots, fill);
  if (Lq == 0 || Lk == 0) return queries;
  auto attn = masked_mha(tape, block.mha, qpad, kpad, kpad, q_pe, k_pe, spec, probs);
  return num::add(queries, num::gather_rows(attn, out_index, T{0}));
}

template <typename T>
num::Var<T> oracle_global_attention(num::Tape<T>& tape, const AttnBlock<T>& block, num::Var<T> queries,
                                    num::Var<T> features, std::span<const std::uint8_t> membership, num::Var<T> q_pe,
                                    num::Var<T> k_pe) {
  const std::size_t M = queries.rows(), N = features.rows();
  if (membership.size() != M * N) throw std::invalid_argument("oracle_global_attention: mask size");
  num::AttnSpec spec;
  spec.batch = 1;
  spec.lq = M;
  spec.lk = N;
  spec.pair_valid.assign(membership.begin(), membership.end());
  auto qn = num::layernorm_apply(tape, block.norm, queries);
  auto attn = masked_mha(tape, block.mha, qn, features, features, q_pe, k_pe, spec);
  return num::add(queries, attn);
}

std::vector<std::uint8_t> temporal_mask(std::span<const int> query_groups, std::size_t memory_count) {
  const std::size_t M = query_groups.size();
  const std::size_t K = M + memory_count;
  std::vector<std::uint8_t> m(M * K, 0);
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t j = 0; j < M; ++j) m[i * K + j] = query_groups[i] == query_groups[j];
    if (query_groups[i] == 0)
      for (std::size_t j = M; j < K; ++j) m[i * K + j] = 1;
  }
  return m;
}

template <typename T>
num::Var<T> temporal_attention(num::Tape<T>& tape, const AttnBlock<T>& block, num::Var<T> queries,
                               num::Var<T> q_world_pe, num::Var<T> memory_emb, num::Var<T> memory_pe,
                               std::span<const int> query_groups) {
  const std::size_t M = queries.rows();
  if (query_groups.size() != M) throw std::invalid_argument("temporal_attention: one group tag per query");
  auto qn = num::layernorm_apply(tape, block.norm, queries);
  num::Var<T> keys = qn;
  num::Var<T> key_pe = q_world_pe;
  std::size_t mem = 0;
  if (memory_emb.valid() && memory_emb.rows() > 0) {
    if (!memory_pe.valid() || memory_pe.rows() != memory_emb.rows())
      throw std::invalid_argument("temporal_attention: memory PE does not match memory embeddings");
    mem = memory_emb.rows();
    keys = num::concat_rows<T>({qn, memory_emb});
    key_pe = num::concat_rows<T>({q_world_pe, memory_pe});
  }
  num::AttnSpec spec;
  spec.batch = 1;
  spec.lq = M;
  spec.lk = M + mem;
  spec.pair_valid = temporal_mask(query_groups, mem);
  auto attn = masked_mha(tape, block.mha, qn, keys, keys, q_world_pe, key_pe, spec);
  return num::add(queries, attn);
}

#define DVPE_INSTANTIATE(T)                                                                                      \
  template struct MhaParams<T>;                                                                                  \
  template struct AttnBlock<T>;                                                                                  \
  template num::Var<T> masked_mha(num::Tape<T>&, const MhaParams<T>&, num::Var<T>, num::Var<T>, num::Var<T>,     \
                                  num::Var<T>, num::Var<T>, const num::AttnSpec&, std::vector<T>*);              \
  template num::Var<T> visibility_cross_attention(num::Tape<T>&, const AttnBlock<T>&, num::Var<T>, num::Var<T>,  \
                                                  const ViewPartition&, const ViewPartition&, num::Var<T>,       \
                                                  num::Var<T>, T, CrossAttnStats*, std::vector<T>*);             \
  template num::Var<T> oracle_global_attention(num::Tape<T>&, const AttnBlock<T>&, num::Var<T>, num::Var<T>,     \
                                               std::span<const std::uint8_t>, num::Var<T>, num::Var<T>);         \
  template num::Var<T> temporal_attention(num::Tape<T>&, const AttnBlock<T>&, num::Var<T>, num::Var<T>,          \
                                          num::Var<T>, num::Var<T>, std::span<const int>);

DVPE_INSTANTIATE(float)
DVPE_INSTANTIATE(double)

}  // namespace dvpe
