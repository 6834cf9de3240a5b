#include "dvpe/num/attention_op.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>

namespace dvpe::num {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Keys of batch b that survive key_valid, in ascending order.
std::vector<std::size_t> valid_keys(const AttnSpec& spec, std::size_t b) {
  std::vector<std::size_t> keys;
  keys.reserve(spec.lk);
  for (std::size_t j = 0; j < spec.lk; ++j)
    if (spec.key_valid.empty() || spec.key_valid[b * spec.lk + j]) keys.push_back(j);
  return keys;
}

// rows x (head slice) copied out of a [rows x C] buffer.
template <typename T>
Mat<T> head_block(const std::vector<T>& src, std::size_t row0, std::span<const std::size_t> rows, std::size_t C,
                  std::size_t off, std::size_t d) {
  Mat<T> m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < d; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
        src[(row0 + rows[r]) * C + off + c];
  return m;
}

template <typename T>
void add_head_block(std::vector<T>& dst, std::size_t row0, std::span<const std::size_t> rows, std::size_t C,
                    std::size_t off, const Mat<T>& m) {
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      dst[(row0 + rows[r]) * C + off + static_cast<std::size_t>(c)] += m(static_cast<Eigen::Index>(r), c);
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace

template <typename T>
Var<T> scaled_dot_attention(Var<T> q, Var<T> k, Var<T> v, const AttnSpec& spec, std::vector<T>* probs_out) {
  auto& tape = *q.tape;
  const std::size_t B = spec.batch, Lq = spec.lq, Lk = spec.lk, H = spec.heads;
  const std::size_t C = q.cols();
  if (H == 0 || C % H != 0) throw std::invalid_argument("attention: model dim not divisible by head count");
  if (q.rows() != B * Lq || k.rows() != B * Lk || v.rows() != B * Lk || k.cols() != C || v.cols() != C)
    throw std::invalid_argument("attention: q/k/v shapes do not match the batch layout");
  if (!spec.key_valid.empty() && spec.key_valid.size() != B * Lk)
    throw std::invalid_argument("attention: key mask size");
  if (!spec.pair_valid.empty() && spec.pair_valid.size() != B * Lq * Lk)
    throw std::invalid_argument("attention: pair mask size");
  if (!spec.query_active.empty() && spec.query_active.size() != B * Lq)
    throw std::invalid_argument("attention: query mask size");

  const std::size_t d = C / H;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(d));
  const auto& Q = q.value().data;
  const auto& K = k.value().data;
  const auto& V = v.value().data;
  const auto all_q = iota(Lq);

  auto probs = std::make_shared<std::vector<T>>(B * H * Lq * Lk, T(0));
  Tensor<T> out({B * Lq, C});
  for (std::size_t b = 0; b < B; ++b) {
    const auto keys = valid_keys(spec, b);
    const auto nk = static_cast<Eigen::Index>(keys.size());
    // allowed[i * nk + jj] for compacted key jj
    std::vector<std::uint8_t> allowed(Lq * keys.size(), 0);
    for (std::size_t i = 0; i < Lq; ++i) {
      if (!spec.active(b, i)) continue;
      bool any = false;
      for (std::size_t jj = 0; jj < keys.size(); ++jj) {
        const bool ok = spec.pair_valid.empty() || spec.pair_valid[(b * Lq + i) * Lk + keys[jj]];
        allowed[i * keys.size() + jj] = ok;
        any = any || ok;
      }
      if (!any)
        throw std::invalid_argument("attention: query row " + std::to_string(i) + " of batch " + std::to_string(b) +
                                    " has no unmasked key");
    }
    if (keys.empty()) continue;
    for (std::size_t h = 0; h < H; ++h) {
      const Mat<T> Qh = head_block(Q, b * Lq, all_q, C, h * d, d);
      const Mat<T> Kh = head_block(K, b * Lk, keys, C, h * d, d);
      const Mat<T> Vh = head_block(V, b * Lk, keys, C, h * d, d);
      Mat<T> P = (Qh * Kh.transpose()) * inv_sqrt;
      for (std::size_t i = 0; i < Lq; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const std::uint8_t* ok = allowed.data() + i * keys.size();
        T mx = -std::numeric_limits<T>::infinity();
        for (Eigen::Index jj = 0; jj < nk; ++jj)
          if (ok[jj] && P(r, jj) > mx) mx = P(r, jj);
        T z = 0;
        for (Eigen::Index jj = 0; jj < nk; ++jj) {
          P(r, jj) = ok[jj] ? std::exp(P(r, jj) - mx) : T(0);
          z += P(r, jj);
        }
        if (z > T(0)) P.row(r) *= T(1) / z;
      }
      const Mat<T> Oh = P * Vh;
      add_head_block(out.data, b * Lq, all_q, C, h * d, Oh);
      T* pb = probs->data() + (b * H + h) * Lq * Lk;
      for (std::size_t i = 0; i < Lq; ++i)
        for (std::size_t jj = 0; jj < keys.size(); ++jj)
          pb[i * Lk + keys[jj]] = P(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(jj));
    }
  }
  if (probs_out != nullptr) *probs_out = *probs;

  const int iq = q.id, ik = k.id, iv = v.id;
  return tape.record(
      std::move(out), "attention",
      [iq, ik, iv, spec, probs, d, inv_sqrt](Tape<T>& t, int self) {
        const std::size_t B = spec.batch, Lq = spec.lq, Lk = spec.lk, H = spec.heads, C = d * H;
        const auto& g = t.grad(self);
        const auto& Q = t.value(iq).data;
        const auto& K = t.value(ik).data;
        const auto& V = t.value(iv).data;
        std::vector<T>* gq = t.requires_grad(iq) ? &t.grad(iq) : nullptr;
        std::vector<T>* gk = t.requires_grad(ik) ? &t.grad(ik) : nullptr;
        std::vector<T>* gv = t.requires_grad(iv) ? &t.grad(iv) : nullptr;
        const auto all_q = iota(Lq);
        for (std::size_t b = 0; b < B; ++b) {
          const auto keys = valid_keys(spec, b);
          if (keys.empty()) continue;
          for (std::size_t h = 0; h < H; ++h) {
            const T* pb = probs->data() + (b * H + h) * Lq * Lk;
            Mat<T> P(static_cast<Eigen::Index>(Lq), static_cast<Eigen::Index>(keys.size()));
            for (std::size_t i = 0; i < Lq; ++i)
              for (std::size_t jj = 0; jj < keys.size(); ++jj)
                P(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(jj)) = pb[i * Lk + keys[jj]];
            const Mat<T> Gh = head_block(g, b * Lq, all_q, C, h * d, d);
            const Mat<T> Vh = head_block(V, b * Lk, keys, C, h * d, d);
            if (gv != nullptr) add_head_block<T>(*gv, b * Lk, keys, C, h * d, P.transpose() * Gh);
            if (gq == nullptr && gk == nullptr) continue;
            Mat<T> dS = Gh * Vh.transpose();
            for (Eigen::Index i = 0; i < dS.rows(); ++i) {
              const T dot = dS.row(i).dot(P.row(i));
              dS.row(i) = (P.row(i).array() * (dS.row(i).array() - dot) * inv_sqrt).matrix();
            }
            if (gq != nullptr) {
              const Mat<T> Kh = head_block(K, b * Lk, keys, C, h * d, d);
              add_head_block<T>(*gq, b * Lq, all_q, C, h * d, dS * Kh);
            }
            if (gk != nullptr) {
              const Mat<T> Qh = head_block(Q, b * Lq, all_q, C, h * d, d);
              add_head_block<T>(*gk, b * Lk, keys, C, h * d, dS.transpose() * Qh);
            }
          }
        }
      },
      q, k, v);
}

template Var<float> scaled_dot_attention(Var<float>, Var<float>, Var<float>, const AttnSpec&, std::vector<float>*);
template Var<double> scaled_dot_attention(Var<double>, Var<double>, Var<double>, const AttnSpec&,
                                          std::vector<double>*);

}  // namespace dvpe::num
