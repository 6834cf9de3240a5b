#pragma once

#include "dvpe/attention.hpp"
#include "dvpe/num/attention_op.hpp"
#include "dvpe/num/gradcheck.hpp"
#include "dvpe/num/ops.hpp"
#include "dvpe/partition.hpp"

#include <functional>
#include <map>
#include <random>
#include <string>

namespace dvpe::testing {

using VarD = num::Var<double>;

inline num::Tensor<double> rand_t(num::Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  num::Tensor<double> t(std::move(s));
  for (auto& x : t.data) x = u(rng);
  return t;
}

inline num::Tensor<double> away_from_zero(num::Shape s, std::mt19937_64& rng) {
  auto t = rand_t(std::move(s), rng);
  for (auto& x : t.data) x = x < 0 ? x - 0.05 : x + 0.05;
  return t;
}

/// sum(y * w) for fixed random w.
inline VarD contract(num::Tape<double>& t, VarD y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto w = rand_t(y.shape(), rng);
  return num::sum(num::mul(y, t.constant(std::move(w))));
}

struct OpCase {
  std::function<std::vector<num::Tensor<double>>(std::mt19937_64&)> inputs;
  std::function<VarD(num::Tape<double>&, const std::vector<VarD>&)> op;
};

/// One entry per exported differentiable tensor op.
inline std::map<std::string, OpCase> op_cases() {
  using namespace num;
  using V = VarD;
  std::map<std::string, OpCase> c;
  auto unary = [](auto fn, bool kink = false, double lo = -1.0, double hi = 1.0) {
    return OpCase{[=](std::mt19937_64& r) {
                    return std::vector<Tensor<double>>{kink ? away_from_zero({3, 4}, r) : rand_t({3, 4}, r, lo, hi)};
                  },
                  [=](Tape<double>&, const std::vector<V>& x) { return fn(x[0]); }};
  };
  c["relu"] = unary([](V x) { return relu(x); }, true);
  c["gelu"] = unary([](V x) { return gelu(x); });
  c["sigmoid"] = unary([](V x) { return sigmoid(x); });
  c["exp"] = unary([](V x) { return exp(x); });
  c["log"] = unary([](V x) { return log(x); }, false, 0.5, 2.0);
  c["sin"] = unary([](V x) { return sin(x); });
  c["cos"] = unary([](V x) { return cos(x); });
  c["square"] = unary([](V x) { return square(x); });
  c["scale"] = unary([](V x) { return scale(x, 1.7); });
  c["add_scalar"] = unary([](V x) { return add_scalar(x, 0.3); });
  c["sum"] = unary([](V x) { return sum(x); });
  c["mean"] = unary([](V x) { return mean(x); });
  c["reshape"] = unary([](V x) { return reshape(x, {2, 6}); });
  c["slice_cols"] = unary([](V x) { return slice_cols(x, 1, 3); });
  c["sincos_encode"] = unary([](V x) { return sincos_encode(x, 3, 4.0); });
  c["rotate_z"] = unary([](V x) {
    static const std::vector<double> a{0.3, -1.2, 2.5};
    return rotate_z(x, std::span<const double>(a));
  });
  c["affine_cols"] = unary([](V x) {
    static const std::vector<double> s{1, 2, -1, 0.5}, b{0, 1, 2, 3};
    return affine_cols(x, std::span<const double>(s), std::span<const double>(b));
  });
  c["masked_softmax"] = unary([](V x) {
    static const std::vector<std::uint8_t> m{1, 1, 0, 1};
    return masked_softmax(x, std::span<const std::uint8_t>(m));
  });
  c["gather_rows"] = unary([](V x) {
    static const std::vector<long> idx{2, -1, 0, 2};
    return gather_rows(x, std::span<const long>(idx), 0.0);
  });
  auto binary = [](auto fn, Shape a, Shape b) {
    return OpCase{[=](std::mt19937_64& r) { return std::vector<Tensor<double>>{rand_t(a, r), rand_t(b, r)}; },
                  [=](Tape<double>&, const std::vector<V>& x) { return fn(x[0], x[1]); }};
  };
  c["matmul"] = binary([](V a, V b) { return matmul(a, b); }, {3, 4}, {4, 2});
  c["add"] = binary([](V a, V b) { return add(a, b); }, {3, 4}, {3, 4});
  c["sub"] = binary([](V a, V b) { return sub(a, b); }, {3, 4}, {3, 4});
  c["mul"] = binary([](V a, V b) { return mul(a, b); }, {3, 4}, {3, 4});
  c["add_rowvec"] = binary([](V a, V b) { return add_rowvec(a, b); }, {3, 4}, {4});
  c["concat_rows"] = binary([](V a, V b) { return concat_rows(std::vector<V>{a, b}); }, {3, 4}, {2, 4});
  c["concat_cols"] = binary([](V a, V b) { return concat_cols(std::vector<V>{a, b}); }, {3, 4}, {3, 2});
  c["linear"] = OpCase{[](std::mt19937_64& r) {
                         return std::vector<Tensor<double>>{rand_t({3, 4}, r), rand_t({4, 2}, r), rand_t({2}, r)};
                       },
                       [](Tape<double>&, const std::vector<V>& x) { return linear(x[0], x[1], x[2]); }};
  c["layernorm"] = OpCase{[](std::mt19937_64& r) {
                            return std::vector<Tensor<double>>{rand_t({3, 5}, r), rand_t({5}, r), rand_t({5}, r)};
                          },
                          [](Tape<double>&, const std::vector<V>& x) { return layernorm(x[0], x[1], x[2]); }};
  c["sigmoid_focal_loss"] =
      OpCase{[](std::mt19937_64& r) { return std::vector<Tensor<double>>{rand_t({4, 3}, r, -3, 3)}; },
             [](Tape<double>&, const std::vector<V>& x) {
               Tensor<double> tgt({4, 3}, {1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 1});
               return sigmoid_focal_loss(x[0], tgt, 0.25, 2.0);
             }};
  c["weighted_l1"] = OpCase{[](std::mt19937_64& r) { return std::vector<Tensor<double>>{away_from_zero({3, 4}, r)}; },
                            [](Tape<double>&, const std::vector<V>& x) {
                              static const std::vector<double> w{1.0, 0.5, 0.0, 2.0};
                              return weighted_l1(x[0], Tensor<double>({3, 4}), std::span<const double>(w));
                            }};
  c["scaled_dot_attention"] = OpCase{
      [](std::mt19937_64& r) {
        return std::vector<Tensor<double>>{rand_t({2 * 3, 4}, r), rand_t({2 * 5, 4}, r), rand_t({2 * 5, 4}, r)};
      },
      [](Tape<double>&, const std::vector<V>& x) {
        AttnSpec s;
        s.batch = 2;
        s.lq = 3;
        s.lk = 5;
        s.heads = 2;
        s.key_valid = {1, 1, 1, 0, 0, 1, 0, 1, 1, 1};
        s.query_active = {1, 1, 0, 1, 1, 1};
        return scaled_dot_attention(x[0], x[1], x[2], s);
      }};
  return c;
}

/// Worst relative error of an op over `instances` random inputs.
inline double op_grad_error(const OpCase& oc, std::uint64_t seed, int instances) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int inst = 0; inst < instances; ++inst) {
    const auto inputs = oc.inputs(rng);
    const auto cseed = rng();
    const auto r = num::grad_check(
        [&](num::Tape<double>& t, const std::vector<VarD>& x) {
          auto y = oc.op(t, x);
          return y.size() == 1 ? y : contract(t, y, cseed);
        },
        inputs, 1e-5, 1e-4);
    worst = std::max(worst, r.max_rel_err);
  }
  return worst;
}

/// Random cross-attention instance. Every query sits in a wedge that holds
/// at least one token.
template <typename T>
struct AttnCase {
  num::ParamStore<T> store;
  AttnBlock<T> block;
  std::vector<Vec3> qpts, kpts;
  ViewPartition qpart, kpart;
  num::Tensor<T> queries, features, q_pe, k_pe;  // item order

  AttnCase(std::uint64_t seed, int views, std::size_t nq, std::size_t nk, std::size_t dim = 16,
           std::size_t heads = 4) {
    std::mt19937_64 rng(seed);
    num::Rng prng(seed ^ 0x5bd1e995ULL);
    block = AttnBlock<T>::create(store, "blk", dim, heads, prng);
    std::uniform_real_distribution<double> u(-30, 30);
    for (std::size_t i = 0; i < nk; ++i) kpts.emplace_back(u(rng), u(rng), 0.0);
    kpart = partition_points(kpts, views, 0.0);
    while (qpts.size() < nq) {
      Vec3 p(u(rng), u(rng), 0.0);
      if (!kpart.members[static_cast<std::size_t>(group_index(p, views, 0.0))].empty()) qpts.push_back(p);
    }
    qpart = partition_points(qpts, views, 0.0);
    auto fill = [&](std::size_t n) {
      num::Tensor<T> t({n, dim});
      std::normal_distribution<double> g(0.0, 1.0);
      for (auto& x : t.data) x = static_cast<T>(g(rng));
      return t;
    };
    queries = fill(nq);
    features = fill(nk);
    q_pe = fill(nq);
    k_pe = fill(nk);
  }

  num::Var<T> divided(num::Tape<T>& tape, T pad_fill = T{0}, CrossAttnStats* stats = nullptr) const {
    auto qpe = tape.constant(gather_pad(q_pe, qpart, pad_fill));
    auto kpe = tape.constant(gather_pad(k_pe, kpart, pad_fill));
    return visibility_cross_attention(tape, block, tape.constant(queries), tape.constant(features), qpart, kpart,
                                      qpe, kpe, pad_fill, stats);
  }
  num::Var<T> oracle(num::Tape<T>& tape) const {
    const auto mask = membership_mask(qpart, kpart);
    return oracle_global_attention(tape, block, tape.constant(queries), tape.constant(features),
                                   std::span<const std::uint8_t>(mask), tape.constant(q_pe), tape.constant(k_pe));
  }
  double max_diff() const {
    num::Tape<T> t;
    const auto a = divided(t).value();
    const auto b = oracle(t).value();
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
      d = std::max(d, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
    return d;
  }
};

}  // namespace dvpe::testing
