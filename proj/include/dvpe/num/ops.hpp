#pragma once

#include "dvpe/num/tape.hpp"

#include <cstdint>
#include <deque>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace dvpe::num {

using Rng = std::mt19937_64;

// Dense algebra. Shapes are checked; mismatches throw std::invalid_argument.
template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
/// x[n x in] * w[in x out] + b[out]; `b` may be an invalid Var.
template <typename T> Var<T> linear(Var<T> x, Var<T> w, Var<T> b);
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T s);
template <typename T> Var<T> add_scalar(Var<T> a, T s);
/// Adds v[cols] to every row of a.
template <typename T> Var<T> add_rowvec(Var<T> a, Var<T> v);
/// Per-column y = x * scale[c] + shift[c].
template <typename T> Var<T> affine_cols(Var<T> x, std::span<const T> scale, std::span<const T> shift);

template <typename T> Var<T> relu(Var<T> a);
template <typename T> Var<T> gelu(Var<T> a);
template <typename T> Var<T> sigmoid(Var<T> a);
template <typename T> Var<T> exp(Var<T> a);
template <typename T> Var<T> log(Var<T> a);
template <typename T> Var<T> sin(Var<T> a);
template <typename T> Var<T> cos(Var<T> a);
template <typename T> Var<T> square(Var<T> a);

/// Row-wise normalization over the last axis followed by gamma/beta.
template <typename T> Var<T> layernorm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5));

/// Row-wise softmax over unmasked entries. `mask` has either one entry per
/// element or one per column (shared by all rows). Masked entries get
/// exactly zero probability; a row with no unmasked entry throws.
template <typename T> Var<T> masked_softmax(Var<T> x, std::span<const std::uint8_t> mask);

template <typename T> Var<T> concat_rows(const std::vector<Var<T>>& parts);
template <typename T> Var<T> concat_cols(const std::vector<Var<T>>& parts);
/// out row r = x row idx[r], or `fill` when idx[r] < 0. Output shape
/// defaults to [idx.size() x cols].
template <typename T> Var<T> gather_rows(Var<T> x, std::span<const long> idx, T fill = T{0}, Shape out_shape = {});
template <typename T> Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t end);
template <typename T> Var<T> reshape(Var<T> x, Shape shape);
template <typename T> Var<T> sum(Var<T> x);
template <typename T> Var<T> mean(Var<T> x);

/// Rotates the first two columns of each row by the per-row angle about z.
template <typename T> Var<T> rotate_z(Var<T> points, std::span<const double> angles);

/// Interleaved [sin(w_i x_c), cos(w_i x_c)] for every coordinate c and
/// frequency w_i = max_freq^(i/(num_freqs-1)), so w_0 = 1.
template <typename T> Var<T> sincos_encode(Var<T> x, int num_freqs, double max_freq = 64.0);

/// Sum of sigmoid focal loss over all logits against {0,1} targets.
template <typename T> Var<T> sigmoid_focal_loss(Var<T> logits, const Tensor<T>& targets, T alpha, T gamma);
/// Sum of |pred - target| over entries whose weight is non-zero, scaled by weight.
template <typename T> Var<T> weighted_l1(Var<T> pred, const Tensor<T>& target, std::span<const T> col_weights);

enum class Activation { Relu, Gelu };

template <typename T>
class ParamStore {
 public:
  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Param<T>& uniform(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng);
  Param<T>& filled(const std::string& name, Shape shape, T value);
  Param<T>& adopt(const std::string& name, Tensor<T> value);

  Param<T>* find(const std::string& name);
  const Param<T>* find(const std::string& name) const;
  std::deque<Param<T>>& all() { return params_; }
  const std::deque<Param<T>>& all() const { return params_; }
  void zero_grad();
  std::size_t count() const;

 private:
  std::deque<Param<T>> params_;
};

template <typename T>
struct Mlp {
  std::vector<Param<T>*> weights;
  std::vector<Param<T>*> biases;
  Activation act = Activation::Gelu;

  static Mlp create(ParamStore<T>& store, const std::string& prefix, const std::vector<std::size_t>& dims,
                    Activation act, Rng& rng);
  std::size_t in_dim() const { return weights.front()->value.shape[0]; }
  std::size_t out_dim() const { return weights.back()->value.shape[1]; }
};

/// Hidden layers use the activation; the last layer is affine.
template <typename T> Var<T> mlp_apply(Tape<T>& tape, const Mlp<T>& mlp, Var<T> x);

template <typename T>
struct LayerNormParams {
  Param<T>* gamma = nullptr;
  Param<T>* beta = nullptr;
  static LayerNormParams create(ParamStore<T>& store, const std::string& prefix, std::size_t dim);
};

template <typename T> Var<T> layernorm_apply(Tape<T>& tape, const LayerNormParams<T>& ln, Var<T> x);

/// Row embedding lookup from a [vocab x C] parameter.
template <typename T> Var<T> embed_lookup(Tape<T>& tape, Param<T>& table, std::span<const long> ids);

// Layout helpers on plain tensors.
template <typename T> Tensor<T> gather_rows(const Tensor<T>& x, std::span<const long> idx, T fill, Shape out_shape = {});

}  // namespace dvpe::num
