#include "dvpe/num/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace dvpe::num {

namespace {

template <typename T>
Tape<T>& tape_of(Var<T> v) {
  if (!v.valid()) throw std::invalid_argument("op on an invalid Var");
  return *v.tape;
}

void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw std::invalid_argument(std::string(op) + ": " + what);
}

template <typename T>
Shape with_last(const Shape& s, std::size_t last) {
  Shape out = s.empty() ? Shape{1} : s;
  out.back() = last;
  return out;
}

// Elementwise unary op with derivative expressed through input and output.
template <typename T, typename F, typename D>
Var<T> unary(Var<T> a, const char* name, F f, D dfdx) {
  auto& tape = tape_of(a);
  const auto& x = a.value();
  Tensor<T> out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = f(x.data[i]);
  const int ia = a.id;
  return tape.record(
      std::move(out), name,
      [ia, dfdx](Tape<T>& t, int self) {
        const auto& xv = t.value(ia).data;
        const auto& yv = t.value(self).data;
        const auto& g = t.grad(self);
        auto& ga = t.grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(xv[i], yv[i]);
      },
      a);
}

template <typename T>
T softplus(T x) {
  return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  auto& tape = tape_of(a);
  const auto& A = a.value();
  const auto& B = b.value();
  require(B.rank() == 2, "matmul", "rhs must be 2-D");
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  require(B.shape[0] == k, "matmul", "inner dims " + shape_str(A.shape) + " vs " + shape_str(B.shape));
  Tensor<T> out(with_last<T>(A.shape, n));
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
  MatMap<T>(out.data.data(), M, N).noalias() = CMatMap<T>(A.data.data(), M, K) * CMatMap<T>(B.data.data(), K, N);
  const int ia = a.id, ib = b.id;
  return tape.record(
      std::move(out), "matmul",
      [ia, ib, M, K, N](Tape<T>& t, int self) {
        const CMatMap<T> A(t.value(ia).data.data(), M, K), B(t.value(ib).data.data(), K, N);
        const CMatMap<T> G(t.grad(self).data(), M, N);
        if (t.requires_grad(ia)) MatMap<T>(t.grad(ia).data(), M, K).noalias() += G * B.transpose();
        if (t.requires_grad(ib)) MatMap<T>(t.grad(ib).data(), K, N).noalias() += A.transpose() * G;
      },
      a, b);
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  auto& tape = tape_of(x);
  const auto& X = x.value();
  const auto& W = w.value();
  require(W.rank() == 2 && W.shape[0] == X.cols(), "linear",
          "input " + shape_str(X.shape) + " vs weight " + shape_str(W.shape));
  const std::size_t outd = W.shape[1];
  const bool has_bias = b.valid();
  if (has_bias) require(b.size() == outd, "linear", "bias size");
  Tensor<T> out(with_last<T>(X.shape, outd));
  const auto n = static_cast<Eigen::Index>(X.rows()), in = static_cast<Eigen::Index>(X.cols()),
             od = static_cast<Eigen::Index>(outd);
  MatMap<T> O(out.data.data(), n, od);
  O.noalias() = CMatMap<T>(X.data.data(), n, in) * CMatMap<T>(W.data.data(), in, od);
  if (has_bias) O.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.value().data.data(), od);
  const int ix = x.id, iw = w.id, ib = has_bias ? b.id : -1;
  auto fn = [ix, iw, ib, n, in, od](Tape<T>& t, int self) {
    const CMatMap<T> G(t.grad(self).data(), n, od);
    if (t.requires_grad(ix))
      MatMap<T>(t.grad(ix).data(), n, in).noalias() += G * CMatMap<T>(t.value(iw).data.data(), in, od).transpose();
    if (t.requires_grad(iw))
      MatMap<T>(t.grad(iw).data(), in, od).noalias() += CMatMap<T>(t.value(ix).data.data(), n, in).transpose() * G;
    if (ib >= 0 && t.requires_grad(ib))
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(t.grad(ib).data(), od) += G.colwise().sum();
  };
  if (has_bias) return tape.record(std::move(out), "linear", fn, x, w, b);
  return tape.record(std::move(out), "linear", fn, x, w);
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  auto& tape = tape_of(a);
  require(a.size() == b.size(), "add", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv[i];
  const int ia = a.id, ib = b.id;
  return tape.record(
      std::move(out), "add",
      [ia, ib](Tape<T>& t, int self) {
        const auto& g = t.grad(self);
        for (int id : {ia, ib}) {
          if (!t.requires_grad(id)) continue;
          auto& gi = t.grad(id);
          for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
        }
      },
      a, b);
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  auto& tape = tape_of(a);
  require(a.size() == b.size(), "sub", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= bv[i];
  const int ia = a.id, ib = b.id;
  return tape.record(
      std::move(out), "sub",
      [ia, ib](Tape<T>& t, int self) {
        const auto& g = t.grad(self);
        if (t.requires_grad(ia)) {
          auto& gi = t.grad(ia);
          for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
        }
        if (t.requires_grad(ib)) {
          auto& gi = t.grad(ib);
          for (std::size_t i = 0; i < g.size(); ++i) gi[i] -= g[i];
        }
      },
      a, b);
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  auto& tape = tape_of(a);
  require(a.size() == b.size(), "mul", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv[i];
  const int ia = a.id, ib = b.id;
  return tape.record(
      std::move(out), "mul",
      [ia, ib](Tape<T>& t, int self) {
        const auto& g = t.grad(self);
        const auto& av = t.value(ia).data;
        const auto& bv = t.value(ib).data;
        if (t.requires_grad(ia)) {
          auto& gi = t.grad(ia);
          for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * bv[i];
        }
        if (t.requires_grad(ib)) {
          auto& gi = t.grad(ib);
          for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * av[i];
        }
      },
      a, b);
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  return unary<T>(a, "scale", [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T s) {
  return unary<T>(a, "add_scalar", [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> add_rowvec(Var<T> a, Var<T> v) {
  auto& tape = tape_of(a);
  const std::size_t c = a.cols();
  require(v.size() == c, "add_rowvec", "vector length vs cols");
  Tensor<T> out = a.value();
  const auto& vv = v.value().data;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t j = 0; j < c; ++j) out.data[r * c + j] += vv[j];
  const int ia = a.id, iv = v.id;
  return tape.record(
      std::move(out), "add_rowvec",
      [ia, iv, c](Tape<T>& t, int self) {
        const auto& g = t.grad(self);
        if (t.requires_grad(ia)) {
          auto& gi = t.grad(ia);
          for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
        }
        if (t.requires_grad(iv)) {
          auto& gi = t.grad(iv);
          for (std::size_t i = 0; i < g.size(); ++i) gi[i % c] += g[i];
        }
      },
      a, v);
}

template <typename T>
Var<T> affine_cols(Var<T> x, std::span<const T> scale, std::span<const T> shift) {
  auto& tape = tape_of(x);
  const std::size_t c = x.cols();
  require(scale.size() == c && shift.size() == c, "affine_cols", "one scale and shift per column");
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = out.data[i] * scale[i % c] + shift[i % c];
  std::vector<T> sc(scale.begin(), scale.end());
  const int ix = x.id;
  return tape.record(
      std::move(out), "affine_cols",
      [ix, c, sc = std::move(sc)](Tape<T>& t, int self) {
        const auto& g = t.grad(self);
        auto& gx = t.grad(ix);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * sc[i % c];
      },
      x);
}

template <typename T>
Var<T> relu(Var<T> a) {
  return unary<T>(a, "relu", [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> gelu(Var<T> a) {
  constexpr T k = T(0.7978845608028654);
  constexpr T c3 = T(0.044715);
  return unary<T>(
      a, "gelu",
      [](T x) { return T(0.5) * x * (T(1) + std::tanh(k * (x + c3 * x * x * x))); },
      [](T x, T) {
        const T th = std::tanh(k * (x + c3 * x * x * x));
        return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * k * (T(1) + T(3) * c3 * x * x);
      });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  return unary<T>(
      a, "sigmoid", [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> exp(Var<T> a) {
  return unary<T>(a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(Var<T> a) {
  return unary<T>(a, "log", [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Var<T> sin(Var<T> a) {
  return unary<T>(a, "sin", [](T x) { return std::sin(x); }, [](T x, T) { return std::cos(x); });
}

template <typename T>
Var<T> cos(Var<T> a) {
  return unary<T>(a, "cos", [](T x) { return std::cos(x); }, [](T x, T) { return -std::sin(x); });
}

template <typename T>
Var<T> square(Var<T> a) {
  return unary<T>(a, "square", [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Var<T> layernorm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  auto& tape = tape_of(x);
  const auto& X = x.value();
  const std::size_t n = X.rows(), c = X.cols();
  require(gamma.size() == c && beta.size() == c, "layernorm", "affine params must match last axis");
  Tensor<T> out(X.shape);
  std::vector<T> xhat(X.size());
  std::vector<T> inv_std(n);
  const auto& gv = gamma.value().data;
  const auto& bv = beta.value().data;
  for (std::size_t r = 0; r < n; ++r) {
    const T* xr = X.row(r);
    T mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += xr[j];
    mu /= T(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= T(c);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const T h = (xr[j] - mu) * is;
      xhat[r * c + j] = h;
      out.data[r * c + j] = h * gv[j] + bv[j];
    }
  }
  const int ix = x.id, ig = gamma.id, ib = beta.id;
  return tape.record(
      std::move(out), "layernorm",
      [ix, ig, ib, n, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t, int self) {
        const auto& g = t.grad(self);
        const auto& gv = t.value(ig).data;
        if (t.requires_grad(ig)) {
          auto& gg = t.grad(ig);
          for (std::size_t i = 0; i < g.size(); ++i) gg[i % c] += g[i] * xhat[i];
        }
        if (t.requires_grad(ib)) {
          auto& gb = t.grad(ib);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % c] += g[i];
        }
        if (t.requires_grad(ix)) {
          auto& gx = t.grad(ix);
          for (std::size_t r = 0; r < n; ++r) {
            T m1 = 0, m2 = 0;
            for (std::size_t j = 0; j < c; ++j) {
              const T d = g[r * c + j] * gv[j];
              m1 += d;
              m2 += d * xhat[r * c + j];
            }
            m1 /= T(c);
            m2 /= T(c);
            for (std::size_t j = 0; j < c; ++j) {
              const T d = g[r * c + j] * gv[j];
              gx[r * c + j] += inv_std[r] * (d - m1 - xhat[r * c + j] * m2);
            }
          }
        }
      },
      x, gamma, beta);
}

template <typename T>
Var<T> masked_softmax(Var<T> x, std::span<const std::uint8_t> mask) {
  auto& tape = tape_of(x);
  const auto& X = x.value();
  const std::size_t n = X.rows(), c = X.cols();
  const bool per_col = mask.size() == c && mask.size() != X.size();
  require(per_col || mask.size() == X.size(), "masked_softmax", "mask size must equal element or column count");
  std::vector<std::uint8_t> m(X.size());
  for (std::size_t i = 0; i < X.size(); ++i) m[i] = per_col ? mask[i % c] : mask[i];
  Tensor<T> out(X.shape);
  for (std::size_t r = 0; r < n; ++r) {
    T mx = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < c; ++j)
      if (m[r * c + j]) {
        mx = std::max(mx, X.data[r * c + j]);
        any = true;
      }
    if (!any) throw std::invalid_argument("masked_softmax: row " + std::to_string(r) + " is fully masked");
    T s = 0;
    for (std::size_t j = 0; j < c; ++j)
      if (m[r * c + j]) {
        const T e = std::exp(X.data[r * c + j] - mx);
        out.data[r * c + j] = e;
        s += e;
      }
    for (std::size_t j = 0; j < c; ++j)
      if (m[r * c + j]) out.data[r * c + j] /= s;
  }
  const int ix = x.id;
  return tape.record(
      std::move(out), "masked_softmax",
      [ix, n, c, m = std::move(m)](Tape<T>& t, int self) {
        const auto& g = t.grad(self);
        const auto& p = t.value(self).data;
        auto& gx = t.grad(ix);
        for (std::size_t r = 0; r < n; ++r) {
          T dot = 0;
          for (std::size_t j = 0; j < c; ++j)
            if (m[r * c + j]) dot += g[r * c + j] * p[r * c + j];
          for (std::size_t j = 0; j < c; ++j)
            if (m[r * c + j]) gx[r * c + j] += p[r * c + j] * (g[r * c + j] - dot);
        }
      },
      x);
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_rows", "no inputs");
  auto& tape = tape_of(parts.front());
  const std::size_t c = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require(p.cols() == c, "concat_rows", "column mismatch");
    rows += p.rows();
  }
  Tensor<T> out({rows, c});
  std::vector<int> ids;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data.begin(), p.value().data.end(), out.data.begin() + static_cast<long>(off));
    ids.push_back(p.id);
    offsets.push_back(off);
    off += p.size();
  }
  return tape.record_n(
      std::move(out), "concat_rows",
      [ids, offsets](Tape<T>& t, int self) {
        const auto& g = t.grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!t.requires_grad(ids[k])) continue;
          auto& gi = t.grad(ids[k]);
          for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g[offsets[k] + i];
        }
      },
      parts);
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_cols", "no inputs");
  auto& tape = tape_of(parts.front());
  const std::size_t n = parts.front().rows();
  std::size_t c = 0;
  for (const auto& p : parts) {
    require(p.rows() == n, "concat_cols", "row mismatch");
    c += p.cols();
  }
  Tensor<T> out({n, c});
  std::vector<int> ids;
  std::vector<std::size_t> col_off, widths;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    const auto& v = p.value().data;
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < w; ++j) out.data[r * c + off + j] = v[r * w + j];
    ids.push_back(p.id);
    col_off.push_back(off);
    widths.push_back(w);
    off += w;
  }
  return tape.record_n(
      std::move(out), "concat_cols",
      [ids, col_off, widths, n, c](Tape<T>& t, int self) {
        const auto& g = t.grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!t.requires_grad(ids[k])) continue;
          auto& gi = t.grad(ids[k]);
          const std::size_t w = widths[k];
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < w; ++j) gi[r * w + j] += g[r * c + col_off[k] + j];
        }
      },
      parts);
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const long> idx, T fill, Shape out_shape) {
  const std::size_t c = x.cols();
  if (out_shape.empty()) out_shape = {idx.size(), c};
  require(numel(out_shape) == idx.size() * c, "gather_rows", "output shape does not hold the gathered rows");
  Tensor<T> out(out_shape, fill);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0) continue;
    require(static_cast<std::size_t>(idx[r]) < x.rows(), "gather_rows", "index out of range");
    std::copy_n(x.row(static_cast<std::size_t>(idx[r])), c, out.data.begin() + static_cast<long>(r * c));
  }
  return out;
}

template <typename T>
Var<T> gather_rows(Var<T> x, std::span<const long> idx, T fill, Shape out_shape) {
  auto& tape = tape_of(x);
  Tensor<T> out = gather_rows(x.value(), idx, fill, std::move(out_shape));
  const int ix = x.id;
  const std::size_t c = x.cols();
  std::vector<long> ids(idx.begin(), idx.end());
  return tape.record(
      std::move(out), "gather_rows",
      [ix, c, ids = std::move(ids)](Tape<T>& t, int self) {
        const auto& g = t.grad(self);
        auto& gx = t.grad(ix);
        for (std::size_t r = 0; r < ids.size(); ++r) {
          if (ids[r] < 0) continue;
          const std::size_t src = static_cast<std::size_t>(ids[r]) * c;
          for (std::size_t j = 0; j < c; ++j) gx[src + j] += g[r * c + j];
        }
      },
      x);
}

template <typename T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t end) {
  auto& tape = tape_of(x);
  const std::size_t n = x.rows(), c = x.cols();
  require(begin <= end && end <= c, "slice_cols", "range out of bounds");
  const std::size_t w = end - begin;
  Tensor<T> out({n, w});
  const auto& v = x.value().data;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < w; ++j) out.data[r * w + j] = v[r * c + begin + j];
  const int ix = x.id;
  return tape.record(
      std::move(out), "slice_cols",
      [ix, n, c, w, begin](Tape<T>& t, int self) {
        const auto& g = t.grad(self);
        auto& gx = t.grad(ix);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < w; ++j) gx[r * c + begin + j] += g[r * w + j];
      },
      x);
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  auto& tape = tape_of(x);
  require(numel(shape) == x.size(), "reshape", shape_str(x.shape()) + " -> " + shape_str(shape));
  Tensor<T> out(std::move(shape), x.value().data);
  const int ix = x.id;
  return tape.record(
      std::move(out), "reshape",
      [ix](Tape<T>& t, int self) {
        const auto& g = t.grad(self);
        auto& gx = t.grad(ix);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      },
      x);
}

template <typename T>
Var<T> sum(Var<T> x) {
  auto& tape = tape_of(x);
  T s = 0;
  for (T v : x.value().data) s += v;
  const int ix = x.id;
  return tape.record(
      Tensor<T>({1}, {s}), "sum",
      [ix](Tape<T>& t, int self) {
        const T g = t.grad(self)[0];
        auto& gx = t.grad(ix);
        for (auto& v : gx) v += g;
      },
      x);
}

template <typename T>
Var<T> mean(Var<T> x) {
  require(x.size() > 0, "mean", "empty input");
  return scale(sum(x), T(1) / T(x.size()));
}

template <typename T>
Var<T> rotate_z(Var<T> points, std::span<const double> angles) {
  auto& tape = tape_of(points);
  const std::size_t n = points.rows(), c = points.cols();
  require(c >= 2, "rotate_z", "need at least two columns");
  require(angles.size() == n, "rotate_z", "one angle per row");
  std::vector<T> cs(n), sn(n);
  Tensor<T> out = points.value();
  for (std::size_t r = 0; r < n; ++r) {
    cs[r] = static_cast<T>(std::cos(angles[r]));
    sn[r] = static_cast<T>(std::sin(angles[r]));
    const T x = out.data[r * c], y = out.data[r * c + 1];
    out.data[r * c] = cs[r] * x - sn[r] * y;
    out.data[r * c + 1] = sn[r] * x + cs[r] * y;
  }
  const int ip = points.id;
  return tape.record(
      std::move(out), "rotate_z",
      [ip, n, c, cs = std::move(cs), sn = std::move(sn)](Tape<T>& t, int self) {
        const auto& g = t.grad(self);
        auto& gp = t.grad(ip);
        for (std::size_t r = 0; r < n; ++r) {
          const T gx = g[r * c], gy = g[r * c + 1];
          gp[r * c] += cs[r] * gx + sn[r] * gy;
          gp[r * c + 1] += -sn[r] * gx + cs[r] * gy;
          for (std::size_t j = 2; j < c; ++j) gp[r * c + j] += g[r * c + j];
        }
      },
      points);
}

template <typename T>
Var<T> sincos_encode(Var<T> x, int num_freqs, double max_freq) {
  auto& tape = tape_of(x);
  require(num_freqs >= 1, "sincos_encode", "num_freqs must be >= 1");
  const std::size_t n = x.rows(), k = x.cols(), nf = static_cast<std::size_t>(num_freqs);
  std::vector<T> freqs(nf);
  for (std::size_t i = 0; i < nf; ++i)
    freqs[i] = nf == 1 ? T(1) : static_cast<T>(std::pow(max_freq, static_cast<double>(i) / static_cast<double>(nf - 1)));
  const std::size_t w = 2 * k * nf;
  Tensor<T> out({n, w});
  const auto& xv = x.value().data;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t i = 0; i < nf; ++i) {
        const T a = freqs[i] * xv[r * k + c];
        out.data[r * w + 2 * (c * nf + i)] = std::sin(a);
        out.data[r * w + 2 * (c * nf + i) + 1] = std::cos(a);
      }
  const int ix = x.id;
  return tape.record(
      std::move(out), "sincos_encode",
      [ix, n, k, nf, w, freqs = std::move(freqs)](Tape<T>& t, int self) {
        const auto& g = t.grad(self);
        const auto& y = t.value(self).data;
        auto& gx = t.grad(ix);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < k; ++c) {
            T acc = 0;
            for (std::size_t i = 0; i < nf; ++i) {
              const std::size_t o = r * w + 2 * (c * nf + i);
              acc += freqs[i] * (y[o + 1] * g[o] - y[o] * g[o + 1]);
            }
            gx[r * k + c] += acc;
          }
      },
      x);
}

template <typename T>
Var<T> sigmoid_focal_loss(Var<T> logits, const Tensor<T>& targets, T alpha, T gamma) {
  auto& tape = tape_of(logits);
  require(targets.size() == logits.size(), "sigmoid_focal_loss", "target shape mismatch");
  const auto& xv = logits.value().data;
  T total = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const T x = xv[i];
    const T p = T(1) / (T(1) + std::exp(-x));
    if (targets.data[i] > T(0.5)) {
      total += alpha * std::pow(T(1) - p, gamma) * softplus(-x);
    } else {
      total += (T(1) - alpha) * std::pow(p, gamma) * softplus(x);
    }
  }
  const int il = logits.id;
  return tape.record(
      Tensor<T>({1}, {total}), "sigmoid_focal_loss",
      [il, targets, alpha, gamma](Tape<T>& t, int self) {
        const T g = t.grad(self)[0];
        const auto& xv = t.value(il).data;
        auto& gl = t.grad(il);
        for (std::size_t i = 0; i < xv.size(); ++i) {
          const T x = xv[i];
          const T p = T(1) / (T(1) + std::exp(-x));
          T d;
          if (targets.data[i] > T(0.5)) {
            // d/dx of -a (1-p)^g log p
            d = alpha * (gamma * std::pow(T(1) - p, gamma) * p * (-softplus(-x)) - std::pow(T(1) - p, gamma + T(1)));
          } else {
            d = -(T(1) - alpha) * (gamma * std::pow(p, gamma) * (T(1) - p) * (-softplus(x)) - std::pow(p, gamma + T(1)));
          }
          gl[i] += g * d;
        }
      },
      logits);
}

template <typename T>
Var<T> weighted_l1(Var<T> pred, const Tensor<T>& target, std::span<const T> col_weights) {
  auto& tape = tape_of(pred);
  require(target.size() == pred.size(), "weighted_l1", "target shape mismatch");
  const std::size_t c = pred.cols();
  require(col_weights.size() == c, "weighted_l1", "one weight per column");
  std::vector<T> w(col_weights.begin(), col_weights.end());
  const auto& pv = pred.value().data;
  T total = 0;
  for (std::size_t i = 0; i < pv.size(); ++i) total += w[i % c] * std::abs(pv[i] - target.data[i]);
  const int ip = pred.id;
  return tape.record(
      Tensor<T>({1}, {total}), "weighted_l1",
      [ip, c, target, w = std::move(w)](Tape<T>& t, int self) {
        const T g = t.grad(self)[0];
        const auto& pv = t.value(ip).data;
        auto& gp = t.grad(ip);
        for (std::size_t i = 0; i < pv.size(); ++i) {
          const T d = pv[i] - target.data[i];
          if (d > T(0)) gp[i] += g * w[i % c];
          else if (d < T(0)) gp[i] -= g * w[i % c];
        }
      },
      pred);
}

template <typename T>
Param<T>& ParamStore<T>::uniform(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng) {
  if (find(name) != nullptr) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> v(std::move(shape));
  for (auto& x : v.data) x = static_cast<T>(dist(rng));
  params_.emplace_back(name, std::move(v));
  return params_.back();
}

template <typename T>
Param<T>& ParamStore<T>::filled(const std::string& name, Shape shape, T value) {
  return adopt(name, Tensor<T>(std::move(shape), value));
}

template <typename T>
Param<T>& ParamStore<T>::adopt(const std::string& name, Tensor<T> value) {
  if (find(name) != nullptr) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  params_.emplace_back(name, std::move(value));
  return params_.back();
}

template <typename T>
Param<T>* ParamStore<T>::find(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

template <typename T>
const Param<T>* ParamStore<T>::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
std::size_t ParamStore<T>::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
Mlp<T> Mlp<T>::create(ParamStore<T>& store, const std::string& prefix, const std::vector<std::size_t>& dims,
                      Activation act, Rng& rng) {
  if (dims.size() < 2) throw std::invalid_argument("Mlp: need at least input and output dims");
  Mlp m;
  m.act = act;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::string base = prefix + ".l" + std::to_string(l);
    m.weights.push_back(&store.uniform(base + ".w", {dims[l], dims[l + 1]}, dims[l], rng));
    m.biases.push_back(&store.uniform(base + ".b", {dims[l + 1]}, dims[l], rng));
  }
  return m;
}

template <typename T>
Var<T> mlp_apply(Tape<T>& tape, const Mlp<T>& mlp, Var<T> x) {
  for (std::size_t l = 0; l < mlp.weights.size(); ++l) {
    x = linear(x, tape.param(*mlp.weights[l]), tape.param(*mlp.biases[l]));
    if (l + 1 < mlp.weights.size()) x = mlp.act == Activation::Relu ? relu(x) : gelu(x);
  }
  return x;
}

template <typename T>
LayerNormParams<T> LayerNormParams<T>::create(ParamStore<T>& store, const std::string& prefix, std::size_t dim) {
  LayerNormParams ln;
  ln.gamma = &store.filled(prefix + ".gamma", {dim}, T(1));
  ln.beta = &store.filled(prefix + ".beta", {dim}, T(0));
  return ln;
}

template <typename T>
Var<T> layernorm_apply(Tape<T>& tape, const LayerNormParams<T>& ln, Var<T> x) {
  return layernorm(x, tape.param(*ln.gamma), tape.param(*ln.beta));
}

template <typename T>
Var<T> embed_lookup(Tape<T>& tape, Param<T>& table, std::span<const long> ids) {
  for (long id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= table.value.rows())
      throw std::invalid_argument("embed_lookup: id out of range");
  return gather_rows(tape.param(table), ids);
}

#define DVPE_INSTANTIATE(T)                                                                        \
  template Var<T> matmul(Var<T>, Var<T>);                                                          \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                                  \
  template Var<T> add(Var<T>, Var<T>);                                                             \
  template Var<T> sub(Var<T>, Var<T>);                                                             \
  template Var<T> mul(Var<T>, Var<T>);                                                             \
  template Var<T> scale(Var<T>, T);                                                                \
  template Var<T> add_scalar(Var<T>, T);                                                           \
  template Var<T> add_rowvec(Var<T>, Var<T>);                                                      \
  template Var<T> affine_cols(Var<T>, std::span<const T>, std::span<const T>);                     \
  template Var<T> relu(Var<T>);                                                                    \
  template Var<T> gelu(Var<T>);                                                                    \
  template Var<T> sigmoid(Var<T>);                                                                 \
  template Var<T> exp(Var<T>);                                                                     \
  template Var<T> log(Var<T>);                                                                     \
  template Var<T> sin(Var<T>);                                                                     \
  template Var<T> cos(Var<T>);                                                                     \
  template Var<T> square(Var<T>);                                                                  \
  template Var<T> layernorm(Var<T>, Var<T>, Var<T>, T);                                            \
  template Var<T> masked_softmax(Var<T>, std::span<const std::uint8_t>);                           \
  template Var<T> concat_rows(const std::vector<Var<T>>&);                                         \
  template Var<T> concat_cols(const std::vector<Var<T>>&);                                         \
  template Var<T> gather_rows(Var<T>, std::span<const long>, T, Shape);                            \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const long>, T, Shape);               \
  template Var<T> slice_cols(Var<T>, std::size_t, std::size_t);                                    \
  template Var<T> reshape(Var<T>, Shape);                                                          \
  template Var<T> sum(Var<T>);                                                                     \
  template Var<T> mean(Var<T>);                                                                    \
  template Var<T> rotate_z(Var<T>, std::span<const double>);                                       \
  template Var<T> sincos_encode(Var<T>, int, double);                                              \
  template Var<T> sigmoid_focal_loss(Var<T>, const Tensor<T>&, T, T);                              \
  template Var<T> weighted_l1(Var<T>, const Tensor<T>&, std::span<const T>);                       \
  template class ParamStore<T>;                                                                    \
  template struct Mlp<T>;                                                                          \
  template Var<T> mlp_apply(Tape<T>&, const Mlp<T>&, Var<T>);                                      \
  template struct LayerNormParams<T>;                                                              \
  template Var<T> layernorm_apply(Tape<T>&, const LayerNormParams<T>&, Var<T>);                    \
  template Var<T> embed_lookup(Tape<T>&, Param<T>&, std::span<const long>);

DVPE_INSTANTIATE(float)
DVPE_INSTANTIATE(double)

}  // namespace dvpe::num
