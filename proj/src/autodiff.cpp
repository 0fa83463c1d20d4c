#include "maa/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

namespace maa::ad {

namespace {

template <typename T>
void require_same_tape(Var<T> a, Var<T> b, const char* op) {
  if (a.tape != b.tape || a.tape == nullptr) {
    throw std::invalid_argument(std::string(op) + ": operands belong to different tapes");
  }
}

template <typename T>
void require_shape(bool ok, const char* op, Var<T> a, Var<T> b) {
  if (!ok) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) +
                                "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                                "x" + std::to_string(b.cols()) + ")");
  }
}

// Per-axis bilinear taps for half-pixel-centred resampling.
struct AxisTaps {
  std::vector<int> lo, hi;
  std::vector<double> w_hi;
};

AxisTaps bilinear_taps(int in, int out) {
  AxisTaps taps;
  taps.lo.resize(out);
  taps.hi.resize(out);
  taps.w_hi.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    taps.lo[o] = i0;
    taps.hi[o] = i1;
    taps.w_hi[o] = src - i0;
  }
  return taps;
}

}  // namespace

int conv_out_size(int in, int kernel, int stride, int padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

// --- Tape ------------------------------------------------------------------

template <typename T>
Var<T> Tape<T>::constant(Matrix<T> value) {
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var<T> Tape<T>::variable(Matrix<T> value) {
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  n.requires_grad = true;
  return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var<T> Tape<T>::record(Matrix<T> value, std::initializer_list<int> inputs, Backward backward) {
  return record(std::move(value), std::span<const int>(inputs.begin(), inputs.size()),
                std::move(backward));
}

template <typename T>
Var<T> Tape<T>::record(Matrix<T> value, std::span<const int> inputs, Backward backward) {
  bool needs = false;
  for (int id : inputs) needs = needs || nodes_[id].requires_grad;
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(backward);
  return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Matrix<T> Tape<T>::grad(Var<T> v) const {
  const Node& n = nodes_[v.id];
  if (n.has_grad) return n.grad;
  return Matrix<T>::Zero(n.value.rows(), n.value.cols());
}

template <typename T>
Matrix<T>& Tape<T>::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Matrix<T>::Zero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> out) {
  if (out.tape != this) throw std::invalid_argument("Tape::backward: foreign node");
  const Node& root = nodes_[out.id];
  if (root.value.rows() != 1 || root.value.cols() != 1) {
    throw std::invalid_argument("Tape::backward: objective is not a scalar (" +
                                std::to_string(root.value.rows()) + "x" +
                                std::to_string(root.value.cols()) + ")");
  }
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  grad_buffer(out.id)(0, 0) = T(1);
  for (int id = out.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.has_grad && n.backward) n.backward(*this, id);
  }
}

// --- dense algebra ---------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  require_same_tape(a, b, "matmul");
  require_shape(a.cols() == b.rows(), "matmul", a, b);
  Matrix<T> out;
  out.noalias() = a.value() * b.value();
  const int ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad_buffer(self);
    if (t.requires_grad(ia)) t.grad_buffer(ia).noalias() += g * t.value(ib).transpose();
    if (t.requires_grad(ib)) t.grad_buffer(ib).noalias() += t.value(ia).transpose() * g;
  });
}

template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  require_same_tape(a, b, "matmul_nt");
  require_shape(a.cols() == b.cols(), "matmul_nt", a, b);
  Matrix<T> out;
  out.noalias() = a.value() * b.value().transpose();
  const int ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad_buffer(self);
    if (t.requires_grad(ia)) t.grad_buffer(ia).noalias() += g * t.value(ib);
    if (t.requires_grad(ib)) t.grad_buffer(ib).noalias() += g.transpose() * t.value(ia);
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_tape(a, b, "add");
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add", a, b);
  Matrix<T> out = a.value() + b.value();
  const int ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad_buffer(self);
    if (t.requires_grad(ia)) t.grad_buffer(ia) += g;
    if (t.requires_grad(ib)) t.grad_buffer(ib) += g;
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_tape(a, b, "sub");
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "sub", a, b);
  Matrix<T> out = a.value() - b.value();
  const int ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad_buffer(self);
    if (t.requires_grad(ia)) t.grad_buffer(ia) += g;
    if (t.requires_grad(ib)) t.grad_buffer(ib) -= g;
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_tape(a, b, "mul");
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "mul", a, b);
  Matrix<T> out = a.value().cwiseProduct(b.value());
  const int ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad_buffer(self);
    if (t.requires_grad(ia)) t.grad_buffer(ia) += g.cwiseProduct(t.value(ib));
    if (t.requires_grad(ib)) t.grad_buffer(ib) += g.cwiseProduct(t.value(ia));
  });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  Matrix<T> out = a.value() * s;
  const int ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia, s](Tape<T>& t, int self) {
    t.grad_buffer(ia) += t.grad_buffer(self) * s;
  });
}

template <typename T>
Var<T> add_row(Var<T> a, Var<T> row) {
  require_same_tape(a, row, "add_row");
  require_shape(row.rows() == 1 && row.cols() == a.cols(), "add_row", a, row);
  Matrix<T> out = a.value().rowwise() + row.value().row(0);
  const int ia = a.id, ir = row.id;
  return a.tape->record(std::move(out), {ia, ir}, [ia, ir](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad_buffer(self);
    if (t.requires_grad(ia)) t.grad_buffer(ia) += g;
    if (t.requires_grad(ir)) t.grad_buffer(ir) += g.colwise().sum();
  });
}

template <typename T>
Var<T> add_col(Var<T> a, Var<T> col) {
  require_same_tape(a, col, "add_col");
  require_shape(col.cols() == 1 && col.rows() == a.rows(), "add_col", a, col);
  Matrix<T> out = a.value().colwise() + col.value().col(0);
  const int ia = a.id, ic = col.id;
  return a.tape->record(std::move(out), {ia, ic}, [ia, ic](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad_buffer(self);
    if (t.requires_grad(ia)) t.grad_buffer(ia) += g;
    if (t.requires_grad(ic)) t.grad_buffer(ic) += g.rowwise().sum();
  });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  Matrix<T> out = a.value().transpose();
  const int ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia](Tape<T>& t, int self) {
    t.grad_buffer(ia) += t.grad_buffer(self).transpose();
  });
}

template <typename T>
Var<T> flatten(Var<T> a) {
  const Eigen::Index r = a.rows(), c = a.cols();
  Matrix<T> out = Eigen::Map<const Matrix<T>>(a.value().data(), 1, r * c);
  const int ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia, r, c](Tape<T>& t, int self) {
    t.grad_buffer(ia) += Eigen::Map<const Matrix<T>>(t.grad_buffer(self).data(), r, c);
  });
}

template <typename T>
Var<T> mean_rows(Var<T> a) {
  const Eigen::Index r = a.rows();
  Matrix<T> out = a.value().colwise().mean();
  const int ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia, r](Tape<T>& t, int self) {
    Matrix<T> g = t.grad_buffer(self) / static_cast<T>(r);
    t.grad_buffer(ia).rowwise() += g.row(0);
  });
}

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> starts;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    starts.push_back(rows);
    rows += p.rows();
    ids.push_back(p.id);
  }
  Matrix<T> out(rows, cols);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    out.middleRows(starts[i], parts[i].rows()) = parts[i].value();
  }
  Tape<T>* tape = parts[0].tape;
  return tape->record(std::move(out), std::span<const int>(ids),
                      [ids, starts](Tape<T>& t, int self) {
                        const Matrix<T>& g = t.grad_buffer(self);
                        for (std::size_t i = 0; i < ids.size(); ++i) {
                          if (!t.requires_grad(ids[i])) continue;
                          Matrix<T>& gi = t.grad_buffer(ids[i]);
                          gi += g.middleRows(starts[i], gi.rows());
                        }
                      });
}

template <typename T>
Var<T> sum_scalars(std::span<const Var<T>> parts) {
  if (parts.empty()) throw std::invalid_argument("sum_scalars: no parts");
  T total = T(0);
  std::vector<int> ids;
  for (const auto& p : parts) {
    if (p.rows() != 1 || p.cols() != 1) throw std::invalid_argument("sum_scalars: non-scalar part");
    total += p.scalar();
    ids.push_back(p.id);
  }
  Matrix<T> out(1, 1);
  out(0, 0) = total;
  return parts[0].tape->record(std::move(out), std::span<const int>(ids),
                               [ids](Tape<T>& t, int self) {
                                 const T g = t.grad_buffer(self)(0, 0);
                                 for (int id : ids) {
                                   if (t.requires_grad(id)) t.grad_buffer(id)(0, 0) += g;
                                 }
                               });
}

// --- nonlinearities ----------------------------------------------------------

template <typename T>
Var<T> relu(Var<T> a) {
  Matrix<T> out = a.value().cwiseMax(T(0));
  const int ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia](Tape<T>& t, int self) {
    const Matrix<T>& x = t.value(ia);
    t.grad_buffer(ia).array() += (x.array() > T(0)).select(t.grad_buffer(self).array(), T(0));
  });
}

template <typename T>
Var<T> gelu(Var<T> a) {
  const T c = T(0.7978845608028654);  // sqrt(2/pi)
  const T k = T(0.044715);
  const auto& x = a.value().array();
  Matrix<T> out = (T(0.5) * x * (T(1) + (c * (x + k * x.cube())).tanh())).matrix();
  const int ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia, c, k](Tape<T>& t, int self) {
    const auto& x = t.value(ia).array();
    const auto u = (c * (x + k * x.cube())).tanh().eval();
    const auto du = (c * (T(1) + T(3) * k * x.square())).eval();
    const auto d = (T(0.5) * (T(1) + u) + T(0.5) * x * (T(1) - u.square()) * du).eval();
    t.grad_buffer(ia).array() += t.grad_buffer(self).array() * d;
  });
}

template <typename T>
Var<T> layer_norm_rows(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  require_same_tape(x, gamma, "layer_norm_rows");
  require_same_tape(x, beta, "layer_norm_rows");
  const Eigen::Index n = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != n || beta.rows() != 1 || beta.cols() != n) {
    throw std::invalid_argument("layer_norm_rows: affine shape mismatch");
  }
  const Matrix<T>& xv = x.value();
  Matrix<T> xhat(xv.rows(), n);
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const T mu = xv.row(r).mean();
    const T var = (xv.row(r).array() - mu).square().mean();
    inv_std(r) = T(1) / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv_std(r);
  }
  Matrix<T> out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
                  beta.value().row(0).array();
  const int ix = x.id, ig = gamma.id, ib = beta.id;
  return x.tape->record(
      std::move(out), {ix, ig, ib},
      [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t, int self) {
        const Matrix<T>& g = t.grad_buffer(self);
        if (t.requires_grad(ig)) t.grad_buffer(ig) += g.cwiseProduct(xhat).colwise().sum();
        if (t.requires_grad(ib)) t.grad_buffer(ib) += g.colwise().sum();
        if (t.requires_grad(ix)) {
          Matrix<T> dxhat = g.array().rowwise() * t.value(ig).row(0).array();
          Matrix<T>& gx = t.grad_buffer(ix);
          for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
            const T m1 = dxhat.row(r).mean();
            const T m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
            gx.row(r).array() +=
                inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
          }
        }
      });
}

template <typename T>
Var<T> normalize_rows(Var<T> x, T eps) {
  const Matrix<T>& xv = x.value();
  Eigen::Matrix<T, Eigen::Dynamic, 1> norms = xv.rowwise().norm().cwiseMax(eps);
  Matrix<T> out = xv.array().colwise() / norms.array();
  const int ix = x.id;
  return x.tape->record(std::move(out), {ix}, [ix, norms = std::move(norms)](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad_buffer(self);
    const Matrix<T>& y = t.value(self);
    Eigen::Matrix<T, Eigen::Dynamic, 1> dots = g.cwiseProduct(y).rowwise().sum();
    Matrix<T> dx = g - (y.array().colwise() * dots.array()).matrix();
    t.grad_buffer(ix).array() += dx.array().colwise() / norms.array();
  });
}

template <typename T>
Var<T> multi_head_attention(Var<T> qkv, int heads) {
  const Eigen::Index n = qkv.rows();
  if (qkv.cols() % (3 * heads) != 0) {
    throw std::invalid_argument("multi_head_attention: width not divisible by 3*heads");
  }
  const Eigen::Index width = qkv.cols() / 3;
  const Eigen::Index dh = width / heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  const Matrix<T>& x = qkv.value();
  Matrix<T> out(n, width);
  std::vector<Matrix<T>> probs(heads);
  for (int h = 0; h < heads; ++h) {
    const auto q = x.middleCols(h * dh, dh);
    const auto k = x.middleCols(width + h * dh, dh);
    const auto v = x.middleCols(2 * width + h * dh, dh);
    Matrix<T> s;
    s.noalias() = q * k.transpose();
    s *= inv_sqrt;
    for (Eigen::Index r = 0; r < n; ++r) {
      const T mx = s.row(r).maxCoeff();
      s.row(r) = (s.row(r).array() - mx).exp();
      s.row(r) /= s.row(r).sum();
    }
    out.middleCols(h * dh, dh).noalias() = s * v;
    probs[h] = std::move(s);
  }
  const int iq = qkv.id;
  return qkv.tape->record(
      std::move(out), {iq},
      [iq, heads, width, dh, inv_sqrt, probs = std::move(probs)](Tape<T>& t, int self) {
        const Matrix<T>& g = t.grad_buffer(self);
        const Matrix<T>& x = t.value(iq);
        Matrix<T>& gx = t.grad_buffer(iq);
        for (int h = 0; h < heads; ++h) {
          const Matrix<T>& p = probs[h];
          const auto q = x.middleCols(h * dh, dh);
          const auto k = x.middleCols(width + h * dh, dh);
          const auto v = x.middleCols(2 * width + h * dh, dh);
          const auto go = g.middleCols(h * dh, dh);
          gx.middleCols(2 * width + h * dh, dh).noalias() += p.transpose() * go;
          Matrix<T> dp;
          dp.noalias() = go * v.transpose();
          Eigen::Matrix<T, Eigen::Dynamic, 1> rs = dp.cwiseProduct(p).rowwise().sum();
          Matrix<T> ds = (p.array() * (dp.array().colwise() - rs.array())).matrix() * inv_sqrt;
          gx.middleCols(h * dh, dh).noalias() += ds * k;
          gx.middleCols(width + h * dh, dh).noalias() += ds.transpose() * q;
        }
      });
}

template <typename T>
Var<T> embedding(Var<T> table, std::span<const int> ids) {
  const Matrix<T>& tv = table.value();
  Matrix<T> out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                              std::to_string(tv.rows()));
    }
    out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  const int it = table.id;
  std::vector<int> idv(ids.begin(), ids.end());
  return table.tape->record(std::move(out), {it}, [it, idv = std::move(idv)](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad_buffer(self);
    Matrix<T>& gt = t.grad_buffer(it);
    for (std::size_t i = 0; i < idv.size(); ++i) gt.row(idv[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

// --- similarity and losses -------------------------------------------------

template <typename T>
Var<T> cosine(Var<T> a, Var<T> b) {
  require_same_tape(a, b, "cosine");
  if (a.value().size() != b.value().size()) {
    throw std::invalid_argument("cosine: length mismatch (" + std::to_string(a.value().size()) +
                                " vs " + std::to_string(b.value().size()) + ")");
  }
  const auto av = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(a.value().data(), a.value().size());
  const auto bv = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(b.value().data(), b.value().size());
  // accumulate in double so the float path stays within the oracle tolerance
  const auto ad = av.template cast<double>();
  const auto bd = bv.template cast<double>();
  const double na = ad.norm(), nb = bd.norm();
  Matrix<T> out(1, 1);
  const bool degenerate = na < 1e-12 || nb < 1e-12;
  if (degenerate) {
    ++a.tape->degenerate_cosines;
    out(0, 0) = T(0);
    return a.tape->constant(std::move(out));
  }
  const double c = ad.dot(bd) / (na * nb);
  out(0, 0) = static_cast<T>(c);
  const int ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {ia, ib}, [ia, ib, na, nb, c](Tape<T>& t, int self) {
    const T g = t.grad_buffer(self)(0, 0);
    const Matrix<T>& x = t.value(ia);
    const Matrix<T>& y = t.value(ib);
    if (t.requires_grad(ia)) {
      t.grad_buffer(ia) +=
          g * (y / static_cast<T>(na * nb) - x * static_cast<T>(c / (na * na)));
    }
    if (t.requires_grad(ib)) {
      t.grad_buffer(ib) +=
          g * (x / static_cast<T>(na * nb) - y * static_cast<T>(c / (nb * nb)));
    }
  });
}

template <typename T>
Var<T> symmetric_cross_entropy(Var<T> logits) {
  const Matrix<T>& z = logits.value();
  if (z.rows() != z.cols()) throw std::invalid_argument("symmetric_cross_entropy: logits not square");
  const Eigen::Index n = z.rows();
  Matrix<T> p_row(n, n), p_col(n, n);
  double loss_rows = 0.0, loss_cols = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mx = z.row(i).maxCoeff();
    p_row.row(i) = (z.row(i).array() - mx).exp();
    const T s = p_row.row(i).sum();
    p_row.row(i) /= s;
    loss_rows += -(static_cast<double>(z(i, i) - mx) - std::log(static_cast<double>(s)));
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    const T mx = z.col(j).maxCoeff();
    p_col.col(j) = (z.col(j).array() - mx).exp();
    const T s = p_col.col(j).sum();
    p_col.col(j) /= s;
    loss_cols += -(static_cast<double>(z(j, j) - mx) - std::log(static_cast<double>(s)));
  }
  Matrix<T> out(1, 1);
  out(0, 0) = static_cast<T>(0.5 * (loss_rows + loss_cols) / static_cast<double>(n));
  const int iz = logits.id;
  return logits.tape->record(
      std::move(out), {iz},
      [iz, n, p_row = std::move(p_row), p_col = std::move(p_col)](Tape<T>& t, int self) {
        const T g = t.grad_buffer(self)(0, 0) * T(0.5) / static_cast<T>(n);
        Matrix<T> d = p_row + p_col;
        d.diagonal().array() -= T(2);
        t.grad_buffer(iz) += g * d;
      });
}

// --- image ops ---------------------------------------------------------------

template <typename T>
Var<T> resize_bilinear(Var<T> x, Extent in, int out_h, int out_w) {
  if (x.rows() != in.channels || x.cols() != static_cast<Eigen::Index>(in.height) * in.width) {
    throw std::invalid_argument("resize_bilinear: extent does not match node shape");
  }
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize_bilinear: empty output");
  auto ty = std::make_shared<AxisTaps>(bilinear_taps(in.height, out_h));
  auto tx = std::make_shared<AxisTaps>(bilinear_taps(in.width, out_w));
  const Matrix<T>& v = x.value();
  Matrix<T> out(in.channels, static_cast<Eigen::Index>(out_h) * out_w);
  for (int c = 0; c < in.channels; ++c) {
    for (int oy = 0; oy < out_h; ++oy) {
      const T wy = static_cast<T>(ty->w_hi[oy]);
      const int r0 = ty->lo[oy] * in.width, r1 = ty->hi[oy] * in.width;
      for (int ox = 0; ox < out_w; ++ox) {
        const T wx = static_cast<T>(tx->w_hi[ox]);
        const int c0 = tx->lo[ox], c1 = tx->hi[ox];
        const T top = v(c, r0 + c0) + wx * (v(c, r0 + c1) - v(c, r0 + c0));
        const T bot = v(c, r1 + c0) + wx * (v(c, r1 + c1) - v(c, r1 + c0));
        out(c, oy * out_w + ox) = top + wy * (bot - top);
      }
    }
  }
  const int ix = x.id;
  return x.tape->record(std::move(out), {ix}, [ix, in, out_h, out_w, ty, tx](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad_buffer(self);
    Matrix<T>& gx = t.grad_buffer(ix);
    for (int c = 0; c < in.channels; ++c) {
      for (int oy = 0; oy < out_h; ++oy) {
        const T wy = static_cast<T>(ty->w_hi[oy]);
        const int r0 = ty->lo[oy] * in.width, r1 = ty->hi[oy] * in.width;
        for (int ox = 0; ox < out_w; ++ox) {
          const T wx = static_cast<T>(tx->w_hi[ox]);
          const int c0 = tx->lo[ox], c1 = tx->hi[ox];
          const T go = g(c, oy * out_w + ox);
          gx(c, r0 + c0) += go * (T(1) - wy) * (T(1) - wx);
          gx(c, r0 + c1) += go * (T(1) - wy) * wx;
          gx(c, r1 + c0) += go * wy * (T(1) - wx);
          gx(c, r1 + c1) += go * wy * wx;
        }
      }
    }
  });
}

template <typename T>
Var<T> crop(Var<T> x, Extent in, int y0, int x0, int h, int w) {
  if (y0 < 0 || x0 < 0 || y0 + h > in.height || x0 + w > in.width || h < 1 || w < 1) {
    throw std::out_of_range("crop: window (" + std::to_string(x0) + "," + std::to_string(y0) +
                            "," + std::to_string(w) + "x" + std::to_string(h) +
                            ") outside image " + std::to_string(in.width) + "x" +
                            std::to_string(in.height));
  }
  const Matrix<T>& v = x.value();
  Matrix<T> out(in.channels, static_cast<Eigen::Index>(h) * w);
  for (int c = 0; c < in.channels; ++c) {
    for (int r = 0; r < h; ++r) {
      out.row(c).segment(static_cast<Eigen::Index>(r) * w, w) =
          v.row(c).segment(static_cast<Eigen::Index>(y0 + r) * in.width + x0, w);
    }
  }
  const int ix = x.id;
  return x.tape->record(std::move(out), {ix}, [ix, in, y0, x0, h, w](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad_buffer(self);
    Matrix<T>& gx = t.grad_buffer(ix);
    for (int c = 0; c < in.channels; ++c) {
      for (int r = 0; r < h; ++r) {
        gx.row(c).segment(static_cast<Eigen::Index>(y0 + r) * in.width + x0, w) +=
            g.row(c).segment(static_cast<Eigen::Index>(r) * w, w);
      }
    }
  });
}

template <typename T>
Var<T> pad(Var<T> x, Extent in, int out_h, int out_w) {
  if (out_h < in.height || out_w < in.width) throw std::invalid_argument("pad: output smaller than input");
  const Matrix<T>& v = x.value();
  Matrix<T> out = Matrix<T>::Zero(in.channels, static_cast<Eigen::Index>(out_h) * out_w);
  for (int c = 0; c < in.channels; ++c) {
    for (int r = 0; r < in.height; ++r) {
      out.row(c).segment(static_cast<Eigen::Index>(r) * out_w, in.width) =
          v.row(c).segment(static_cast<Eigen::Index>(r) * in.width, in.width);
    }
  }
  const int ix = x.id;
  return x.tape->record(std::move(out), {ix}, [ix, in, out_w](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad_buffer(self);
    Matrix<T>& gx = t.grad_buffer(ix);
    for (int c = 0; c < in.channels; ++c) {
      for (int r = 0; r < in.height; ++r) {
        gx.row(c).segment(static_cast<Eigen::Index>(r) * in.width, in.width) +=
            g.row(c).segment(static_cast<Eigen::Index>(r) * out_w, in.width);
      }
    }
  });
}

template <typename T>
Var<T> patchify(Var<T> x, Extent in, int patch) {
  if (in.height % patch != 0 || in.width % patch != 0) {
    throw std::invalid_argument("patchify: extent " + std::to_string(in.height) + "x" +
                                std::to_string(in.width) + " not divisible by patch " +
                                std::to_string(patch));
  }
  const int ph = in.height / patch, pw = in.width / patch;
  const int feat = in.channels * patch * patch;
  const Matrix<T>& v = x.value();
  Matrix<T> out(static_cast<Eigen::Index>(ph) * pw, feat);
  for (int py = 0; py < ph; ++py) {
    for (int px = 0; px < pw; ++px) {
      const int row = py * pw + px;
      for (int c = 0; c < in.channels; ++c) {
        for (int dy = 0; dy < patch; ++dy) {
          out.row(row).segment((c * patch + dy) * patch, patch) =
              v.row(c).segment(static_cast<Eigen::Index>(py * patch + dy) * in.width + px * patch, patch);
        }
      }
    }
  }
  const int ix = x.id;
  return x.tape->record(std::move(out), {ix}, [ix, in, patch, ph, pw](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad_buffer(self);
    Matrix<T>& gx = t.grad_buffer(ix);
    for (int py = 0; py < ph; ++py) {
      for (int px = 0; px < pw; ++px) {
        const int row = py * pw + px;
        for (int c = 0; c < in.channels; ++c) {
          for (int dy = 0; dy < patch; ++dy) {
            gx.row(c).segment(static_cast<Eigen::Index>(py * patch + dy) * in.width + px * patch, patch) +=
                g.row(row).segment((c * patch + dy) * patch, patch);
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> im2col(Var<T> x, Extent in, int kernel, int stride, int padding) {
  const int oh = conv_out_size(in.height, kernel, stride, padding);
  const int ow = conv_out_size(in.width, kernel, stride, padding);
  if (oh < 1 || ow < 1) throw std::invalid_argument("im2col: empty output");
  const Matrix<T>& v = x.value();
  Matrix<T> out = Matrix<T>::Zero(static_cast<Eigen::Index>(in.channels) * kernel * kernel,
                                  static_cast<Eigen::Index>(oh) * ow);
  for (int c = 0; c < in.channels; ++c) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const int row = (c * kernel + ky) * kernel + kx;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= in.height) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - padding + kx;
            if (ix < 0 || ix >= in.width) continue;
            out(row, oy * ow + ox) = v(c, iy * in.width + ix);
          }
        }
      }
    }
  }
  const int id = x.id;
  return x.tape->record(std::move(out), {id},
                        [id, in, kernel, stride, padding, oh, ow](Tape<T>& t, int self) {
                          const Matrix<T>& g = t.grad_buffer(self);
                          Matrix<T>& gx = t.grad_buffer(id);
                          for (int c = 0; c < in.channels; ++c) {
                            for (int ky = 0; ky < kernel; ++ky) {
                              for (int kx = 0; kx < kernel; ++kx) {
                                const int row = (c * kernel + ky) * kernel + kx;
                                for (int oy = 0; oy < oh; ++oy) {
                                  const int iy = oy * stride - padding + ky;
                                  if (iy < 0 || iy >= in.height) continue;
                                  for (int ox = 0; ox < ow; ++ox) {
                                    const int ix = ox * stride - padding + kx;
                                    if (ix < 0 || ix >= in.width) continue;
                                    gx(c, iy * in.width + ix) += g(row, oy * ow + ox);
                                  }
                                }
                              }
                            }
                          }
                        });
}

#define MAA_INSTANTIATE(T)                                                              \
  template class Tape<T>;                                                               \
  template Var<T> matmul(Var<T>, Var<T>);                                               \
  template Var<T> matmul_nt(Var<T>, Var<T>);                                            \
  template Var<T> add(Var<T>, Var<T>);                                                  \
  template Var<T> sub(Var<T>, Var<T>);                                                  \
  template Var<T> mul(Var<T>, Var<T>);                                                  \
  template Var<T> scale(Var<T>, T);                                                     \
  template Var<T> add_row(Var<T>, Var<T>);                                              \
  template Var<T> add_col(Var<T>, Var<T>);                                              \
  template Var<T> transpose(Var<T>);                                                    \
  template Var<T> flatten(Var<T>);                                                      \
  template Var<T> mean_rows(Var<T>);                                                    \
  template Var<T> concat_rows(std::span<const Var<T>>);                                 \
  template Var<T> sum_scalars(std::span<const Var<T>>);                                 \
  template Var<T> relu(Var<T>);                                                         \
  template Var<T> gelu(Var<T>);                                                         \
  template Var<T> layer_norm_rows(Var<T>, Var<T>, Var<T>, T);                           \
  template Var<T> normalize_rows(Var<T>, T);                                            \
  template Var<T> multi_head_attention(Var<T>, int);                                    \
  template Var<T> embedding(Var<T>, std::span<const int>);                              \
  template Var<T> cosine(Var<T>, Var<T>);                                               \
  template Var<T> symmetric_cross_entropy(Var<T>);                                      \
  template Var<T> resize_bilinear(Var<T>, Extent, int, int);                            \
  template Var<T> crop(Var<T>, Extent, int, int, int, int);                             \
  template Var<T> pad(Var<T>, Extent, int, int);                                        \
  template Var<T> patchify(Var<T>, Extent, int);                                        \
  template Var<T> im2col(Var<T>, Extent, int, int, int);

MAA_INSTANTIATE(float)
MAA_INSTANTIATE(double)

#undef MAA_INSTANTIATE

}  // namespace maa::ad
