#pragma once

// Reverse-mode differentiation over row-major dense matrices.
//
// A Tape records every operation as a node holding its value and a backward
// closure. Leaves are either constants or variables; gradients are only
// propagated into nodes that (transitively) depend on a variable, so a model
// whose parameters are bound as constants costs one extra forward-sized pass
// for an input gradient.
//
// Images travel through the tape as (channels x height*width) matrices, one
// row per channel plane. The image ops take the spatial extent explicitly.

#include <Eigen/Dense>

#include <deque>
#include <functional>
#include <span>
#include <vector>

namespace maa::ad {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Matrix<T>& value() const { return tape->value(id); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  T scalar() const { return value()(0, 0); }
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  Var<T> constant(Matrix<T> value);
  Var<T> variable(Matrix<T> value);

  /// Appends an op node. It requires grad iff any input does; `backward`
  /// is dropped otherwise.
  Var<T> record(Matrix<T> value, std::initializer_list<int> inputs, Backward backward);
  Var<T> record(Matrix<T> value, std::span<const int> inputs, Backward backward);

  const Matrix<T>& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  /// Gradient of the last backward() target with respect to `v`; zeros if the
  /// node was never reached.
  Matrix<T> grad(Var<T> v) const;

  /// Mutable gradient buffer, zero-initialized on first access.
  Matrix<T>& grad_buffer(int id);

  /// Seeds d(out)/d(out) = 1 and propagates. `out` must be 1x1.
  void backward(Var<T> out);

  std::size_t size() const { return nodes_.size(); }

  /// Number of cosine evaluations that hit a degenerate (near-zero) norm.
  int degenerate_cosines = 0;

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    Backward backward;
  };
  std::deque<Node> nodes_;
};

// --- dense algebra ---------------------------------------------------------

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
/// a * b^T
template <typename T> Var<T> matmul_nt(Var<T> a, Var<T> b);
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T s);
/// Adds a 1 x cols row to every row.
template <typename T> Var<T> add_row(Var<T> a, Var<T> row);
/// Adds a rows x 1 column to every column.
template <typename T> Var<T> add_col(Var<T> a, Var<T> col);
template <typename T> Var<T> transpose(Var<T> a);
/// Row-major reshape to 1 x (rows*cols).
template <typename T> Var<T> flatten(Var<T> a);
/// 1 x cols mean over rows.
template <typename T> Var<T> mean_rows(Var<T> a);
template <typename T> Var<T> concat_rows(std::span<const Var<T>> parts);
/// Sum of 1x1 nodes.
template <typename T> Var<T> sum_scalars(std::span<const Var<T>> parts);

// --- nonlinearities and normalization --------------------------------------

template <typename T> Var<T> relu(Var<T> a);
/// tanh approximation
template <typename T> Var<T> gelu(Var<T> a);
template <typename T> Var<T> layer_norm_rows(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5));
template <typename T> Var<T> normalize_rows(Var<T> x, T eps = T(1e-12));

/// Fused multi-head self-attention. `qkv` is tokens x (3*width) laid out as
/// [Q | K | V]; returns tokens x width (heads concatenated).
template <typename T> Var<T> multi_head_attention(Var<T> qkv, int heads);

/// Embedding lookup: rows of `table` selected by `ids`.
template <typename T> Var<T> embedding(Var<T> table, std::span<const int> ids);

// --- similarity and losses -------------------------------------------------

/// Cosine between two equally sized nodes (entries treated as one vector).
/// A norm below 1e-12 yields 0 with zero gradient and bumps
/// Tape::degenerate_cosines.
template <typename T> Var<T> cosine(Var<T> a, Var<T> b);

/// Symmetric cross entropy over a square logit matrix with targets on the
/// diagonal, averaged over the row-wise and column-wise directions.
template <typename T> Var<T> symmetric_cross_entropy(Var<T> logits);

// --- image ops (channel planes, rows = channels) ----------------------------

struct Extent {
  int channels = 3;
  int height = 0;
  int width = 0;
};

/// Half-pixel-centred bilinear resampling to (out_h, out_w), edge clamped.
template <typename T> Var<T> resize_bilinear(Var<T> x, Extent in, int out_h, int out_w);
template <typename T> Var<T> crop(Var<T> x, Extent in, int y0, int x0, int h, int w);
/// Zero pads on the bottom/right to (out_h, out_w).
template <typename T> Var<T> pad(Var<T> x, Extent in, int out_h, int out_w);
/// Non-overlapping p x p patches -> (num_patches x channels*p*p).
template <typename T> Var<T> patchify(Var<T> x, Extent in, int patch);
/// Convolution unfold: (channels*k*k) x (out_h*out_w), zero padded.
template <typename T> Var<T> im2col(Var<T> x, Extent in, int kernel, int stride, int padding);

int conv_out_size(int in, int kernel, int stride, int padding);

}  // namespace maa::ad
