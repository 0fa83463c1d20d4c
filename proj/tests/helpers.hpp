#pragma once

#include "maa/autodiff.hpp"
#include "maa/image.hpp"
#include "maa/models.hpp"
#include "maa/random.hpp"

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

namespace testutil {

namespace fs = std::filesystem;

inline fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::path(MAA_TEST_TMP) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

inline maa::ad::Matrix<double> random_matrix(int rows, int cols, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  maa::Rng rng(seed);
  maa::ad::Matrix<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

inline maa::Image random_image(int size, std::uint64_t seed, float lo = 0.0f, float hi = 1.0f) {
  maa::Rng rng(seed);
  maa::Image img(size, size);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform(lo, hi));
  return img;
}

/// Collapses a node to a scalar with fixed pseudo-random weights so every
/// entry of the node gets a distinct upstream gradient.
inline maa::ad::Var<double> weighted_sum(maa::ad::Var<double> y, std::uint64_t seed = 99) {
  auto& t = *y.tape;
  const auto r = static_cast<int>(y.rows()), c = static_cast<int>(y.cols());
  auto w = t.constant(random_matrix(r, c, seed));
  auto left = t.constant(maa::ad::Matrix<double>::Ones(1, r));
  auto right = t.constant(maa::ad::Matrix<double>::Ones(c, 1));
  return maa::ad::matmul(maa::ad::matmul(left, maa::ad::mul(y, w)), right);
}

using ScalarFn = std::function<maa::ad::Var<double>(maa::ad::Tape<double>&, maa::ad::Var<double>)>;

struct GradCheck {
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
};

/// Central differences on every coordinate of x0 against the tape gradient.
inline GradCheck check_gradient(const ScalarFn& f, const maa::ad::Matrix<double>& x0, double h = 1e-6) {
  maa::ad::Tape<double> tape;
  auto x = tape.variable(x0);
  auto y = f(tape, x);
  tape.backward(y);
  const auto g = tape.grad(x);
  auto eval = [&](const maa::ad::Matrix<double>& v) {
    maa::ad::Tape<double> t;
    return f(t, t.constant(v)).scalar();
  };
  GradCheck out;
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    auto plus = x0, minus = x0;
    plus.data()[i] += h;
    minus.data()[i] -= h;
    const double fd = (eval(plus) - eval(minus)) / (2.0 * h);
    const double err = std::abs(fd - g.data()[i]);
    out.max_abs_error = std::max(out.max_abs_error, err);
    out.max_rel_error = std::max(out.max_rel_error, err / std::max(1e-6, std::abs(fd)));
  }
  return out;
}

inline maa::models::ModelConfig tiny_config(maa::models::Architecture arch, int vocab_size, std::uint64_t seed) {
  auto c = maa::models::default_config(arch, vocab_size, seed);
  c.input_size = 16;
  c.width = arch == maa::models::Architecture::PatchTransformer ? 16 : 8;
  c.depth = 2;
  c.heads = 2;
  c.embedding_dim = 16;
  c.text_width = 16;
  return c;
}

}  // namespace testutil
