#pragma once

// Central finite-difference gradient checks for tape-built scalar functions.

#include "trajattr/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <functional>
#include <random>
#include <vector>

namespace trajattr::testing {

using BuildFn = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

inline Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline double evaluate(const BuildFn& build, const std::vector<Matrix>& inputs) {
  Tape tape(false);
  std::vector<Tensor> xs;
  for (const auto& m : inputs) xs.push_back(tape.constant(m));
  return build(tape, xs).item();
}

// Largest ||analytic - numeric|| / max(||analytic||, ||numeric||, floor) over the inputs.
inline double gradient_error(const BuildFn& build, std::vector<Matrix> inputs, double h = 1e-6,
                             double floor = 1e-8) {
  Tape tape(true, true);
  std::vector<Tensor> xs;
  for (const auto& m : inputs) xs.push_back(tape.variable(m));
  tape.backward(build(tape, xs));
  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Matrix analytic = tape.grad(xs[k]);
    Matrix numeric(inputs[k].rows(), inputs[k].cols());
    for (Index i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k].data()[i];
      inputs[k].data()[i] = x0 + h;
      const double up = evaluate(build, inputs);
      inputs[k].data()[i] = x0 - h;
      const double down = evaluate(build, inputs);
      inputs[k].data()[i] = x0;
      numeric.data()[i] = (up - down) / (2 * h);
    }
    const double denom = std::max({analytic.norm(), numeric.norm(), floor});
    worst = std::max(worst, (analytic - numeric).norm() / denom);
  }
  return worst;
}

// Projects a tensor to a scalar with fixed random weights so every output
// element reaches the gradient.
inline Tensor project(Tape& tape, const Tensor& t, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return reduce_sum(mul(t, tape.constant(random_matrix(t.rows(), t.cols(), rng))));
}

}  // namespace trajattr::testing
