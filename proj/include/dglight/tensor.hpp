#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <map>
#include <random>
#include <string>

namespace dglight {

// Dense 64-bit tensor. Rank is at most two: scalars are 1x1, vectors are
// either 1xn rows or nx1 columns.
using Tensor = Eigen::MatrixXd;
using Index = Eigen::Index;
using Shape = std::array<Index, 2>;

// Named parameter set (critic weights, mock policy weights, ...).
using ParamMap = std::map<std::string, Tensor>;

inline Shape shape_of(const Tensor& t) { return {t.rows(), t.cols()}; }

inline bool all_finite(const Tensor& t) { return t.allFinite(); }

inline Tensor scalar_tensor(double v) { return Tensor::Constant(1, 1, v); }

// Glorot uniform: U(-limit, limit), limit = sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot_uniform(Index rows, Index cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) t(r, c) = dist(rng);
  }
  return t;
}

}  // namespace dglight
