#pragma once

#include "dglight/simulator.hpp"
#include "dglight/tensor.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

namespace testing {

using dglight::Tensor;

inline std::string fixture_path(const std::string& name) {
  return std::string(DGLIGHT_FIXTURE_DIR) + "/" + name;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("dglight_test_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Central differences, written independently of the library's helper.
inline Tensor numeric_grad(const std::function<double(const Tensor&)>& f, Tensor x, double h = 1e-5) {
  Tensor g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = f(x);
    x.data()[i] = keep - h;
    const double down = f(x);
    x.data()[i] = keep;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

inline double max_rel_err(const Tensor& analytic, const Tensor& numeric) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double a = analytic.data()[i];
    worst = std::max(worst, std::abs(a - numeric.data()[i]) / std::max(1.0, std::abs(a)));
  }
  return worst;
}

inline Tensor random_tensor(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double lo = -1,
                            double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(r, c);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = u(rng);
  return t;
}

// The state behind the golden prompt fixture.
inline dglight::IntersectionObservation sample_observation() {
  using dglight::Phase;
  dglight::IntersectionObservation o;
  auto set = [&](Phase p, int side, int q, int s1, int s2, int s3) {
    o.lane(p, side) = {q, {s1, s2, s3}};
  };
  set(Phase::kETWT, 0, 0, 0, 1, 0);
  set(Phase::kETWT, 1, 1, 0, 0, 2);
  set(Phase::kNTST, 0, 0, 0, 0, 1);
  set(Phase::kELWL, 1, 0, 0, 0, 1);
  o.neighbors[0] = {{2, 1}, 3, 2};
  o.neighbors[1] = {{std::nullopt, 3}, 3, 1};
  o.neighbors[2] = {{2, 1}, 3, 2};
  o.neighbors[3] = {{std::nullopt, 3}, 3, 1};
  return o;
}

}  // namespace testing
