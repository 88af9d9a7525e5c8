#pragma once

#include <cmath>
#include <random>

#include "tkd/detection.hpp"
#include "tkd/models.hpp"

namespace tkd::test {

inline DetectionTensor random_tensor(const GridShape& shape, std::mt19937_64& rng, double scale = 2.0) {
  std::normal_distribution<double> n(0.0, scale);
  DetectionTensor t(shape);
  for (Eigen::Index i = 0; i < t.values().size(); ++i) t.values().data()[i] = n(rng);
  return t;
}

inline FeatureFrame random_features(int s, int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  FeatureFrame f;
  f.s = s;
  f.values = Matrix(s * s, dim);
  for (Eigen::Index i = 0; i < f.values.size(); ++i) f.values.data()[i] = n(rng);
  return f;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

inline Box random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> c(0.05, 0.95);
  std::uniform_real_distribution<double> s(0.02, 0.4);
  return {c(rng), c(rng), s(rng), s(rng)};
}

}  // namespace tkd::test
