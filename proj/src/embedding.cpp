#include "callisto/embedding.hpp"

#include <cmath>

namespace callisto {

bool all_finite(std::span<const float> v) {
  for (float x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

bool all_finite(const EmbeddingMatrix& m) { return all_finite(m.values); }

float squared_l2(std::span<const float> a, std::span<const float> b) {
  float acc = 0.0f;
  for (size_t i = 0; i < a.size(); ++i) {
    const float d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

float dot(std::span<const float> a, std::span<const float> b) {
  float acc = 0.0f;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

float distance(std::span<const float> a, std::span<const float> b, Metric m) {
  return m == Metric::squared_l2 ? squared_l2(a, b) : -dot(a, b);
}

}  // namespace callisto
