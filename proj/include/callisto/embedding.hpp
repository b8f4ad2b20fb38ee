#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace callisto {

enum class Metric { squared_l2, inner_product };

/// Row-major count() x dim matrix of f32 embeddings.
struct EmbeddingMatrix {
  uint32_t dim = 0;
  std::vector<float> values;

  size_t count() const { return dim == 0 ? 0 : values.size() / dim; }

  std::span<const float> row(size_t i) const {
    return {values.data() + i * dim, dim};
  }
  std::span<float> row(size_t i) { return {values.data() + i * dim, dim}; }
};

bool all_finite(std::span<const float> v);
bool all_finite(const EmbeddingMatrix& m);

float squared_l2(std::span<const float> a, std::span<const float> b);
float dot(std::span<const float> a, std::span<const float> b);

/// Comparable "smaller is closer" value for either metric. Inner product is
/// mapped to its negation so that ascending order ranks best matches first.
float distance(std::span<const float> a, std::span<const float> b, Metric m);

}  // namespace callisto
