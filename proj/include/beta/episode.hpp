#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "beta/tensor.hpp"

namespace beta {

/// Labeled rows: features N×d with class indices in [0, n_classes).
struct LabeledSet {
  Tensor<float> x;
  std::vector<int> y;
  std::size_t n_classes = 0;

  std::size_t size() const noexcept { return y.size(); }
  std::size_t width() const { return x.rank() == 2 ? x.shape()[1] : 0; }
  LabeledSet subset(std::span<const std::size_t> indices) const;
  /// Throws std::invalid_argument when rows, labels and class count disagree.
  void validate() const;
};

/// One in-context task: a labeled support set plus query rows.
struct Episode {
  Tensor<float> support_x;
  std::vector<int> support_y;
  Tensor<float> query_x;
  std::vector<int> query_y;  // empty when unlabeled
  std::size_t n_classes = 0;

  std::size_t n_support() const noexcept { return support_y.size(); }
  std::size_t n_query() const { return query_x.rank() == 2 ? query_x.shape()[0] : 0; }
  std::size_t n_features() const { return support_x.rank() == 2 ? support_x.shape()[1] : 0; }
  void validate() const;
};

}  // namespace beta
