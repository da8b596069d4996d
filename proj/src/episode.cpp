#include "beta/episode.hpp"

#include <stdexcept>
#include <string>

namespace beta {

LabeledSet LabeledSet::subset(std::span<const std::size_t> indices) const {
  return {gather_rows(x, indices), gather(std::span<const int>(y), indices), n_classes};
}

void LabeledSet::validate() const {
  if (x.rank() != 2) throw std::invalid_argument("labeled set: features must be a matrix");
  if (x.shape()[0] != y.size()) {
    throw std::invalid_argument("labeled set: " + std::to_string(x.shape()[0]) + " rows but " +
                                std::to_string(y.size()) + " labels");
  }
  for (int label : y) {
    if (label < 0 || static_cast<std::size_t>(label) >= n_classes) {
      throw std::invalid_argument("labeled set: label " + std::to_string(label) + " outside [0, " +
                                  std::to_string(n_classes) + ")");
    }
  }
}

void Episode::validate() const {
  if (support_y.empty()) throw std::invalid_argument("episode: support set is empty");
  if (support_x.rank() != 2 || support_x.shape()[0] != support_y.size()) {
    throw std::invalid_argument("episode: support features and labels disagree");
  }
  if (query_x.rank() != 2 || query_x.shape()[1] != support_x.shape()[1]) {
    throw ShapeError("episode: support/query feature counts", support_x.shape(), query_x.shape());
  }
  if (!query_y.empty() && query_y.size() != query_x.shape()[0]) {
    throw std::invalid_argument("episode: query labels and rows disagree");
  }
  auto check = [&](const std::vector<int>& labels) {
    for (int label : labels) {
      if (label < 0 || static_cast<std::size_t>(label) >= n_classes) {
        throw std::invalid_argument("episode: label " + std::to_string(label) + " outside [0, " +
                                    std::to_string(n_classes) + ")");
      }
    }
  };
  check(support_y);
  check(query_y);
}

}  // namespace beta
