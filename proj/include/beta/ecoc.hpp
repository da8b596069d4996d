#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace beta {

/// C × L binary code matrix; row c is the codeword of class c.
struct EcocCodebook {
  std::size_t n_classes = 0;
  std::size_t length = 0;
  std::vector<std::uint8_t> bits;  // row-major C × L

  int bit(std::size_t c, std::size_t l) const { return bits[c * length + l]; }
  /// Throws std::invalid_argument unless rows are pairwise distinct and no column is constant.
  void validate() const;
  bool operator==(const EcocCodebook&) const = default;
};

/// Exhaustive code (L = 2^(C-1) - 1) when that fits in `length`, otherwise `length` random
/// balanced columns, redrawn until the codebook is valid.
EcocCodebook ecoc_build(std::size_t n_classes, std::size_t length, std::uint64_t seed);

/// Per-class log-likelihood Σ_l m_cl log p_l + (1 - m_cl) log(1 - p_l) of bit probabilities.
std::vector<double> ecoc_log_scores(const EcocCodebook& code, std::span<const double> bit_probs);

/// Class distribution proportional to the codeword likelihoods.
std::vector<double> ecoc_class_probabilities(const EcocCodebook& code, std::span<const double> bit_probs);

/// Maximum-likelihood class; ties go to the lowest index.
std::size_t ecoc_decode(const EcocCodebook& code, std::span<const double> bit_probs);

/// Binary relabeling of `labels` by column l of the codebook.
std::vector<int> ecoc_column_labels(const EcocCodebook& code, std::span<const int> labels, std::size_t l);

}  // namespace beta
