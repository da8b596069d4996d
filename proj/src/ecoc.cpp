#include "beta/ecoc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>

#include "beta/rng.hpp"

namespace beta {
namespace {

constexpr std::size_t kMaxDraws = 1000;

std::size_t min_length(std::size_t c) {
  std::size_t l = 0;
  while ((std::size_t{1} << l) < c) ++l;
  return l;
}

EcocCodebook exhaustive(std::size_t c) {
  // Columns are the subsets of classes that contain class 0, excluding the full set.
  const std::size_t length = (std::size_t{1} << (c - 1)) - 1;
  EcocCodebook code{c, length, std::vector<std::uint8_t>(c * length, 0)};
  for (std::size_t l = 0; l < length; ++l) {
    code.bits[l] = 1;
    for (std::size_t r = 1; r < c; ++r) code.bits[r * length + l] = ((l >> (r - 1)) & 1) ? 1 : 0;
  }
  return code;
}

bool valid(const EcocCodebook& code) {
  try {
    code.validate();
    return true;
  } catch (const std::invalid_argument&) {
    return false;
  }
}

}  // namespace

void EcocCodebook::validate() const {
  if (bits.size() != n_classes * length) throw std::invalid_argument("ecoc: code matrix has the wrong size");
  std::set<std::vector<std::uint8_t>> rows;
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (!rows.emplace(bits.begin() + static_cast<std::ptrdiff_t>(c * length),
                      bits.begin() + static_cast<std::ptrdiff_t>((c + 1) * length))
             .second) {
      throw std::invalid_argument("ecoc: codeword of class " + std::to_string(c) + " repeats an earlier row");
    }
  }
  for (std::size_t l = 0; l < length; ++l) {
    std::size_t ones = 0;
    for (std::size_t c = 0; c < n_classes; ++c) ones += bit(c, l);
    if (ones == 0 || ones == n_classes) throw std::invalid_argument("ecoc: column " + std::to_string(l) + " is constant");
  }
}

EcocCodebook ecoc_build(std::size_t n_classes, std::size_t length, std::uint64_t seed) {
  if (n_classes < 2) throw std::invalid_argument("ecoc: at least two classes are required");
  if (length < min_length(n_classes)) {
    throw std::invalid_argument("ecoc: code length " + std::to_string(length) + " cannot separate " +
                                std::to_string(n_classes) + " classes (need >= " +
                                std::to_string(min_length(n_classes)) + ")");
  }
  if (n_classes < 64 && (std::size_t{1} << (n_classes - 1)) - 1 <= length) return exhaustive(n_classes);

  SplitMix64 rng(seed);
  EcocCodebook code{n_classes, length, std::vector<std::uint8_t>(n_classes * length, 0)};
  for (std::size_t attempt = 0; attempt < kMaxDraws; ++attempt) {
    std::fill(code.bits.begin(), code.bits.end(), 0);
    for (std::size_t l = 0; l < length; ++l) {
      const auto order = permutation(n_classes, rng);
      for (std::size_t t = 0; t < n_classes / 2; ++t) code.bits[order[t] * length + l] = 1;
    }
    if (valid(code)) return code;
  }
  // Short codes rarely give distinct rows column by column; draw distinct codewords instead.
  for (std::size_t attempt = 0; attempt < kMaxDraws; ++attempt) {
    std::set<std::vector<std::uint8_t>> used;
    for (std::size_t c = 0; c < n_classes; ++c) {
      std::vector<std::uint8_t> row(length);
      do {
        for (auto& b : row) b = static_cast<std::uint8_t>(rng.next() >> 63);
      } while (!used.insert(row).second);
      std::copy(row.begin(), row.end(), code.bits.begin() + static_cast<std::ptrdiff_t>(c * length));
    }
    if (valid(code)) return code;
  }
  throw std::runtime_error("ecoc: failed to draw a valid codebook");
}

std::vector<double> ecoc_log_scores(const EcocCodebook& code, std::span<const double> bit_probs) {
  if (bit_probs.size() != code.length) {
    throw std::invalid_argument("ecoc: got " + std::to_string(bit_probs.size()) + " bit probabilities for a code of length " +
                                std::to_string(code.length));
  }
  std::vector<double> log_p(code.length), log_q(code.length);
  for (std::size_t l = 0; l < code.length; ++l) {
    log_p[l] = std::log(bit_probs[l]);
    log_q[l] = std::log1p(-bit_probs[l]);
  }
  std::vector<double> scores(code.n_classes, 0.0);
  for (std::size_t c = 0; c < code.n_classes; ++c)
    for (std::size_t l = 0; l < code.length; ++l) scores[c] += code.bit(c, l) ? log_p[l] : log_q[l];
  return scores;
}

std::vector<double> ecoc_class_probabilities(const EcocCodebook& code, std::span<const double> bit_probs) {
  auto scores = ecoc_log_scores(code, bit_probs);
  const double mx = *std::max_element(scores.begin(), scores.end());
  if (!std::isfinite(mx)) {
    // Hard bit probabilities that match no codeword: fall back to clamped probabilities.
    std::vector<double> clamped(bit_probs.begin(), bit_probs.end());
    for (double& p : clamped) p = std::clamp(p, 1e-12, 1 - 1e-12);
    return ecoc_class_probabilities(code, clamped);
  }
  double total = 0;
  for (double& s : scores) total += (s = std::exp(s - mx));
  for (double& s : scores) s /= total;
  return scores;
}

std::size_t ecoc_decode(const EcocCodebook& code, std::span<const double> bit_probs) {
  const auto scores = ecoc_log_scores(code, bit_probs);
  return static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

std::vector<int> ecoc_column_labels(const EcocCodebook& code, std::span<const int> labels, std::size_t l) {
  if (l >= code.length) throw std::out_of_range("ecoc: column out of range");
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= code.n_classes) {
      throw std::invalid_argument("ecoc: label " + std::to_string(labels[i]) + " outside the codebook");
    }
    out[i] = code.bit(static_cast<std::size_t>(labels[i]), l);
  }
  return out;
}

}  // namespace beta
