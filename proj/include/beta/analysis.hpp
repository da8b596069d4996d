#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "beta/backbone.hpp"
#include "beta/episode.hpp"
#include "beta/finetune.hpp"
#include "beta/inference.hpp"

namespace beta {

enum class VariantKind { tabpfn_full, tabpfn_1000, tabpfn_en16, tabpfn_knn, tabpfn_finetune, tabpfn_bagging, beta };

const char* variant_name(VariantKind kind);
/// Accepts full names ("tabpfn-bagging") and short forms ("bagging", "en16", "1000", ...).
VariantKind parse_variant(const std::string& name);

struct VariantSpec {
  VariantKind kind = VariantKind::tabpfn_1000;
  std::size_t context_size = 1000;  // N_sub of subsample / bootstrap / en16, k of knn
  std::size_t contexts = 16;        // bootstrap contexts of tabpfn-bagging
  std::size_t shuffles = 16;        // feature permutations of tabpfn-en16
  double val_fraction = 0.2;        // share of the training set held out for early stopping
  std::size_t code_length = 32;     // ECOC bits when C exceeds the backbone head
  FinetuneConfig finetune{};        // beta and tabpfn-finetune only
  std::size_t workers = 1;

  void validate() const;
  /// Defaults per variant; tabpfn-finetune trains the whole backbone at lr 1e-5.
  static VariantSpec make(VariantKind kind, std::size_t context_size = 1000);
};

/// Fit the variant on `train` and return test-row class probabilities. Plain-backbone variants
/// see a seeded random subset of d_max columns when the table is wider than the backbone.
Tensor<double> run_variant(const VariantSpec& spec, const BackboneWeights<float>& theta, const LabeledSet& train,
                           const Tensor<float>& test_x, std::uint64_t seed);

struct BiasVarianceReport {
  std::string variant;
  std::string dataset;
  std::size_t context_size = 0;
  std::size_t replicates = 0;
  double bias2 = 0;
  double variance = 0;
  double gen_error = 0;
};

/// Squared-loss decomposition of M ≥ 2 prediction matrices against one-hot labels, averaged
/// over test rows.
BiasVarianceReport decompose(const std::vector<Tensor<double>>& predictions, std::span<const int> labels);

/// Replicate m trains on a bootstrap resample of `train` (seed derived from seed and m; the
/// resample is skipped when `resample` is false) and predicts the fixed test split.
BiasVarianceReport bias_variance_estimate(const VariantSpec& spec, const BackboneWeights<float>& theta,
                                          const LabeledSet& train, const LabeledSet& test, std::size_t replicates,
                                          std::uint64_t seed, bool resample = true);

struct StudyDataset {
  std::string name;
  LabeledSet train;
  LabeledSet test;
};

/// One report per (variant, dataset, context size), in that nesting order.
std::vector<BiasVarianceReport> run_variant_study(const std::vector<VariantSpec>& variants,
                                                  const std::vector<StudyDataset>& datasets,
                                                  const std::vector<std::size_t>& context_sizes,
                                                  std::size_t replicates, std::uint64_t seed,
                                                  const BackboneWeights<float>& theta, std::ostream* progress = nullptr);

/// Tab-separated table with a header: variant, dataset, context_size, M, bias2, variance, gen_error.
void write_report(std::ostream& out, const std::vector<BiasVarianceReport>& reports);

/// Synthetic tabular tasks.
struct SyntheticTask {
  enum class Kind { gaussian, teacher };
  Kind kind = Kind::gaussian;
  std::string name = "synthetic";
  std::size_t n = 2000;
  std::size_t d = 10;
  std::size_t classes = 2;
  std::size_t informative = 10;         // informative columns
  std::size_t informative_offset = 0;   // index of the first informative column
  double separation = 1.0;              // class-mean scale (gaussian) or teacher logit scale
  std::size_t teacher_hidden = 16;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
};

/// Draw the task, split off a test part and standardize with train statistics.
StudyDataset make_synthetic(const SyntheticTask& task);

/// `count` mixed gaussian / teacher datasets of `n` rows for the variance study.
std::vector<StudyDataset> study_datasets(std::size_t count, std::size_t n, std::uint64_t seed);

/// The four downstream tasks: d = 150, d = 5000, a nonlinear teacher, and C = 15.
std::vector<SyntheticTask> adaptation_tasks(std::uint64_t seed, std::size_t n = 2000);

}  // namespace beta
