#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "beta/adapter.hpp"
#include "beta/backbone.hpp"
#include "beta/ecoc.hpp"
#include "beta/episode.hpp"
#include "beta/optim.hpp"

namespace beta {

/// How class scores are produced on top of the backbone hidden states.
enum class HeadMode {
  native,    // the backbone's 10-wide head, classes >= C masked
  extended,  // a C-wide trainable linear replacing the head
  ecoc,      // one binary task per path, decoded through a codebook
};

const char* head_mode_name(HeadMode mode);
HeadMode parse_head_mode(const std::string& name);

struct FinetuneConfig {
  double lr = 0.003;
  double weight_decay = 1e-5;
  std::size_t batch_size = 1024;
  std::size_t context_size = 1000;
  std::size_t max_epochs = 100;
  std::size_t patience = 16;
  std::size_t steps_per_epoch = 0;  // 0: one pass of queries over the training set
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  /// Head used when C > 10; C <= 10 always uses the native head unless `extended` is chosen.
  HeadMode wide_head = HeadMode::ecoc;
  bool extended_head = false;
  std::size_t code_length = 32;
  EncoderConfig encoder{};

  void validate() const;
};

/// Trainable C-wide output layer for the extended-head mode.
struct ExtendedHead {
  Parameter<float> w;  // d_token × C
  Parameter<float> b;  // C
};

/// Adapter parameters Φ plus the decoding rule; the backbone θ is kept separately.
struct BetaModel {
  EncoderStack<float> stack;
  std::size_t n_classes = 0;
  HeadMode head = HeadMode::native;
  std::optional<ExtendedHead> extended;
  std::optional<EcocCodebook> codebook;

  std::size_t paths() const { return stack.paths(); }
  /// Classes of the per-path task (2 under ECOC).
  std::size_t path_classes() const { return head == HeadMode::ecoc ? 2 : n_classes; }
  /// Path-level labels: ECOC bits for path k, otherwise the labels themselves.
  std::vector<int> path_labels(std::span<const int> labels, std::size_t k) const;
  std::vector<Parameter<float>*> trainable();
};

/// Path-k logits for one episode; the first path_classes() columns are meaningful.
Var<float> path_logits(Tape<float>& tape, const BetaModel& model, const BackboneWeights<float>& theta, std::size_t k,
                       Var<float> support_x, std::span<const int> support_y, Var<float> query_x, bool training,
                       const DropoutKey& key = {});

/// Σ_k of the mean query NLL of path k, with Z_s^(k), Z_q^(k) given as latents.
template <class Real>
Var<Real> multi_encoder_loss(Tape<Real>& tape, const std::vector<Var<Real>>& support_latents,
                             const std::vector<Var<Real>>& query_latents, std::span<const int> support_y,
                             std::span<const int> query_y, std::size_t n_classes, const BackboneWeights<Real>& theta);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_nll = 0;
  double val_nll = 0;
  double val_accuracy = 0;
};

struct FinetuneResult {
  BetaModel model;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
};

/// Train Φ against the frozen θ; return the stack with the best validation NLL.
FinetuneResult finetune(const BackboneWeights<float>& theta, const LabeledSet& train, const LabeledSet& val,
                        const FinetuneConfig& cfg, std::ostream* log = nullptr);

/// Deterministic training episode: support of min(N_sub, ceil(0.8 N)) rows drawn without
/// replacement, queries (at most `batch`) from the remaining rows.
struct EpisodeIndices {
  std::vector<std::size_t> support;
  std::vector<std::size_t> query;
};
EpisodeIndices sample_training_episode(std::size_t n, std::size_t context_size, std::size_t batch, std::uint64_t seed);

/// Fine-tune every backbone parameter on train episodes with no adapter (the analysis-only
/// variant). Returns the weights with the best validation NLL.
BackboneWeights<float> finetune_backbone(const BackboneWeights<float>& theta, const LabeledSet& train,
                                         const LabeledSet& val, const FinetuneConfig& cfg,
                                         std::vector<EpochRecord>* history = nullptr);

}  // namespace beta
