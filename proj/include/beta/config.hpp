#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "beta/backbone.hpp"
#include "beta/finetune.hpp"
#include "beta/inference.hpp"
#include "beta/prior.hpp"

namespace beta {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Every setting a command may read. Keys are "section.name", e.g. "finetune.lr".
struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  std::string target = "target";
  double test_fraction = 0.2;
  double val_fraction = 0.2;

  BackboneConfig backbone{};
  PriorConfig prior{};
  PretrainConfig pretrain{};
  FinetuneConfig finetune{};  // encoder.out always follows the backbone d_max
  ContextStrategy strategy{};
  AggregationRule::Mode aggregation = AggregationRule::Mode::uniform;

  std::vector<std::string> variants{"1000", "bagging"};
  std::size_t replicates = 10;
  std::vector<std::size_t> context_sizes{1000};
  std::size_t study_datasets = 10;
  std::size_t study_rows = 2000;
};

/// Set one key from its text form. Unknown keys and malformed values raise ConfigError.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

/// Read "key = value" lines under "[section]" headers; '#' starts a comment. Keys before any
/// header must carry their section ("finetune.lr = 0.01").
void apply_config(RunConfig& cfg, std::istream& in);
void apply_config_file(RunConfig& cfg, const std::string& path);

/// The fully resolved configuration in the same text format, one section per block.
void write_config(std::ostream& out, const RunConfig& cfg);

/// All recognised keys in output order.
std::vector<std::string> config_keys();

}  // namespace beta
