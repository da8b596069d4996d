#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>

#include "beta/backbone.hpp"
#include "beta/finetune.hpp"

namespace beta {

/// Raised for unreadable checkpoints: bad magic, unsupported version, truncation or a
/// config/tensor mismatch.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t checkpoint_version = 1;

/// Backbone weights plus, for fine-tuned models, the adapter and its decoding rule.
struct Checkpoint {
  BackboneWeights<float> backbone;
  std::optional<BetaModel> model;
};

/// Layout: "BPFN", version (u32), config block (u32 byte count, key=value lines), tensor
/// count (u32), then per tensor: name (u32 length + bytes), rank (u32), dims (u64 each),
/// values as little-endian 32-bit floats.
void write_checkpoint(std::ostream& out, const BackboneWeights<float>& backbone, const BetaModel* model = nullptr);
Checkpoint read_checkpoint(std::istream& in);

/// Write-temp-then-rename.
void save_checkpoint(const std::string& path, const BackboneWeights<float>& backbone, const BetaModel* model = nullptr);
Checkpoint load_checkpoint(const std::string& path);

/// Run `write` into `path + ".tmp"` and rename it over `path` once the stream is flushed.
void atomic_write(const std::string& path, const std::function<void(std::ostream&)>& write);

}  // namespace beta
