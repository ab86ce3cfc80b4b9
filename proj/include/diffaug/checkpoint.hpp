#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "diffaug/data.hpp"
#include "diffaug/gan.hpp"

namespace diffaug {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to resume a run bit-exactly.
struct Checkpoint {
  NetConfig net;
  TrainState state;
  std::optional<BatchSampler::State> sampler;
  /// Free-form metadata, typically the experiment config as JSON.
  std::string metadata;
};

/// Versioned little-endian binary: magic, version, net config, step,
/// generator / discriminator parameters, both Adam states, EMA shadow, RNG
/// states, optional sampler state, metadata.
std::string encode_checkpoint(const TrainState& state, const BatchSampler* sampler, const std::string& metadata);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const BatchSampler* sampler,
                     const std::string& metadata);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace diffaug
