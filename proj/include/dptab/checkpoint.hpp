#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dptab/dp_train.hpp"
#include "dptab/privacy_accountant.hpp"
#include "dptab/sentence_codec.hpp"
#include "dptab/table_codec.hpp"
#include "dptab/transformer.hpp"

namespace dptab {

inline constexpr const char* kCheckpointFormat = "dptab-checkpoint-1";

/// Everything needed to resume training, generate or evaluate.
struct Checkpoint {
  Discretizer disc;
  Vocabulary vocab;
  TrainState state;
  /// Delta the ledger is reported at.
  double delta = 1e-6;
  /// Free-form run settings (split, policies, dataset path).
  nlohmann::json run = nlohmann::json::object();
};

/// Writes `dir/manifest.json` and `dir/params.bin`. The blob holds the model
/// parameters followed by the Adam moments, raw little-endian float32, in the
/// order listed by the manifest. Files are replaced atomically.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& checkpoint);

Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Stable identifier of a checkpoint: step plus a hash of the blob.
std::string checkpoint_id(const std::filesystem::path& dir);

std::string rng_to_string(const Rng& rng);
Rng rng_from_string(const std::string& text);

/// FNV-1a over raw bytes.
std::uint64_t fnv1a(const void* data, std::size_t bytes);

}  // namespace dptab
