#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "dirrec/catalog.hpp"
#include "dirrec/models.hpp"
#include "dirrec/trainer.hpp"

namespace dirrec {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// A saved model. On disk: an 8-byte magic, a length-prefixed JSON header
/// (config, allocation, table shapes, RNG state), then each parameter table
/// as a u64 count followed by little-endian doubles.
struct Checkpoint {
  TrainConfig config;
  std::string catalog_path;
  std::unique_ptr<Recommender> model;
  std::string rng_state;
  std::optional<double> best_valid_auc;
  std::size_t epoch = 0;
  std::size_t round = 0;
};

void save_checkpoint(const std::filesystem::path& path, Checkpoint& checkpoint);

/// Reads only the header; throws InputError on a bad magic or version.
nlohmann::json read_checkpoint_header(const std::filesystem::path& path);

/// Rebuilds the model against `catalog`, which must be the one it was trained on.
Checkpoint load_checkpoint(const std::filesystem::path& path, const Catalog& catalog);

/// Number of doubles stored in the table section.
std::size_t checkpoint_scalar_count(const std::filesystem::path& path);

}  // namespace dirrec
