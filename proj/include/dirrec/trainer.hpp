#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dirrec/catalog.hpp"
#include "dirrec/models.hpp"

namespace dirrec {

struct TrainConfig {
  ModelConfig model;
  double learning_rate = 0.1;
  std::size_t lr_halving_period = 10;
  // Epochs without a validation AUC gain of min_delta before the R-step.
  std::size_t patience = 3;
  double min_delta = 1e-4;
  std::size_t max_reallocations = 5;
  std::size_t max_epochs_per_estep = 100;
  std::uint64_t seed = 42;
  std::size_t threads = 1;
  std::optional<std::size_t> valid_sample_cap;

  /// Every violated constraint, one message each.
  std::vector<std::string> problems() const;
  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t round = 0;
  double train_loss = 0.0;
  double valid_auc = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;

  nlohmann::ordered_json to_json() const;
};

struct ReallocationRecord {
  std::size_t round = 0;  // round that starts after this R-step
  std::size_t epoch = 0;  // epochs completed before it
  double loss_before = 0.0;
  double loss_after = 0.0;
  std::size_t moved_items = 0;

  nlohmann::ordered_json to_json() const;
};

struct TrainState {
  std::size_t epoch = 0;
  std::size_t round = 0;
  double best_valid_auc = -1.0;
  std::size_t best_epoch = 0;
  std::size_t best_round = 0;
  std::vector<EpochRecord> telemetry;
  std::vector<ReallocationRecord> reallocations;
  std::string rng_state;
};

struct TrainResult {
  std::unique_ptr<Recommender> best;
  std::unique_ptr<Recommender> final_model;
  TrainState state;
};

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(const ReallocationRecord&)> on_reallocation;
  // Called with the failing model before a training error propagates.
  std::function<void(const Recommender&, const TrainState&)> on_abort;
};

/// Frozen-embedding R-step on a DIR head. Returns the record and installs the
/// new allocation. Throws std::logic_error if the frozen loss increased.
ReallocationRecord reallocation_step(DirModel& model, const Catalog& catalog, std::size_t threads = 1);

/// LearnDIR: E-steps until validation AUC plateaus, separated by R-steps,
/// until a full round brings no gain or max_reallocations is reached.
/// Non-DIR models get a single E-step.
TrainResult learn_dir(const Catalog& catalog, const TrainConfig& config, const TrainHooks& hooks = {});

}  // namespace dirrec
