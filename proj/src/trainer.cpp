#include "dirrec/trainer.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include <spdlog/spdlog.h>

#include "dirrec/evaluation.hpp"

namespace dirrec {

std::vector<std::string> TrainConfig::problems() const {
  std::vector<std::string> p;
  if (model.dim == 0) p.push_back("dim must be positive");
  if (!(learning_rate > 0.0)) p.push_back("learning_rate must be positive");
  if (lr_halving_period == 0) p.push_back("lr_halving_period must be positive");
  if (patience == 0) p.push_back("patience must be positive");
  if (!(min_delta >= 0.0)) p.push_back("min_delta must be non-negative");
  if (max_epochs_per_estep == 0) p.push_back("max_epochs_per_estep must be positive");
  if (threads == 0) p.push_back("threads must be positive");
  if (!(model.space.implicit_multiplier >= 1.0)) p.push_back("implicit_multiplier must be at least 1.0");
  if (model.space.implicit_axes == 0) p.push_back("implicit_axes must be positive");
  if (!(model.bpr_lambda >= 0.0)) p.push_back("bpr_lambda must be non-negative");
  if (!(model.weight_decay >= 0.0)) p.push_back("weight_decay must be non-negative");
  if (valid_sample_cap && *valid_sample_cap == 0) p.push_back("valid_sample_cap must be positive");
  if (model.kind == ModelKind::AugmentedMf || model.kind == ModelKind::AugmentedRnn) {
    if (model.space.explicit_axes.empty()) p.push_back("augmented models need at least one explicit axis");
  }
  for (std::size_t i = 0; i < model.space.explicit_axes.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (model.space.explicit_axes[i] == model.space.explicit_axes[j]) {
        p.push_back("explicit_axes lists '" + to_string(model.space.explicit_axes[i]) + "' twice");
      }
    }
  }
  return p;
}

void TrainConfig::validate() const {
  const auto p = problems();
  if (p.empty()) return;
  std::string msg = "invalid training configuration:";
  for (const auto& s : p) msg += "\n  " + s;
  throw InputError(msg);
}

nlohmann::ordered_json EpochRecord::to_json() const {
  return {{"epoch", epoch}, {"round", round},   {"train_loss", train_loss},
          {"valid_auc", valid_auc}, {"lr", lr}, {"wall_ms", wall_ms}};
}

nlohmann::ordered_json ReallocationRecord::to_json() const {
  return {{"round", round},
          {"epoch", epoch},
          {"loss_before", loss_before},
          {"loss_after", loss_after},
          {"moved_items", moved_items}};
}

ReallocationRecord reallocation_step(DirModel& model, const Catalog& catalog, std::size_t threads) {
  const auto frozen = model.training_contexts(catalog);
  ReallocationRecord rec;
  rec.loss_before = frozen_loss(frozen, model.allocation(), model.store(), model.normalization());
  const auto evidence = implicit_evidence(frozen, model.space(), model.store(), model.normalization());
  ReallocationReport report;
  ReallocateOptions options;
  options.threads = threads;
  auto next = reallocate(model.allocation(), model.space(), evidence, options, &report);
  rec.loss_after = frozen_loss(frozen, next, model.store(), model.normalization());
  rec.moved_items = report.moved_items;
  if (rec.loss_after > rec.loss_before) {
    throw std::logic_error("reallocation increased the frozen training loss from " +
                           std::to_string(rec.loss_before) + " to " + std::to_string(rec.loss_after));
  }
  model.set_allocation(std::move(next));
  return rec;
}

TrainResult learn_dir(const Catalog& catalog, const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  Rng master(config.seed);
  const auto model_seed = master();
  Rng rng(master());
  auto model = create_model(config.model, catalog, model_seed);
  auto* dir = dynamic_cast<DirModel*>(model.get());

  TrainResult result;
  auto& st = result.state;
  result.best = model->clone();

  auto estep = [&] {
    double step_best = -std::numeric_limits<double>::infinity();
    std::size_t stale = 0;
    for (std::size_t n = 0; stale < config.patience && n < config.max_epochs_per_estep; ++n) {
      const auto start = std::chrono::steady_clock::now();
      EpochRecord rec;
      rec.epoch = st.epoch;
      rec.round = st.round;
      rec.lr = learning_rate_at(st.epoch, config.learning_rate, config.lr_halving_period);
      rec.train_loss = model->train_epoch(catalog, rec.lr, rng);
      if (!std::isfinite(rec.train_loss)) {
        throw NumericalError("non-finite training loss at epoch " + std::to_string(st.epoch));
      }
      rec.valid_auc = validation_auc(catalog, *model, config.threads, config.valid_sample_cap);
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      ++st.epoch;
      st.telemetry.push_back(rec);
      if (hooks.on_epoch) hooks.on_epoch(rec);
      spdlog::info("epoch {} round {} loss {:.4f} valid_auc {:.4f} lr {}", rec.epoch, rec.round,
                   rec.train_loss, rec.valid_auc, rec.lr);

      if (rec.valid_auc > st.best_valid_auc + config.min_delta) {
        st.best_valid_auc = rec.valid_auc;
        st.best_epoch = rec.epoch;
        st.best_round = rec.round;
        result.best = model->clone();
      }
      if (rec.valid_auc > step_best + config.min_delta) {
        step_best = rec.valid_auc;
        stale = 0;
      } else {
        ++stale;
      }
    }
  };

  try {
    for (;;) {
      const double best_before = st.best_valid_auc;
      estep();
      if (st.round > 0 && st.best_valid_auc <= best_before) break;
      if (!dir || st.round >= config.max_reallocations) break;
      auto rec = reallocation_step(*dir, catalog, config.threads);
      rec.epoch = st.epoch;
      rec.round = ++st.round;
      st.reallocations.push_back(rec);
      if (hooks.on_reallocation) hooks.on_reallocation(rec);
      spdlog::info("reallocation {}: moved {} items, frozen loss {:.6f} -> {:.6f}", rec.round, rec.moved_items,
                   rec.loss_before, rec.loss_after);
    }
  } catch (...) {
    st.rng_state = rng_state(rng);
    if (hooks.on_abort) hooks.on_abort(*model, st);
    throw;
  }
  st.rng_state = rng_state(rng);
  result.final_model = std::move(model);
  return result;
}

}  // namespace dirrec
