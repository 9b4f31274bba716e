#include <gtest/gtest.h>

#include "dirrec/evaluation.hpp"
#include "dirrec/synthetic.hpp"
#include "dirrec/trainer.hpp"
#include "test_support.hpp"

using namespace dirrec;
using dirrec::testing::random_catalog;

namespace {

Catalog small_synthetic(std::uint64_t seed) {
  SyntheticOptions o;
  o.num_users = 60;
  o.group_sizes = std::vector<std::size_t>(4, 5);
  o.interactions_per_user = 8;
  o.beta = 5.0;
  o.seed = seed;
  return make_synthetic_catalog(o).catalog;
}

TrainConfig quick(ModelKind kind) {
  TrainConfig c;
  c.model.kind = kind;
  c.model.dim = 6;
  c.max_epochs_per_estep = 8;
  c.max_reallocations = 3;
  c.seed = 5;
  return c;
}

std::vector<double> flatten(Recommender& m) {
  std::vector<double> out;
  for (auto& t : m.parameter_tables()) out.insert(out.end(), t.matrix->values().begin(), t.matrix->values().end());
  return out;
}

}  // namespace

TEST(Trainer, IdenticalSeedsGiveIdenticalRuns) {
  const auto catalog = small_synthetic(1);
  for (auto kind : {ModelKind::DirMf, ModelKind::DirRnn, ModelKind::BprMf}) {
    auto a = learn_dir(catalog, quick(kind));
    auto b = learn_dir(catalog, quick(kind));
    ASSERT_EQ(a.state.telemetry.size(), b.state.telemetry.size());
    for (std::size_t i = 0; i < a.state.telemetry.size(); ++i) {
      const auto& x = a.state.telemetry[i];
      const auto& y = b.state.telemetry[i];
      EXPECT_EQ(x.epoch, y.epoch);
      EXPECT_EQ(x.round, y.round);
      EXPECT_EQ(x.train_loss, y.train_loss);
      EXPECT_EQ(x.valid_auc, y.valid_auc);
      EXPECT_EQ(x.lr, y.lr);
    }
    EXPECT_EQ(flatten(*a.final_model), flatten(*b.final_model));
    EXPECT_EQ(flatten(*a.best), flatten(*b.best));
    EXPECT_EQ(a.state.rng_state, b.state.rng_state);
  }
}

TEST(Trainer, DifferentSeedsDiffer) {
  const auto catalog = small_synthetic(2);
  auto c = quick(ModelKind::DirMf);
  auto a = learn_dir(catalog, c);
  c.seed = 6;
  auto b = learn_dir(catalog, c);
  EXPECT_NE(flatten(*a.final_model), flatten(*b.final_model));
}

TEST(Trainer, ThreadCountDoesNotChangeTheRun) {
  const auto catalog = small_synthetic(3);
  auto c = quick(ModelKind::DirMf);
  auto a = learn_dir(catalog, c);
  c.threads = 3;
  auto b = learn_dir(catalog, c);
  EXPECT_EQ(flatten(*a.final_model), flatten(*b.final_model));
}

TEST(Trainer, ZeroReallocationsRunsOneEStep) {
  const auto catalog = small_synthetic(4);
  auto c = quick(ModelKind::DirMf);
  c.max_reallocations = 0;
  auto r = learn_dir(catalog, c);
  EXPECT_TRUE(r.state.reallocations.empty());
  for (const auto& e : r.state.telemetry) EXPECT_EQ(e.round, 0u);
  EXPECT_EQ(dynamic_cast<DirModel&>(*r.final_model).allocation(),
            dynamic_cast<DirModel&>(*create_model(c.model, catalog, Rng(c.seed)())).allocation());
}

TEST(Trainer, EntangledModelsGetASingleEStep) {
  const auto catalog = small_synthetic(5);
  auto r = learn_dir(catalog, quick(ModelKind::BprMf));
  EXPECT_TRUE(r.state.reallocations.empty());
  EXPECT_EQ(r.state.round, 0u);
}

TEST(Trainer, EStepLengthRespectsPatienceAndCap) {
  const auto catalog = small_synthetic(6);
  auto c = quick(ModelKind::DirMf);
  c.max_epochs_per_estep = 4;
  c.patience = 2;
  auto r = learn_dir(catalog, c);
  std::vector<std::size_t> per_round(r.state.round + 1, 0);
  for (const auto& e : r.state.telemetry) ++per_round[e.round];
  for (auto n : per_round) {
    EXPECT_GE(n, 2u);
    EXPECT_LE(n, 4u);
  }
}

TEST(Trainer, LearningRateFollowsOneGlobalSchedule) {
  const auto catalog = small_synthetic(7);
  auto c = quick(ModelKind::DirMf);
  c.lr_halving_period = 3;
  auto r = learn_dir(catalog, c);
  for (std::size_t i = 0; i < r.state.telemetry.size(); ++i) {
    EXPECT_EQ(r.state.telemetry[i].epoch, i);
    EXPECT_EQ(r.state.telemetry[i].lr, learning_rate_at(i, c.learning_rate, 3));
  }
}

TEST(Trainer, BestModelMatchesRecordedBest) {
  const auto catalog = small_synthetic(8);
  auto r = learn_dir(catalog, quick(ModelKind::DirMf));
  EXPECT_EQ(validation_auc(catalog, *r.best), r.state.best_valid_auc);
  double max_auc = 0.0;
  for (const auto& e : r.state.telemetry) max_auc = std::max(max_auc, e.valid_auc);
  EXPECT_LE(max_auc, r.state.best_valid_auc + 1e-4);
  EXPECT_EQ(r.state.telemetry[r.state.best_epoch].valid_auc, r.state.best_valid_auc);
}

TEST(Trainer, StopsAfterARoundWithoutGain) {
  const auto catalog = small_synthetic(9);
  auto c = quick(ModelKind::DirMf);
  c.max_reallocations = 10;
  auto r = learn_dir(catalog, c);
  if (r.state.round < c.max_reallocations) {
    // The last round brought no gain over the best of the earlier rounds.
    double before = -1.0, last = -1.0;
    for (const auto& e : r.state.telemetry) {
      auto& slot = e.round < r.state.round ? before : last;
      slot = std::max(slot, e.valid_auc);
    }
    EXPECT_LE(last, before + c.min_delta);
  }
  EXPECT_EQ(r.state.reallocations.size(), r.state.round);
}

TEST(Trainer, FrozenLossNeverIncreasesAcrossReallocations) {
  for (std::uint64_t s = 0; s < 4; ++s) {
    const auto catalog = small_synthetic(20 + s);
    for (auto kind : {ModelKind::DirMf, ModelKind::DirRnn}) {
      auto c = quick(kind);
      c.seed = s;
      c.model.space.implicit_axes = 1 + s % 2;
      std::size_t seen = 0;
      TrainHooks hooks;
      hooks.on_reallocation = [&](const ReallocationRecord& r) {
        EXPECT_LE(r.loss_after, r.loss_before);
        ++seen;
      };
      auto r = learn_dir(catalog, c, hooks);
      EXPECT_EQ(seen, r.state.reallocations.size());
      EXPECT_GT(seen, 0u);
    }
  }
}

TEST(Trainer, ReallocationStepOnRandomModels) {
  Rng rng(30);
  for (int trial = 0; trial < 40; ++trial) {
    auto catalog = random_catalog(rng, 12, 15, 3, 4, 8);
    ModelConfig m;
    m.kind = trial % 2 ? ModelKind::DirRnn : ModelKind::DirMf;
    m.dim = 4;
    m.space.implicit_axes = 1 + trial % 3 / 2;
    m.space.implicit_multiplier = 1.0 + 0.25 * (trial % 4);
    auto model = create_model(m, catalog, rng());
    for (auto& t : model->parameter_tables()) fill_uniform(t.matrix->values(), 1.0, rng);
    model->refresh();
    auto& dir = dynamic_cast<DirModel&>(*model);
    for (int round = 0; round < 3; ++round) {
      const auto rec = reallocation_step(dir, catalog);
      EXPECT_LE(rec.loss_after, rec.loss_before);
      // MF contexts do not depend on the allocation; recurrent states do.
      if (m.kind == ModelKind::DirMf) EXPECT_EQ(rec.loss_after, dir.training_loss(catalog));
      EXPECT_FALSE(dir.allocation().violation(dir.space()).has_value());
    }
  }
}

TEST(Trainer, ConfigProblemsAreAllReported) {
  TrainConfig c;
  c.learning_rate = -1.0;
  c.patience = 0;
  c.model.dim = 0;
  c.model.space.implicit_multiplier = 0.5;
  EXPECT_EQ(c.problems().size(), 4u);
  try {
    c.validate();
    FAIL();
  } catch (const InputError& e) {
    const std::string msg = e.what();
    for (const char* key : {"learning_rate", "patience", "dim", "implicit_multiplier"}) {
      EXPECT_NE(msg.find(key), std::string::npos) << key;
    }
  }
  TrainConfig aug;
  aug.model.kind = ModelKind::AugmentedMf;
  aug.model.space.explicit_axes.clear();
  EXPECT_EQ(aug.problems().size(), 1u);
  TrainConfig twice;
  twice.model.space.explicit_axes = {ExplicitAttribute::Price, ExplicitAttribute::Price};
  EXPECT_EQ(twice.problems().size(), 1u);
  EXPECT_TRUE(TrainConfig{}.problems().empty());
}

TEST(Trainer, DivergenceAbortsWithTheFailingModel) {
  const auto catalog = small_synthetic(10);
  auto c = quick(ModelKind::DirMf);
  c.learning_rate = 1e6;
  bool called = false;
  TrainHooks hooks;
  hooks.on_abort = [&](const Recommender&, const TrainState& st) {
    called = true;
    EXPECT_FALSE(st.rng_state.empty());
  };
  EXPECT_THROW(learn_dir(catalog, c, hooks), NumericalError);
  EXPECT_TRUE(called);
}

TEST(Telemetry, JsonFields) {
  EpochRecord e{3, 1, 2.5, 0.75, 0.05, 12.0};
  const auto j = e.to_json();
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  EXPECT_EQ(keys, (std::vector<std::string>{"epoch", "round", "train_loss", "valid_auc", "lr", "wall_ms"}));
  EXPECT_EQ(j["valid_auc"], 0.75);
}
