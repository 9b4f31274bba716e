#include <gtest/gtest.h>

#include "dirrec/checkpoint.hpp"
#include "dirrec/config.hpp"
#include "dirrec/evaluation.hpp"
#include "dirrec/synthetic.hpp"
#include "test_support.hpp"

using namespace dirrec;
using dirrec::testing::read_file;
using dirrec::testing::TempDir;
using dirrec::testing::write_file;

namespace {

Catalog fixture(std::uint64_t seed = 1) {
  SyntheticOptions o;
  o.num_users = 40;
  o.group_sizes = {4, 5, 3};
  o.interactions_per_user = 6;
  o.seed = seed;
  return make_synthetic_catalog(o).catalog;
}

Checkpoint trained(const Catalog& catalog, ModelKind kind) {
  TrainConfig c;
  c.model.kind = kind;
  c.model.dim = 4;
  c.max_epochs_per_estep = 4;
  c.max_reallocations = 2;
  if (kind == ModelKind::AugmentedMf || kind == ModelKind::AugmentedRnn) {
    c.model.space.explicit_axes = {ExplicitAttribute::Category, ExplicitAttribute::Price};
  }
  auto r = learn_dir(catalog, c);
  Checkpoint ck;
  ck.config = c;
  ck.catalog_path = "/data/catalog.json";
  ck.model = std::move(r.best);
  ck.rng_state = r.state.rng_state;
  ck.best_valid_auc = r.state.best_valid_auc;
  ck.epoch = r.state.epoch;
  ck.round = r.state.round;
  return ck;
}

std::vector<double> flatten(Recommender& m) {
  std::vector<double> out;
  for (auto& t : m.parameter_tables()) out.insert(out.end(), t.matrix->values().begin(), t.matrix->values().end());
  return out;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExactForEveryModel) {
  const auto catalog = fixture();
  TempDir dir;
  for (auto kind : {ModelKind::DirMf, ModelKind::DirRnn, ModelKind::BprMf, ModelKind::AugmentedMf,
                    ModelKind::AugmentedRnn}) {
    auto ck = trained(catalog, kind);
    const auto path = dir / (to_string(kind) + ".ckpt");
    save_checkpoint(path, ck);
    auto back = load_checkpoint(path, catalog);
    EXPECT_EQ(back.model->kind(), kind);
    EXPECT_EQ(flatten(*back.model), flatten(*ck.model));
    EXPECT_EQ(validation_auc(catalog, *back.model), validation_auc(catalog, *ck.model));
    EXPECT_EQ(*auc(catalog, model_scorer(*back.model, catalog)).auc, *auc(catalog, model_scorer(*ck.model, catalog)).auc);
    EXPECT_EQ(back.rng_state, ck.rng_state);
    EXPECT_EQ(back.best_valid_auc, ck.best_valid_auc);
    EXPECT_EQ(back.epoch, ck.epoch);
    EXPECT_EQ(back.round, ck.round);
    EXPECT_EQ(back.catalog_path, ck.catalog_path);
    EXPECT_EQ(to_json(back.config), to_json(ck.config));
    if (auto* d = dynamic_cast<DirModel*>(ck.model.get())) {
      EXPECT_EQ(dynamic_cast<DirModel&>(*back.model).allocation(), d->allocation());
    }
    // Saving the loaded checkpoint reproduces the file byte for byte.
    const auto again = dir / "again.ckpt";
    save_checkpoint(again, back);
    EXPECT_EQ(read_file(again), read_file(path));
  }
}

TEST(Checkpoint, ScalarCountEqualsParameterCount) {
  const auto catalog = fixture();
  TempDir dir;
  for (auto kind : {ModelKind::DirMf, ModelKind::DirRnn, ModelKind::BprMf}) {
    auto ck = trained(catalog, kind);
    save_checkpoint(dir / "m.ckpt", ck);
    EXPECT_EQ(checkpoint_scalar_count(dir / "m.ckpt"), ck.model->parameter_count());
  }
}

TEST(Checkpoint, HeaderIsReadable) {
  const auto catalog = fixture();
  TempDir dir;
  auto ck = trained(catalog, ModelKind::DirMf);
  save_checkpoint(dir / "m.ckpt", ck);
  const auto h = read_checkpoint_header(dir / "m.ckpt");
  EXPECT_EQ(h["version"], kCheckpointVersion);
  EXPECT_EQ(h["model"], "dir-mf");
  EXPECT_EQ(h["config"]["dim"], 4);
}

TEST(Checkpoint, BadMagicIsRejected) {
  TempDir dir;
  write_file(dir / "x.ckpt", "NOTACKPT\x00\x00");
  try {
    read_checkpoint_header(dir / "x.ckpt");
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("bad magic"), std::string::npos);
  }
  EXPECT_THROW(read_checkpoint_header(dir / "missing.ckpt"), InputError);
}

TEST(Checkpoint, VersionMismatchIsRejected) {
  const auto catalog = fixture();
  TempDir dir;
  auto ck = trained(catalog, ModelKind::DirMf);
  save_checkpoint(dir / "m.ckpt", ck);
  auto bytes = read_file(dir / "m.ckpt");
  const auto key = bytes.find("\"version\"");
  ASSERT_NE(key, std::string::npos);
  const auto at = bytes.find('1', key);
  ASSERT_LT(at, key + 12);
  bytes[at] = '7';
  write_file(dir / "v7.ckpt", bytes);
  try {
    load_checkpoint(dir / "v7.ckpt", catalog);
    FAIL();
  } catch (const InputError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("version 7"), std::string::npos);
    EXPECT_NE(msg.find("version 1"), std::string::npos);
  }
}

TEST(Checkpoint, TruncationAndTrailingBytesAreRejected) {
  const auto catalog = fixture();
  TempDir dir;
  auto ck = trained(catalog, ModelKind::DirRnn);
  save_checkpoint(dir / "m.ckpt", ck);
  const auto bytes = read_file(dir / "m.ckpt");
  write_file(dir / "short.ckpt", bytes.substr(0, bytes.size() - 5));
  EXPECT_THROW(load_checkpoint(dir / "short.ckpt", catalog), InputError);
  write_file(dir / "long.ckpt", bytes + "x");
  EXPECT_THROW(load_checkpoint(dir / "long.ckpt", catalog), InputError);
}

TEST(Checkpoint, OtherCatalogIsRejected) {
  const auto catalog = fixture();
  TempDir dir;
  auto ck = trained(catalog, ModelKind::DirMf);
  save_checkpoint(dir / "m.ckpt", ck);
  SyntheticOptions o;
  o.num_users = 40;
  o.group_sizes = {4, 5, 3, 2};
  o.interactions_per_user = 6;
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt", make_synthetic_catalog(o).catalog), InputError);
}
