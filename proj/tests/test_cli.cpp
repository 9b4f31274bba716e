#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dirrec/checkpoint.hpp"
#include "dirrec/synthetic.hpp"
#include "test_support.hpp"

using namespace dirrec;
using dirrec::testing::read_file;
using dirrec::testing::TempDir;
using dirrec::testing::write_file;

namespace {

struct CliResult {
  int code = -1;
  std::string output;
};

CliResult cli(const std::string& args) {
  const std::string cmd = std::string(DIRREC_CLI_PATH) + " " + args + " 2>&1";
  CliResult r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.output.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

std::size_t count_lines(const std::string& text) { return std::count(text.begin(), text.end(), '\n'); }

nlohmann::json parse_json_file(const std::filesystem::path& p) { return nlohmann::json::parse(read_file(p)); }

// Six users over twelve items in three categories; every user buys five to seven.
void write_fixture(const TempDir& dir) {
  std::string items, inter;
  for (int k = 0; k < 12; ++k) {
    items += "i" + std::to_string(k) + "\tClothing/c" + std::to_string(k % 3) + "\t" +
             (k % 4 ? std::to_string(10 + 7 * k) : "NA") + "\n";
  }
  for (int u = 0; u < 6; ++u) {
    for (int t = 0; t < 5 + u % 3; ++t) {
      inter += "u" + std::to_string(u) + "\ti" + std::to_string((u * 5 + t * 7) % 12) + "\t" + std::to_string(t) + "\n";
    }
  }
  write_file(dir / "interactions.tsv", inter);
  write_file(dir / "items.tsv", items);
}

// A DIR-MF checkpoint whose user vectors point at their own test items. Every
// item is bought in training by at least five users; with `cold_users` > 0 an
// extra item appears only as those users' test purchase.
void write_oracle_checkpoint(const TempDir& dir, std::size_t cold_users) {
  const std::size_t users = 12, warm_items = 10;
  const std::size_t items = warm_items + (cold_users ? 1 : 0);
  std::vector<ItemRecord> recs;
  for (std::size_t k = 0; k < items; ++k) recs.push_back({"i" + std::to_string(k), {"c" + std::to_string(k)}, {}});
  std::vector<std::vector<Purchase>> seqs;
  std::vector<std::string> ids;
  for (std::size_t u = 0; u < users; ++u) {
    std::vector<Purchase> s;
    for (std::int64_t t = 0; t < 7; ++t) s.push_back({static_cast<ItemIndex>((u + t) % warm_items), t});
    if (u < cold_users) s.back().item = static_cast<ItemIndex>(warm_items);
    seqs.push_back(std::move(s));
    ids.push_back("u" + std::to_string(u));
  }
  const auto catalog = Catalog::build(ids, recs, seqs);
  catalog.save(dir / "oracle_catalog.json");

  const auto space = AttributeSpace::build(catalog, SpaceOptions{});
  ASSERT_EQ(space.axis(1).size, 1u);
  Allocation alloc(items, 2);
  for (ItemIndex k = 0; k < items; ++k) alloc.set_coordinate(k, 0, space.explicit_coordinate(k, 0));
  AxisTable cat(items, items), imp(1, items);
  for (std::size_t k = 0; k < items; ++k) cat.parameters()(k, k) = 1.0;
  cat.refresh();
  imp.refresh();
  Matrix u(users, items);
  for (UserIndex x = 0; x < users; ++x) u(x, space.explicit_coordinate(catalog.test(x).item, 0)) = 40.0;
  EmbeddingStore store(items, {cat, imp}, u);
  Checkpoint ck;
  ck.config.model.dim = items;
  ck.config.model.hierarchical_category = false;
  ck.catalog_path = (dir / "oracle_catalog.json").string();
  ck.model = std::make_unique<DirMf>(space, alloc, store);
  save_checkpoint(dir / "oracle.ckpt", ck);
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    write_fixture(dir);
    const auto r = cli("ingest --interactions " + q(dir / "interactions.tsv") + " --items " + q(dir / "items.tsv") +
                       " --out " + q(dir / "data"));
    ASSERT_EQ(r.code, 0) << r.output;
  }

  CliResult train(const std::string& extra, const std::string& name) {
    write_file(dir / (name + ".cfg"), "catalog = data/catalog.json\ndim = 4\nmax_epochs_per_estep = 5\n" + extra);
    return cli("train --config " + q(dir / (name + ".cfg")) + " --out " + q(dir / name));
  }

  TempDir dir;
};

}  // namespace

TEST_F(CliTest, IngestWritesSummaryWithFiveFields) {
  const auto s = parse_json_file(dir / "data" / "summary.json");
  EXPECT_EQ(s.size(), 5u);
  EXPECT_EQ(s["users"], 6);
  EXPECT_TRUE(std::filesystem::exists(dir / "data" / "catalog.json"));
}

TEST(Cli, MissingFileExitsWithTwoAndNamesThePath) {
  TempDir dir;
  const auto r = cli("ingest --interactions " + q(dir / "nope.tsv") + " --items " + q(dir / "items.tsv"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("nope.tsv"), std::string::npos);
}

TEST(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
  EXPECT_EQ(cli("export --checkpoint x.ckpt --what pictures").code, 2);
  EXPECT_EQ(cli("train").code, 2);
  EXPECT_EQ(cli("--help").code, 0);
}

TEST(Cli, ConfigErrorsAreListedTogether) {
  TempDir dir;
  write_file(dir / "bad.cfg", "model = nope\npatience = 0\nwhat = 1\n");
  const auto r = cli("train --config " + q(dir / "bad.cfg"));
  EXPECT_EQ(r.code, 2);
  for (const char* part : {"bad.cfg:1", "unknown key 'what'", "patience must be positive", "'catalog' is required"}) {
    EXPECT_NE(r.output.find(part), std::string::npos) << part;
  }
}

TEST_F(CliTest, TrainWritesCheckpointsAndTelemetry) {
  const auto inputs = read_file(dir / "data" / "catalog.json") + read_file(dir / "interactions.tsv");
  const auto r = train("model = dir-mf\n", "mf");
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* f : {"best.ckpt", "final.ckpt", "telemetry.jsonl", "train_summary.json", "config.txt"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / "mf" / f)) << f;
  }
  const auto telemetry = read_file(dir / "mf" / "telemetry.jsonl");
  ASSERT_GT(count_lines(telemetry), 0u);
  const auto first = nlohmann::json::parse(telemetry.substr(0, telemetry.find('\n')));
  for (const char* key : {"epoch", "round", "train_loss", "valid_auc", "lr", "wall_ms"}) EXPECT_TRUE(first.contains(key));
  EXPECT_EQ(read_file(dir / "data" / "catalog.json") + read_file(dir / "interactions.tsv"), inputs);
}

TEST_F(CliTest, TrainIsDeterministic) {
  ASSERT_EQ(train("model = dir-rnn\n", "a").code, 0);
  ASSERT_EQ(train("model = dir-rnn\n", "b").code, 0);
  EXPECT_EQ(read_file(dir / "a" / "final.ckpt"), read_file(dir / "b" / "final.ckpt"));
  auto strip = [](const std::string& text) {
    std::string out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
      auto j = nlohmann::json::parse(line);
      j.erase("wall_ms");
      out += j.dump() + "\n";
    }
    return out;
  };
  EXPECT_EQ(strip(read_file(dir / "a" / "telemetry.jsonl")), strip(read_file(dir / "b" / "telemetry.jsonl")));
}

TEST_F(CliTest, VariantsRun) {
  EXPECT_EQ(train("implicit_axes = 2\nexplicit_axes = []\n", "eminus").code, 0);
  EXPECT_EQ(train("explicit_axes = [category, price]\n", "three").code, 0);
  EXPECT_EQ(train("model = bpr-mf\n", "bpr").code, 0);
  EXPECT_EQ(train("model = augmented-rnn\n", "augrnn").code, 0);
  const auto h = read_checkpoint_header(dir / "three" / "best.ckpt");
  EXPECT_EQ(h["config"]["explicit_axes"].size(), 2u);
}

TEST_F(CliTest, EvaluateAndSweep) {
  ASSERT_EQ(train("", "mf").code, 0);
  const auto r = cli("evaluate --checkpoint " + q(dir / "mf" / "best.ckpt") + " --out " + q(dir / "eval"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto j = parse_json_file(dir / "eval" / "eval.json");
  EXPECT_GE(j["warm_auc"].get<double>(), 0.0);
  EXPECT_LE(j["warm_auc"].get<double>(), 1.0);
  EXPECT_EQ(j["parameter_count"], checkpoint_scalar_count(dir / "mf" / "best.ckpt"));
  const auto csv = read_file(dir / "eval" / "sweep.csv");
  std::size_t reachable = 0;
  for (const auto& p : j["auc_by_cold_fraction"]) reachable += p["auc"].is_number();
  EXPECT_EQ(count_lines(csv), 1 + reachable);
  EXPECT_EQ(csv.rfind("fraction,auc\n", 0), 0u);
}

TEST(Cli, WarmOnPerfectOracleIsOne) {
  TempDir dir;
  write_oracle_checkpoint(dir, 2);
  const auto r = cli("evaluate --warm --checkpoint " + q(dir / "oracle.ckpt") + " --out " + q(dir / "e"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(parse_json_file(dir / "e" / "eval.json")["warm_auc"], 1.0);
  const auto cold = cli("evaluate --cold --checkpoint " + q(dir / "oracle.ckpt") + " --out " + q(dir / "c"));
  ASSERT_EQ(cold.code, 0) << cold.output;
  EXPECT_EQ(parse_json_file(dir / "c" / "eval.json")["cold_auc"], 1.0);
}

TEST(Cli, ColdOnCatalogWithoutColdItemsSaysSo) {
  TempDir dir;
  write_oracle_checkpoint(dir, 0);
  const auto r = cli("evaluate --cold --checkpoint " + q(dir / "oracle.ckpt") + " --out " + q(dir / "e"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(parse_json_file(dir / "e" / "eval.json")["cold_auc"], "no cold items");
  const auto sweep = cli("evaluate --sweep --checkpoint " + q(dir / "oracle.ckpt") + " --out " + q(dir / "s"));
  ASSERT_EQ(sweep.code, 0) << sweep.output;
  EXPECT_EQ(parse_json_file(dir / "s" / "eval.json")["auc_by_cold_fraction"].size(), 1u);
}

TEST_F(CliTest, ExportRowCounts) {
  ASSERT_EQ(train("", "mf").code, 0);
  const auto ckpt = q(dir / "mf" / "best.ckpt");
  ASSERT_EQ(cli("export --what embeddings --checkpoint " + ckpt + " --out " + q(dir / "x")).code, 0);
  ASSERT_EQ(cli("export --what allocation --checkpoint " + ckpt + " --out " + q(dir / "x")).code, 0);
  ASSERT_EQ(cli("export --what rankings -k 2 --users u0,u1 --checkpoint " + ckpt + " --out " + q(dir / "x")).code, 0);
  const auto catalog = Catalog::load(dir / "data" / "catalog.json");
  const auto ck = load_checkpoint(dir / "mf" / "best.ckpt", catalog);
  const auto& model = dynamic_cast<const DirModel&>(*ck.model);
  std::size_t vocab = 0;
  for (std::size_t a = 0; a < model.space().num_axes(); ++a) vocab += model.space().axis(a).size;
  EXPECT_EQ(count_lines(read_file(dir / "x" / "embeddings.csv")), 1 + vocab + catalog.num_users());
  EXPECT_EQ(count_lines(read_file(dir / "x" / "allocation.csv")), 1 + catalog.num_items());
  EXPECT_EQ(count_lines(read_file(dir / "x" / "rankings.csv")), 1 + 2u * 3 * 2);
}

TEST_F(CliTest, RankingsForTopFive) {
  ASSERT_EQ(train("", "mf").code, 0);
  ASSERT_EQ(cli("export --what rankings -k 5 --users u3 --checkpoint " + q(dir / "mf" / "best.ckpt") + " --out " +
                q(dir / "x"))
                .code,
            0);
  EXPECT_EQ(count_lines(read_file(dir / "x" / "rankings.csv")), 1u + 15);
}

TEST_F(CliTest, ReallocateWritesANewCheckpoint) {
  ASSERT_EQ(train("", "mf").code, 0);
  const auto r = cli("reallocate --checkpoint " + q(dir / "mf" / "final.ckpt") + " --out " + q(dir / "r"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto j = parse_json_file(dir / "r" / "reallocation.json");
  EXPECT_LE(j["loss_after"].get<double>(), j["loss_before"].get<double>());
  EXPECT_TRUE(std::filesystem::exists(dir / "r" / "reallocated.ckpt"));
  ASSERT_EQ(train("model = bpr-mf\n", "bpr").code, 0);
  EXPECT_EQ(cli("reallocate --checkpoint " + q(dir / "bpr" / "final.ckpt") + " --out " + q(dir / "r2")).code, 2);
}

TEST_F(CliTest, CorruptCheckpointReportsVersion) {
  ASSERT_EQ(train("", "mf").code, 0);
  auto bytes = read_file(dir / "mf" / "best.ckpt");
  const auto key = bytes.find("\"version\"");
  bytes[bytes.find('1', key)] = '9';
  write_file(dir / "bad.ckpt", bytes);
  const auto r = cli("evaluate --checkpoint " + q(dir / "bad.ckpt"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("version 9"), std::string::npos);
}

TEST(Cli, SynthWritesCatalogAndPlantedLabels) {
  TempDir dir;
  const auto r = cli("synth --users 30 --num-groups 3 --group-size 4 --interactions 5 --seed 2 --out " + q(dir.path()));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(Catalog::load(dir / "catalog.json").num_items(), 12u);
  EXPECT_EQ(count_lines(read_file(dir / "planted.csv")), 13u);
}
