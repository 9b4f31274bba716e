#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "dirrec/catalog.hpp"
#include "dirrec/checkpoint.hpp"
#include "dirrec/config.hpp"
#include "dirrec/evaluation.hpp"
#include "dirrec/log.hpp"
#include "dirrec/synthetic.hpp"
#include "dirrec/trainer.hpp"

namespace fs = std::filesystem;
using namespace dirrec;

namespace {

// Raised for bad flag combinations detected after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Shared {
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> threads;
};

void add_shared(CLI::App* cmd, Shared& s, const std::string& default_out) {
  s.out = default_out;
  cmd->add_option("--seed", s.seed, "Random seed");
  cmd->add_option("--out", s.out, "Output directory")->capture_default_str();
  cmd->add_option("--threads", s.threads, "Worker threads")->check(CLI::PositiveNumber);
}

fs::path prepare_out(const std::string& out) {
  fs::path p(out);
  fs::create_directories(p);
  return p;
}

void write_json(const fs::path& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw InputError(what + " not found: " + p.string());
}

Catalog load_catalog_checked(const fs::path& p) {
  require_file(p, "catalog");
  return Catalog::load(p);
}

struct Loaded {
  Catalog catalog;
  Checkpoint checkpoint;
};

Loaded load_model(const std::string& checkpoint_path, const std::string& catalog_override) {
  require_file(checkpoint_path, "checkpoint");
  const auto header = read_checkpoint_header(checkpoint_path);
  const std::string catalog_path =
      catalog_override.empty() ? header.at("catalog_path").get<std::string>() : catalog_override;
  Loaded l;
  l.catalog = load_catalog_checked(catalog_path);
  l.checkpoint = load_checkpoint(checkpoint_path, l.catalog);
  return l;
}

// ---- ingest ----------------------------------------------------------------

struct IngestArgs {
  Shared shared;
  std::string interactions, items;
  std::optional<double> sample_fraction;
};

int cmd_ingest(const IngestArgs& a) {
  require_file(a.interactions, "interaction file");
  require_file(a.items, "item file");
  IngestOptions o;
  o.sample_fraction = a.sample_fraction;
  o.seed = a.shared.seed.value_or(0);
  const auto catalog = ingest(a.interactions, a.items, o);
  const auto out = prepare_out(a.shared.out);
  catalog.save(out / "catalog.json");
  const auto summary = summarize(catalog).to_json();
  write_json(out / "summary.json", summary);
  std::cout << summary.dump(2) << "\n";
  return 0;
}

// ---- synth -----------------------------------------------------------------

struct SynthArgs {
  Shared shared;
  SyntheticOptions options;
  std::vector<std::size_t> groups;
  std::size_t num_groups = 10, group_size = 10;
};

int cmd_synth(SynthArgs a) {
  a.options.group_sizes = a.groups.empty() ? std::vector<std::size_t>(a.num_groups, a.group_size) : a.groups;
  a.options.seed = a.shared.seed.value_or(0);
  const auto s = make_synthetic_catalog(a.options);
  const auto out = prepare_out(a.shared.out);
  s.catalog.save(out / "catalog.json");
  std::ofstream planted(out / "planted.csv");
  planted << "item_id,implicit\n";
  for (ItemIndex q = 0; q < s.planted.size(); ++q) planted << s.catalog.item(q).id << ',' << s.planted[q] << '\n';
  std::cout << summarize(s.catalog).to_json().dump(2) << "\n";
  return 0;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  Shared shared;
  std::string config;
};

int cmd_train(const TrainArgs& a) {
  require_file(a.config, "config");
  auto run = load_config(a.config);
  if (a.shared.seed) run.train.seed = *a.shared.seed;
  if (a.shared.threads) run.train.threads = *a.shared.threads;
  if (!a.shared.out.empty()) run.out = a.shared.out;
  const auto catalog = load_catalog_checked(run.catalog);
  const auto out = prepare_out(run.out);
  {
    std::ofstream cfg(out / "config.txt");
    cfg << to_config_text(run);
  }
  std::ofstream telemetry(out / "telemetry.jsonl");
  std::ofstream reallocations(out / "reallocations.jsonl");

  auto make_checkpoint = [&](const Recommender& model, const TrainState& st) {
    Checkpoint ck;
    ck.config = run.train;
    ck.catalog_path = fs::absolute(run.catalog).string();
    ck.model = model.clone();
    ck.rng_state = st.rng_state;
    if (st.best_valid_auc >= 0.0) ck.best_valid_auc = st.best_valid_auc;
    ck.epoch = st.epoch;
    ck.round = st.round;
    return ck;
  };

  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& r) { telemetry << r.to_json().dump() << "\n" << std::flush; };
  hooks.on_reallocation = [&](const ReallocationRecord& r) {
    reallocations << r.to_json().dump() << "\n" << std::flush;
  };
  hooks.on_abort = [&](const Recommender& model, const TrainState& st) {
    try {
      auto ck = make_checkpoint(model, st);
      save_checkpoint(out / "aborted.ckpt", ck);
      spdlog::error("training aborted; state written to {}", (out / "aborted.ckpt").string());
    } catch (const std::exception& e) {
      spdlog::error("could not save the aborted state: {}", e.what());
    }
  };

  auto result = learn_dir(catalog, run.train, hooks);
  auto best = make_checkpoint(*result.best, result.state);
  auto final_ck = make_checkpoint(*result.final_model, result.state);
  save_checkpoint(out / "best.ckpt", best);
  save_checkpoint(out / "final.ckpt", final_ck);

  nlohmann::ordered_json summary;
  summary["model"] = to_string(run.train.model.kind);
  summary["best_valid_auc"] = result.state.best_valid_auc;
  summary["best_epoch"] = result.state.best_epoch;
  summary["best_round"] = result.state.best_round;
  summary["epochs"] = result.state.epoch;
  summary["reallocations"] = result.state.round;
  summary["parameter_count"] = result.best->parameter_count();
  write_json(out / "train_summary.json", summary);
  std::cout << summary.dump(2) << "\n";
  return 0;
}

// ---- evaluate --------------------------------------------------------------

struct EvaluateArgs {
  Shared shared;
  std::string checkpoint, catalog;
  bool warm = false, cold = false, sweep = false;
  std::vector<double> fractions = kDefaultSweepFractions;
  std::optional<std::size_t> sample_cap;
};

int cmd_evaluate(const EvaluateArgs& a) {
  auto l = load_model(a.checkpoint, a.catalog);
  const std::size_t threads = a.shared.threads.value_or(l.checkpoint.config.threads);
  const bool all = !a.warm && !a.cold && !a.sweep;
  const auto scorer = model_scorer(*l.checkpoint.model, l.catalog);
  const auto labels = label_cold_start(l.catalog);

  EvalReport report;
  report.parameter_count = l.checkpoint.model->parameter_count();
  for (const auto& lab : labels) {
    if (lab.is_cold) report.has_cold_items = true;
  }
  if (a.warm || all) {
    AucOptions o;
    o.threads = threads;
    o.sample_cap = a.sample_cap;
    o.sample_seed = a.shared.seed.value_or(l.checkpoint.config.seed);
    report.warm_auc = auc(l.catalog, scorer, o).auc;
    report.inference_seconds = inference_seconds(l.catalog, scorer, threads);
  }
  if (a.cold || all) {
    if (report.has_cold_items) report.cold_auc = cold_auc(l.catalog, scorer, labels, threads).auc;
  }
  const auto out = prepare_out(a.shared.out);
  if (a.sweep || all) {
    report.auc_by_cold_fraction = cold_start_sweep(l.catalog, scorer, labels, a.fractions,
                                                   a.shared.seed.value_or(l.checkpoint.config.seed), threads);
    write_sweep_csv(out / "sweep.csv", report.auc_by_cold_fraction);
  }
  const auto j = report.to_json();
  write_json(out / "eval.json", j);
  std::cout << j.dump(2) << "\n";
  return 0;
}

// ---- reallocate ------------------------------------------------------------

struct ReallocateArgs {
  Shared shared;
  std::string checkpoint, catalog;
};

int cmd_reallocate(const ReallocateArgs& a) {
  auto l = load_model(a.checkpoint, a.catalog);
  auto* dir = dynamic_cast<DirModel*>(l.checkpoint.model.get());
  if (!dir) throw UsageError("reallocate needs a DIR model, checkpoint holds " + to_string(l.checkpoint.model->kind()));
  const std::size_t threads = a.shared.threads.value_or(l.checkpoint.config.threads);
  auto rec = reallocation_step(*dir, l.catalog, threads);
  rec.round = ++l.checkpoint.round;
  rec.epoch = l.checkpoint.epoch;
  const auto out = prepare_out(a.shared.out);
  save_checkpoint(out / "reallocated.ckpt", l.checkpoint);
  auto j = rec.to_json();
  j["valid_auc"] = validation_auc(l.catalog, *dir, threads, l.checkpoint.config.valid_sample_cap);
  write_json(out / "reallocation.json", j);
  std::cout << j.dump(2) << "\n";
  return 0;
}

// ---- export ----------------------------------------------------------------

struct ExportArgs {
  Shared shared;
  std::string checkpoint, catalog, what;
  std::vector<std::string> users;
  std::size_t k = 5;
};

void write_rows(std::ostream& out, const std::string& table, const std::vector<std::string>& labels,
                const Matrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    out << table << ',' << r << ',' << labels[r];
    for (double v : m.row(r)) out << ',' << v;
    out << '\n';
  }
}

std::vector<std::string> axis_labels(const Catalog& catalog, const std::string& kind, std::size_t n) {
  std::vector<std::string> labels;
  for (std::size_t v = 0; v < n; ++v) {
    if (kind == "category") labels.push_back(catalog.category_leaf_name(v));
    else if (kind == "price") labels.push_back(v == kMissingPriceBucket ? "missing" : "bucket" + std::to_string(v));
    else labels.push_back(kind + ":" + std::to_string(v));
  }
  return labels;
}

int cmd_export(const ExportArgs& a) {
  auto l = load_model(a.checkpoint, a.catalog);
  const auto& catalog = l.catalog;
  auto& model = *l.checkpoint.model;
  auto* dir = dynamic_cast<DirModel*>(&model);
  const auto out = prepare_out(a.shared.out);

  if (a.what == "embeddings") {
    std::ofstream f(out / "embeddings.csv");
    f.precision(17);
    f << "table,index,label,vector...\n";
    std::vector<std::string> user_labels;
    for (UserIndex u = 0; u < catalog.num_users(); ++u) user_labels.push_back(catalog.user_id(u));
    if (dir) {
      for (std::size_t ax = 0; ax < dir->space().num_axes(); ++ax) {
        const auto& axis = dir->space().axis(ax);
        const std::string kind = axis.kind == AxisKind::Category ? "category"
                                 : axis.kind == AxisKind::Price  ? "price"
                                                                 : axis.name;
        write_rows(f, axis.name, axis_labels(catalog, kind, axis.size), dir->store().axis(ax).values());
      }
      if (model.kind() == ModelKind::DirMf) write_rows(f, "users", user_labels, dir->store().users());
    } else {
      for (auto& t : model.parameter_tables()) {
        if (t.name.rfind("rnn/", 0) == 0) continue;
        std::vector<std::string> labels;
        for (std::size_t r = 0; r < t.matrix->rows(); ++r) {
          if (t.name == "users") labels.push_back(catalog.user_id(static_cast<UserIndex>(r)));
          else if (t.name == "items") labels.push_back(catalog.item(static_cast<ItemIndex>(r)).id);
          else labels.push_back(std::to_string(r));
        }
        write_rows(f, t.name, labels, *t.matrix);
      }
    }
    return 0;
  }
  if (!dir) throw UsageError(a.what + " export needs a DIR model, checkpoint holds " + to_string(model.kind()));
  if (a.what == "allocation") {
    std::ofstream f(out / "allocation.csv");
    f << "item_id";
    for (std::size_t ax = 0; ax < dir->space().num_axes(); ++ax) f << ",axis_" << ax;
    f << '\n';
    for (ItemIndex q = 0; q < catalog.num_items(); ++q) {
      f << catalog.item(q).id;
      for (auto v : dir->allocation().cell(q)) f << ',' << v;
      f << '\n';
    }
    return 0;
  }
  // rankings
  std::vector<UserIndex> users;
  for (const auto& id : a.users) {
    auto u = catalog.find_user(id);
    if (!u) throw InputError("unknown user '" + id + "'");
    users.push_back(*u);
  }
  if (users.empty() && catalog.num_users()) users.push_back(0);
  const std::size_t split = std::max<std::size_t>(1, dir->space().num_explicit());
  std::ofstream f(out / "rankings.csv");
  f.precision(6);
  f << "user_id,rank,item_id,axis_breakdown\n";
  for (auto u : users) {
    const auto breakdown = dir->axis_breakdown(catalog, u, ScoreTarget::Test);
    auto seen = history(catalog, u, ScoreTarget::Test);
    std::sort(seen.begin(), seen.end());
    std::vector<ItemIndex> candidates;
    for (ItemIndex q = 0; q < catalog.num_items(); ++q) {
      if (!std::binary_search(seen.begin(), seen.end(), q)) candidates.push_back(q);
    }
    const auto r = attribute_level_ranking(breakdown, dir->allocation(), split, candidates, a.k);
    if (r.truncated) spdlog::warn("user {}: only {} candidates for K={}", catalog.user_id(u), candidates.size(), a.k);
    auto emit = [&](const char* list, const std::vector<RankedItem>& items) {
      for (std::size_t i = 0; i < items.size(); ++i) {
        const auto q = items[i].item;
        f << catalog.user_id(u) << ',' << i + 1 << ',' << catalog.item(q).id << ",list=" << list;
        for (std::size_t ax = 0; ax < breakdown.size(); ++ax) {
          f << ';' << dir->space().axis(ax).name << '=' << breakdown[ax].probabilities[dir->allocation().coordinate(q, ax)];
        }
        f << ";score=" << items[i].score << '\n';
      }
    };
    emit("explicit", r.explicit_list);
    emit("implicit", r.implicit_list);
    emit("product", r.product_list);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  init_logging();
  CLI::App app{"Disentangled item representation recommender"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "dirrec 1.0");

  IngestArgs ingest_args;
  auto* ingest_cmd = app.add_subcommand("ingest", "Build a catalog from interaction and item files");
  ingest_cmd->add_option("--interactions", ingest_args.interactions, "user<TAB>item<TAB>timestamp file")->required();
  ingest_cmd->add_option("--items", ingest_args.items, "item<TAB>category/path<TAB>price file")->required();
  ingest_cmd->add_option("--sample-fraction", ingest_args.sample_fraction, "Keep this share of users")
      ->check(CLI::Range(0.0, 1.0));
  add_shared(ingest_cmd, ingest_args.shared, ".");

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a catalog with planted implicit structure");
  synth_cmd->add_option("--users", synth_args.options.num_users)->capture_default_str();
  synth_cmd->add_option("--num-groups", synth_args.num_groups)->capture_default_str();
  synth_cmd->add_option("--group-size", synth_args.group_size)->capture_default_str();
  synth_cmd->add_option("--groups", synth_args.groups, "Explicit group sizes (overrides the two above)")->delimiter(',');
  synth_cmd->add_option("--interactions", synth_args.options.interactions_per_user)->capture_default_str();
  synth_cmd->add_option("--beta", synth_args.options.beta)->capture_default_str();
  synth_cmd->add_option("--category-weight", synth_args.options.category_weight)->capture_default_str();
  synth_cmd->add_option("--popularity-skew", synth_args.options.popularity_skew)->capture_default_str();
  add_shared(synth_cmd, synth_args.shared, ".");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Run LearnDIR or a baseline from a config file");
  train_cmd->add_option("--config", train_args.config)->required();
  add_shared(train_cmd, train_args.shared, "");

  EvaluateArgs eval_args;
  auto* eval_cmd = app.add_subcommand("evaluate", "Leave-one-out AUC of a checkpoint");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint)->required();
  eval_cmd->add_option("--catalog", eval_args.catalog, "Override the catalog path stored in the checkpoint");
  eval_cmd->add_flag("--warm", eval_args.warm);
  eval_cmd->add_flag("--cold", eval_args.cold);
  eval_cmd->add_flag("--sweep", eval_args.sweep);
  eval_cmd->add_option("--fractions", eval_args.fractions)->delimiter(',');
  eval_cmd->add_option("--sample-cap", eval_args.sample_cap, "Negatives sampled per user")->check(CLI::PositiveNumber);
  add_shared(eval_cmd, eval_args.shared, ".");

  ReallocateArgs realloc_args;
  auto* realloc_cmd = app.add_subcommand("reallocate", "One R-step on a DIR checkpoint");
  realloc_cmd->add_option("--checkpoint", realloc_args.checkpoint)->required();
  realloc_cmd->add_option("--catalog", realloc_args.catalog);
  add_shared(realloc_cmd, realloc_args.shared, ".");

  ExportArgs export_args;
  auto* export_cmd = app.add_subcommand("export", "Write embeddings, allocation or rankings as CSV");
  export_cmd->add_option("--checkpoint", export_args.checkpoint)->required();
  export_cmd->add_option("--catalog", export_args.catalog);
  export_cmd->add_option("--what", export_args.what)
      ->required()
      ->check(CLI::IsMember({"embeddings", "allocation", "rankings"}));
  export_cmd->add_option("--users", export_args.users, "User ids for rankings")->delimiter(',');
  export_cmd->add_option("-k,--top", export_args.k)->capture_default_str();
  add_shared(export_cmd, export_args.shared, ".");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*ingest_cmd) return cmd_ingest(ingest_args);
    if (*synth_cmd) return cmd_synth(synth_args);
    if (*train_cmd) return cmd_train(train_args);
    if (*eval_cmd) return cmd_evaluate(eval_args);
    if (*realloc_cmd) return cmd_reallocate(realloc_args);
    if (*export_cmd) return cmd_export(export_args);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
