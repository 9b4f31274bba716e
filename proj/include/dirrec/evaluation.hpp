#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dirrec/catalog.hpp"
#include "dirrec/models.hpp"

namespace dirrec {

/// Fills x_{u,q} for every item.
using Scorer = std::function<void(UserIndex, ScoreTarget, std::span<double>)>;
using ItemFilter = std::function<bool(ItemIndex)>;

Scorer model_scorer(const Recommender& model, const Catalog& catalog);

/// Share of negatives ranked below the positive, ties counting one half.
double user_auc(double positive, std::span<const double> negatives);

struct AucOptions {
  ScoreTarget target = ScoreTarget::Test;
  // Users whose held-out item fails this filter are left out.
  ItemFilter positive_filter;
  ItemFilter negative_filter;
  // Seeded per-user subsample of negatives; full average when unset.
  std::optional<std::size_t> sample_cap;
  std::uint64_t sample_seed = 0;
  std::size_t threads = 1;
  // Restrict to these users; all users when unset.
  std::optional<std::vector<UserIndex>> users;
};

struct AucResult {
  std::optional<double> auc;  // nullopt when no user qualified
  std::size_t users = 0;
  std::size_t skipped_no_negatives = 0;
};

/// Leave-one-out average AUC: negatives are items the user never bought.
AucResult auc(const Catalog& catalog, const Scorer& scorer, const AucOptions& options = {});

double validation_auc(const Catalog& catalog, const Recommender& model, std::size_t threads = 1,
                      std::optional<std::size_t> sample_cap = std::nullopt);

AucResult warm_auc(const Catalog& catalog, const Scorer& scorer, std::size_t threads = 1);
/// Users whose test item is cold; negatives are unrestricted.
AucResult cold_auc(const Catalog& catalog, const Scorer& scorer, std::span<const ColdStartLabel> labels,
                   std::size_t threads = 1);

struct SweepPoint {
  double fraction = 0.0;          // requested share of cold test items
  std::optional<double> auc;      // nullopt when the share is unreachable
  double achieved_fraction = 0.0;
  std::size_t users = 0;
};

inline const std::vector<double> kDefaultSweepFractions{0.2, 0.4, 0.6, 0.8, 1.0};

/// Evaluates nested user subsets with a growing share of cold test items.
/// All subsets have the same size; the cold part is a growing prefix of a
/// seeded shuffle of cold-test users and the warm part a shrinking prefix of
/// warm-test users. Without cold items the sweep is the single point (0, AUC).
std::vector<SweepPoint> cold_start_sweep(const Catalog& catalog, const Scorer& scorer,
                                         std::span<const ColdStartLabel> labels,
                                         std::span<const double> fractions, std::uint64_t seed,
                                         std::size_t threads = 1);

struct RankedItem {
  ItemIndex item = 0;
  double score = 0.0;
};

struct AttributeRanking {
  std::vector<RankedItem> explicit_list;
  std::vector<RankedItem> implicit_list;
  std::vector<RankedItem> product_list;
  bool truncated = false;  // K exceeded the candidate count
};

/// Top-K by the first `split` axes, by the remaining axes, and by all axes.
/// Ordering uses sums of log-probabilities; ties go to the lower item index.
AttributeRanking attribute_level_ranking(std::span<const AxisScore> breakdown, const Allocation& allocation,
                                         std::size_t split, std::span<const ItemIndex> candidates,
                                         std::size_t k);

/// Wall time of scoring every user's test candidates.
double inference_seconds(const Catalog& catalog, const Scorer& scorer, std::size_t threads = 1);

struct EvalReport {
  std::optional<double> warm_auc;
  std::optional<double> cold_auc;
  bool has_cold_items = false;
  std::vector<SweepPoint> auc_by_cold_fraction;
  std::size_t parameter_count = 0;
  double inference_seconds = 0.0;
  bool score_cache = false;

  nlohmann::ordered_json to_json() const;
};

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepPoint> sweep);

}  // namespace dirrec
