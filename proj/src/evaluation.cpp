#include "dirrec/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <spdlog/spdlog.h>

namespace dirrec {
namespace {

ItemIndex held_out_item(const Catalog& catalog, UserIndex u, ScoreTarget target) {
  return target == ScoreTarget::Test ? catalog.test(u).item : catalog.validation(u).item;
}

std::uint64_t user_seed(std::uint64_t seed, UserIndex u) {
  return seed ^ (0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(u) + 1));
}

double log_or_floor(double p) {
  return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
}

std::vector<RankedItem> top_k(std::span<const ItemIndex> candidates, std::span<const double> keys,
                              std::size_t k) {
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (keys[a] != keys[b]) return keys[a] > keys[b];
    return candidates[a] < candidates[b];
  });
  std::vector<RankedItem> out;
  for (std::size_t r = 0; r < std::min(k, order.size()); ++r) {
    out.push_back({candidates[order[r]], std::exp(keys[order[r]])});
  }
  return out;
}

}  // namespace

Scorer model_scorer(const Recommender& model, const Catalog& catalog) {
  return [&model, &catalog](UserIndex u, ScoreTarget t, std::span<double> out) {
    model.score_items(catalog, u, t, out);
  };
}

double user_auc(double positive, std::span<const double> negatives) {
  if (negatives.empty()) throw std::invalid_argument("AUC needs at least one negative");
  double credit = 0.0;
  for (double n : negatives) {
    if (positive > n) credit += 1.0;
    else if (positive == n) credit += 0.5;
  }
  return credit / static_cast<double>(negatives.size());
}

AucResult auc(const Catalog& catalog, const Scorer& scorer, const AucOptions& options) {
  std::vector<UserIndex> users;
  if (options.users) {
    users = *options.users;
  } else {
    users.resize(catalog.num_users());
    std::iota(users.begin(), users.end(), 0);
  }
  constexpr double kSkipped = -1.0, kFiltered = -2.0;
  std::vector<double> per_user(users.size(), kFiltered);
  parallel_for(users.size(), options.threads, [&](std::size_t i) {
    const UserIndex u = users[i];
    const ItemIndex positive = held_out_item(catalog, u, options.target);
    if (options.positive_filter && !options.positive_filter(positive)) return;
    std::vector<double> scores(catalog.num_items());
    scorer(u, options.target, scores);
    const auto bought = catalog.purchased(u);
    std::vector<double> negatives;
    std::size_t b = 0;
    for (ItemIndex q = 0; q < catalog.num_items(); ++q) {
      while (b < bought.size() && bought[b] < q) ++b;
      if (b < bought.size() && bought[b] == q) continue;
      if (options.negative_filter && !options.negative_filter(q)) continue;
      negatives.push_back(scores[q]);
    }
    if (negatives.empty()) {
      per_user[i] = kSkipped;
      return;
    }
    if (options.sample_cap && negatives.size() > *options.sample_cap) {
      Rng rng(user_seed(options.sample_seed, u));
      for (std::size_t k = 0; k < *options.sample_cap; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, negatives.size() - 1);
        std::swap(negatives[k], negatives[pick(rng)]);
      }
      negatives.resize(*options.sample_cap);
    }
    per_user[i] = user_auc(scores[positive], negatives);
  });
  AucResult result;
  double total = 0.0;
  for (std::size_t i = 0; i < users.size(); ++i) {
    if (per_user[i] == kFiltered) continue;
    if (per_user[i] == kSkipped) {
      spdlog::warn("user {} has no negative items; skipped", catalog.user_id(users[i]));
      ++result.skipped_no_negatives;
      continue;
    }
    total += per_user[i];
    ++result.users;
  }
  if (result.users) result.auc = total / static_cast<double>(result.users);
  return result;
}

double validation_auc(const Catalog& catalog, const Recommender& model, std::size_t threads,
                      std::optional<std::size_t> sample_cap) {
  AucOptions o;
  o.target = ScoreTarget::Validation;
  o.threads = threads;
  o.sample_cap = sample_cap;
  return auc(catalog, model_scorer(model, catalog), o).auc.value_or(0.5);
}

AucResult warm_auc(const Catalog& catalog, const Scorer& scorer, std::size_t threads) {
  AucOptions o;
  o.threads = threads;
  return auc(catalog, scorer, o);
}

AucResult cold_auc(const Catalog& catalog, const Scorer& scorer, std::span<const ColdStartLabel> labels,
                   std::size_t threads) {
  AucOptions o;
  o.threads = threads;
  o.positive_filter = [labels](ItemIndex q) { return labels[q].is_cold; };
  return auc(catalog, scorer, o);
}

std::vector<SweepPoint> cold_start_sweep(const Catalog& catalog, const Scorer& scorer,
                                         std::span<const ColdStartLabel> labels,
                                         std::span<const double> fractions, std::uint64_t seed,
                                         std::size_t threads) {
  std::vector<UserIndex> cold, warm;
  for (UserIndex u = 0; u < catalog.num_users(); ++u) {
    (labels[catalog.test(u).item].is_cold ? cold : warm).push_back(u);
  }
  auto evaluate = [&](std::vector<UserIndex> users) {
    AucOptions o;
    o.threads = threads;
    o.users = std::move(users);
    return auc(catalog, scorer, o).auc;
  };
  if (cold.empty()) {
    SweepPoint p;
    p.auc = evaluate(warm);
    p.users = warm.size();
    return {p};
  }
  Rng rng(seed);
  std::shuffle(cold.begin(), cold.end(), rng);
  std::shuffle(warm.begin(), warm.end(), rng);

  auto reachable = [&](double f) { return (f <= 0.0 || !cold.empty()) && (f >= 1.0 || !warm.empty()); };
  // Largest common subset size that every reachable fraction fits into.
  std::size_t n = cold.size() + warm.size();
  for (double f : fractions) {
    if (!reachable(f)) continue;
    if (f > 0.0) n = std::min(n, static_cast<std::size_t>(std::floor(cold.size() / f + 1e-9)));
    if (f < 1.0) n = std::min(n, static_cast<std::size_t>(std::floor(warm.size() / (1.0 - f) + 1e-9)));
  }
  std::vector<SweepPoint> out;
  for (double f : fractions) {
    SweepPoint p;
    p.fraction = f;
    if (f < 0.0 || f > 1.0) throw std::invalid_argument("sweep fraction outside [0, 1]");
    const auto c = static_cast<std::size_t>(std::llround(f * static_cast<double>(n)));
    const std::size_t w = n - std::min(c, n);
    const bool ok = reachable(f) && n > 0 && c <= cold.size() && w <= warm.size() &&
                    (f <= 0.0 || c > 0) && (f >= 1.0 || w > 0);
    if (ok) {
      std::vector<UserIndex> subset(cold.begin(), cold.begin() + static_cast<std::ptrdiff_t>(c));
      subset.insert(subset.end(), warm.begin(), warm.begin() + static_cast<std::ptrdiff_t>(w));
      std::sort(subset.begin(), subset.end());
      p.users = subset.size();
      p.achieved_fraction = static_cast<double>(c) / static_cast<double>(n);
      p.auc = evaluate(std::move(subset));
    }
    out.push_back(p);
  }
  return out;
}

AttributeRanking attribute_level_ranking(std::span<const AxisScore> breakdown, const Allocation& allocation,
                                         std::size_t split, std::span<const ItemIndex> candidates,
                                         std::size_t k) {
  if (split > breakdown.size()) throw std::invalid_argument("axis split beyond the axis count");
  std::vector<double> first(candidates.size(), 0.0), second(candidates.size(), 0.0);
  std::vector<double> all(candidates.size(), 0.0);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    for (std::size_t a = 0; a < breakdown.size(); ++a) {
      const double lp = log_or_floor(breakdown[a].probabilities[allocation.coordinate(candidates[i], a)]);
      (a < split ? first : second)[i] += lp;
      all[i] += lp;
    }
  }
  AttributeRanking r;
  r.truncated = k > candidates.size();
  r.explicit_list = top_k(candidates, first, k);
  r.implicit_list = top_k(candidates, second, k);
  r.product_list = top_k(candidates, all, k);
  return r;
}

double inference_seconds(const Catalog& catalog, const Scorer& scorer, std::size_t threads) {
  const auto start = std::chrono::steady_clock::now();
  parallel_for(catalog.num_users(), threads, [&](std::size_t u) {
    std::vector<double> scores(catalog.num_items());
    scorer(static_cast<UserIndex>(u), ScoreTarget::Test, scores);
  });
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["warm_auc"] = warm_auc ? nlohmann::ordered_json(*warm_auc) : nlohmann::ordered_json(nullptr);
  if (cold_auc) j["cold_auc"] = *cold_auc;
  else j["cold_auc"] = has_cold_items ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json("no cold items");
  auto sweep = nlohmann::ordered_json::array();
  for (const auto& p : auc_by_cold_fraction) {
    nlohmann::ordered_json e;
    e["fraction"] = p.fraction;
    e["auc"] = p.auc ? nlohmann::ordered_json(*p.auc) : nlohmann::ordered_json("unreachable");
    e["achieved_fraction"] = p.achieved_fraction;
    e["users"] = p.users;
    sweep.push_back(e);
  }
  j["auc_by_cold_fraction"] = sweep;
  j["parameter_count"] = parameter_count;
  j["inference_seconds"] = inference_seconds;
  j["score_cache"] = score_cache;
  return j;
}

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepPoint> sweep) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << "fraction,auc\n";
  for (const auto& p : sweep) {
    if (p.auc) out << p.fraction << ',' << *p.auc << '\n';
  }
}

}  // namespace dirrec
