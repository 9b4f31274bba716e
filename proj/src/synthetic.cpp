#include "dirrec/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dirrec/assignment.hpp"

namespace dirrec {

SyntheticCatalog make_synthetic_catalog(const SyntheticOptions& o) {
  if (o.num_users == 0 || o.group_sizes.empty()) throw std::invalid_argument("empty synthetic catalog");
  if (o.interactions_per_user < 3) throw std::invalid_argument("users need at least 3 purchases");
  Rng rng(o.seed);
  SyntheticCatalog s;

  std::vector<ItemRecord> items;
  std::vector<std::uint32_t> item_group;
  std::size_t widest = 0;
  for (std::size_t g = 0; g < o.group_sizes.size(); ++g) {
    if (o.group_sizes[g] == 0) throw std::invalid_argument("empty synthetic group");
    widest = std::max(widest, o.group_sizes[g]);
    for (std::size_t k = 0; k < o.group_sizes[g]; ++k) {
      ItemRecord r;
      r.id = "i" + std::to_string(items.size());
      r.category_path = {"c" + std::to_string(g)};
      items.push_back(std::move(r));
      item_group.push_back(static_cast<std::uint32_t>(g));
      s.planted.push_back(static_cast<std::uint32_t>(k));
    }
  }
  const std::size_t nq = items.size();
  if (o.interactions_per_user > nq) throw std::invalid_argument("more purchases per user than items");

  std::vector<double> popularity(nq, 1.0);
  if (o.popularity_skew > 0.0) {
    std::vector<std::size_t> rank(nq);
    std::iota(rank.begin(), rank.end(), 0);
    std::shuffle(rank.begin(), rank.end(), rng);
    for (std::size_t q = 0; q < nq; ++q) {
      popularity[q] = std::pow(static_cast<double>(rank[q] + 1), -o.popularity_skew);
    }
  }
  Rng price_rng(o.seed ^ 0x5bd1e995ULL);
  std::uniform_real_distribution<double> price(1.0, 200.0);
  for (auto& r : items) {
    const double p = price(price_rng);
    if (price_rng() % 10 != 0) r.price = std::round(p * 100.0) / 100.0;
  }

  std::uniform_int_distribution<std::uint32_t> pick_implicit(0, static_cast<std::uint32_t>(widest - 1));
  std::uniform_int_distribution<std::uint32_t> pick_group(0, static_cast<std::uint32_t>(o.group_sizes.size() - 1));
  std::vector<std::string> user_ids;
  std::vector<std::vector<Purchase>> sequences;
  for (std::size_t u = 0; u < o.num_users; ++u) {
    const auto z = pick_implicit(rng);
    const auto c = pick_group(rng);
    s.user_implicit.push_back(z);
    s.user_category.push_back(c);
    std::vector<double> w(nq);
    for (std::size_t q = 0; q < nq; ++q) {
      const double affinity = (s.planted[q] == z ? 1.0 : 0.0) + o.category_weight * (item_group[q] == c ? 1.0 : 0.0);
      w[q] = popularity[q] * std::exp(o.beta * affinity);
    }
    std::vector<Purchase> seq;
    for (std::size_t t = 0; t < o.interactions_per_user; ++t) {
      std::discrete_distribution<std::size_t> draw(w.begin(), w.end());
      const auto q = draw(rng);
      w[q] = 0.0;
      seq.push_back({static_cast<ItemIndex>(q), static_cast<std::int64_t>(t)});
    }
    user_ids.push_back("u" + std::to_string(u));
    sequences.push_back(std::move(seq));
  }
  s.catalog = Catalog::build(std::move(user_ids), std::move(items), std::move(sequences));
  return s;
}

double planted_agreement(const Allocation& allocation, std::size_t axis, std::span<const std::uint32_t> planted) {
  if (planted.size() != allocation.num_items()) throw std::invalid_argument("planted labels do not cover the items");
  if (planted.empty()) return 0.0;
  std::uint32_t kp = 0, kl = 0;
  for (ItemIndex q = 0; q < planted.size(); ++q) {
    kp = std::max(kp, planted[q] + 1);
    kl = std::max(kl, allocation.coordinate(q, axis) + 1);
  }
  const std::size_t k = std::max(kp, kl);
  Matrix counts(k, k);
  for (ItemIndex q = 0; q < planted.size(); ++q) counts(planted[q], allocation.coordinate(q, axis)) += 1.0;
  const auto match = solve_max_weight_assignment(counts);
  return assignment_weight(counts, match) / static_cast<double>(planted.size());
}

AgreementBaseline random_agreement_baseline(const AttributeSpace& space, std::size_t axis,
                                            std::span<const std::uint32_t> planted, std::size_t trials,
                                            std::uint64_t seed) {
  if (trials == 0) throw std::invalid_argument("baseline needs at least one trial");
  Rng rng(seed);
  std::vector<double> a;
  for (std::size_t t = 0; t < trials; ++t) a.push_back(planted_agreement(random_allocation(space, rng()), axis, planted));
  const double mean = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(trials);
  double var = 0.0;
  for (double x : a) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / static_cast<double>(trials))};
}

}  // namespace dirrec
