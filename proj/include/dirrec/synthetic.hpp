#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dirrec/allocation.hpp"
#include "dirrec/catalog.hpp"

namespace dirrec {

struct SyntheticOptions {
  std::size_t num_users = 200;
  // One category per group; item k of a group carries planted implicit value k.
  std::vector<std::size_t> group_sizes = std::vector<std::size_t>(10, 10);
  std::size_t interactions_per_user = 12;
  double beta = 3.0;
  // Affinity weight of the favourite category next to the implicit match.
  double category_weight = 1.0;
  // Zipf exponent of a random item popularity; 0 keeps items equally popular.
  double popularity_skew = 0.0;
  std::uint64_t seed = 0;
};

struct SyntheticCatalog {
  Catalog catalog;
  std::vector<std::uint32_t> planted;  // planted implicit value per item
  std::vector<std::uint32_t> user_implicit;
  std::vector<std::uint32_t> user_category;
};

/// Users favour one implicit value and one category; each purchase is drawn
/// without replacement with probability ∝ popularity · exp(β · affinity).
SyntheticCatalog make_synthetic_catalog(const SyntheticOptions& options);

/// Share of items whose value on `axis` matches the planted value under the
/// best one-to-one relabeling of values.
double planted_agreement(const Allocation& allocation, std::size_t axis, std::span<const std::uint32_t> planted);

struct AgreementBaseline {
  double mean = 0.0;
  double stddev = 0.0;
};

/// Agreement of `trials` seeded random feasible allocations.
AgreementBaseline random_agreement_baseline(const AttributeSpace& space, std::size_t axis,
                                            std::span<const std::uint32_t> planted, std::size_t trials,
                                            std::uint64_t seed);

}  // namespace dirrec
