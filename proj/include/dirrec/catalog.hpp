#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dirrec/common.hpp"

namespace dirrec {

inline constexpr std::size_t kMinPurchasesPerUser = 5;
inline constexpr std::size_t kMaxPurchasesPerUser = 100;
inline constexpr std::size_t kColdStartThreshold = 5;

struct ItemRecord {
  std::string id;
  std::vector<std::string> category_path;  // root to leaf, never empty
  std::optional<double> price;

  bool operator==(const ItemRecord&) const = default;
};

struct Purchase {
  ItemIndex item = 0;
  std::int64_t timestamp = 0;

  bool operator==(const Purchase&) const = default;
};

struct Interaction {
  UserIndex user = 0;
  ItemIndex item = 0;
  std::int64_t timestamp = 0;
};

/// Immutable view of users, items and their chronologically sorted purchase
/// sequences. Each user's last purchase is the test target, the one before it
/// the validation target, and the rest the training split.
class Catalog {
 public:
  Catalog() = default;

  /// Builds derived indices. Sequences must already be sorted by timestamp and
  /// hold at least three purchases each.
  static Catalog build(std::vector<std::string> user_ids, std::vector<ItemRecord> items,
                       std::vector<std::vector<Purchase>> sequences);

  std::size_t num_users() const { return user_ids_.size(); }
  std::size_t num_items() const { return items_.size(); }

  const std::string& user_id(UserIndex u) const { return user_ids_[u]; }
  const ItemRecord& item(ItemIndex q) const { return items_[q]; }
  const std::vector<ItemRecord>& items() const { return items_; }

  std::span<const Purchase> sequence(UserIndex u) const { return sequences_[u]; }
  std::span<const Purchase> train(UserIndex u) const {
    return std::span<const Purchase>(sequences_[u]).first(sequences_[u].size() - 2);
  }
  const Purchase& validation(UserIndex u) const { return sequences_[u][sequences_[u].size() - 2]; }
  const Purchase& test(UserIndex u) const { return sequences_[u].back(); }

  /// U_q over the training split, one entry per train purchase.
  std::span<const UserIndex> train_users_of_item(ItemIndex q) const { return train_users_[q]; }
  /// Distinct items bought by u in any split, sorted.
  std::span<const ItemIndex> purchased(UserIndex u) const { return purchased_[u]; }
  bool has_purchased(UserIndex u, ItemIndex q) const;

  std::size_t interaction_count() const { return interaction_count_; }
  std::size_t train_interaction_count() const { return train_interaction_count_; }

  // Category tree. Nodes are path prefixes; leaves are full item paths.
  std::size_t num_category_leaves() const { return leaf_names_.size(); }
  std::size_t num_category_nodes() const { return node_names_.size(); }
  const std::string& category_leaf_name(std::size_t leaf) const { return leaf_names_[leaf]; }
  const std::string& category_node_name(std::size_t node) const { return node_names_[node]; }
  std::span<const std::uint32_t> category_leaf_path(std::size_t leaf) const { return leaf_paths_[leaf]; }
  std::uint32_t item_category(ItemIndex q) const { return item_leaf_[q]; }

  std::optional<ItemIndex> find_item(const std::string& id) const;
  std::optional<UserIndex> find_user(const std::string& id) const;

  nlohmann::ordered_json to_json() const;
  static Catalog from_json(const nlohmann::json& j);

  void save(const std::filesystem::path& path) const;
  static Catalog load(const std::filesystem::path& path);

 private:
  std::vector<std::string> user_ids_;
  std::vector<ItemRecord> items_;
  std::vector<std::vector<Purchase>> sequences_;

  std::vector<std::vector<UserIndex>> train_users_;
  std::vector<std::vector<ItemIndex>> purchased_;
  std::size_t interaction_count_ = 0;
  std::size_t train_interaction_count_ = 0;

  std::vector<std::string> node_names_;
  std::vector<std::string> leaf_names_;
  std::vector<std::vector<std::uint32_t>> leaf_paths_;
  std::vector<std::uint32_t> item_leaf_;
};

struct IngestOptions {
  // Keep this fraction of users (seeded, uniform) before filtering.
  std::optional<double> sample_fraction;
  std::uint64_t seed = 0;
};

/// Parses the interaction and item files, filters users to 5..100 purchases,
/// drops items nobody bought, and splits each sequence leave-one-out.
Catalog ingest(const std::filesystem::path& interaction_file,
               const std::filesystem::path& item_file, const IngestOptions& options = {});

struct ColdStartLabel {
  ItemIndex item = 0;
  std::size_t train_frequency = 0;
  bool is_cold = false;
};

/// One label per item, indexed by item.
std::vector<ColdStartLabel> label_cold_start(const Catalog& catalog);

/// Share of users whose test item is cold.
double cold_start_fraction(const Catalog& catalog, std::span<const ColdStartLabel> labels);

struct PriceRange {
  double t_min = 0.0;
  double t_max = 0.0;
};

inline constexpr int kMissingPriceBucket = 5;

/// Identity up to 5, 5·log5(x) above.
double transform_price(double price);

/// Bucket in 0..4 from equal-width bins over the transformed range; 5 when
/// the price is missing.
int bucket_price(std::optional<double> price, const PriceRange& range);

/// Transformed-price range over items with a price and at least one train
/// purchase. Nullopt when fewer than two distinct transformed prices exist.
std::optional<PriceRange> training_price_range(const Catalog& catalog);

struct CatalogSummary {
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t categories = 0;
  std::size_t feedback = 0;
  double cold_start_fraction = 0.0;

  nlohmann::ordered_json to_json() const;
};

CatalogSummary summarize(const Catalog& catalog);

}  // namespace dirrec
