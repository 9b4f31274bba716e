#include "dirrec/catalog.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include <spdlog/spdlog.h>

namespace dirrec {
namespace {

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    out.emplace_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string join_path(std::span<const std::string> segments) {
  std::string out;
  for (std::size_t k = 0; k < segments.size(); ++k) {
    if (k) out += '/';
    out += segments[k];
  }
  return out;
}

[[noreturn]] void fail_line(const std::filesystem::path& file, std::size_t line,
                            const std::string& what) {
  throw InputError(file.string() + ":" + std::to_string(line) + ": " + what);
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  return in;
}

// Strips a trailing carriage return; reports whether the line is blank.
bool clean_line(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line.find_first_not_of(" \t") == std::string::npos;
}

std::vector<ItemRecord> read_items(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::vector<ItemRecord> items;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (clean_line(line)) continue;
    auto fields = split(line, '\t');
    if (fields.size() != 3) fail_line(path, lineno, "expected 3 tab-separated fields");
    ItemRecord rec;
    rec.id = fields[0];
    if (rec.id.empty()) fail_line(path, lineno, "empty item id");
    for (auto& seg : split(fields[1], '/')) {
      if (!seg.empty()) rec.category_path.push_back(seg);
    }
    if (rec.category_path.empty()) fail_line(path, lineno, "empty category path");
    if (fields[2] != "NA") {
      double price = 0.0;
      const auto& s = fields[2];
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), price);
      if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(price)) {
        fail_line(path, lineno, "malformed price '" + s + "'");
      }
      if (price < 0.0) fail_line(path, lineno, "negative price");
      rec.price = price;
    }
    if (!seen.insert(rec.id).second) fail_line(path, lineno, "duplicate item id '" + rec.id + "'");
    items.push_back(std::move(rec));
  }
  return items;
}

struct RawInteraction {
  std::size_t user;  // index into first-appearance user order
  std::size_t item;  // index into item file order
  std::int64_t timestamp;
};

}  // namespace

Catalog Catalog::build(std::vector<std::string> user_ids, std::vector<ItemRecord> items,
                       std::vector<std::vector<Purchase>> sequences) {
  if (user_ids.size() != sequences.size()) {
    throw std::invalid_argument("user id count does not match sequence count");
  }
  Catalog c;
  c.user_ids_ = std::move(user_ids);
  c.items_ = std::move(items);
  c.sequences_ = std::move(sequences);

  const std::size_t nq = c.items_.size();
  c.train_users_.assign(nq, {});
  c.purchased_.resize(c.sequences_.size());
  for (UserIndex u = 0; u < c.sequences_.size(); ++u) {
    const auto& seq = c.sequences_[u];
    if (seq.size() < 3) throw std::invalid_argument("user sequence shorter than 3");
    for (std::size_t t = 0; t < seq.size(); ++t) {
      if (seq[t].item >= nq) throw std::invalid_argument("purchase references unknown item");
      if (t > 0 && seq[t].timestamp < seq[t - 1].timestamp) {
        throw std::invalid_argument("user sequence not sorted by timestamp");
      }
      if (t + 2 < seq.size()) c.train_users_[seq[t].item].push_back(u);
      c.purchased_[u].push_back(seq[t].item);
    }
    auto& p = c.purchased_[u];
    std::sort(p.begin(), p.end());
    p.erase(std::unique(p.begin(), p.end()), p.end());
    c.interaction_count_ += seq.size();
    c.train_interaction_count_ += seq.size() - 2;
  }

  std::unordered_map<std::string, std::uint32_t> node_index;
  std::unordered_map<std::string, std::uint32_t> leaf_index;
  c.item_leaf_.resize(nq);
  for (ItemIndex q = 0; q < nq; ++q) {
    const auto& path = c.items_[q].category_path;
    if (path.empty()) throw std::invalid_argument("item without category path");
    const std::string full = join_path(path);
    auto [leaf_it, new_leaf] = leaf_index.try_emplace(full, c.leaf_names_.size());
    if (new_leaf) {
      std::vector<std::uint32_t> nodes;
      for (std::size_t k = 1; k <= path.size(); ++k) {
        auto prefix = join_path(std::span(path).first(k));
        auto [it, fresh] = node_index.try_emplace(prefix, c.node_names_.size());
        if (fresh) c.node_names_.push_back(prefix);
        nodes.push_back(it->second);
      }
      c.leaf_names_.push_back(full);
      c.leaf_paths_.push_back(std::move(nodes));
    }
    c.item_leaf_[q] = leaf_it->second;
  }
  return c;
}

bool Catalog::has_purchased(UserIndex u, ItemIndex q) const {
  const auto& p = purchased_[u];
  return std::binary_search(p.begin(), p.end(), q);
}

std::optional<ItemIndex> Catalog::find_item(const std::string& id) const {
  for (ItemIndex q = 0; q < items_.size(); ++q) {
    if (items_[q].id == id) return q;
  }
  return std::nullopt;
}

std::optional<UserIndex> Catalog::find_user(const std::string& id) const {
  for (UserIndex u = 0; u < user_ids_.size(); ++u) {
    if (user_ids_[u] == id) return u;
  }
  return std::nullopt;
}

nlohmann::ordered_json Catalog::to_json() const {
  nlohmann::ordered_json j;
  j["format"] = "dirrec-catalog";
  j["version"] = 1;
  auto& items = j["items"] = nlohmann::ordered_json::array();
  for (const auto& rec : items_) {
    nlohmann::ordered_json it;
    it["id"] = rec.id;
    it["category"] = rec.category_path;
    if (rec.price) it["price"] = *rec.price;
    else it["price"] = nullptr;
    items.push_back(std::move(it));
  }
  auto& users = j["users"] = nlohmann::ordered_json::array();
  for (UserIndex u = 0; u < user_ids_.size(); ++u) {
    nlohmann::ordered_json user;
    user["id"] = user_ids_[u];
    auto& seq = user["purchases"] = nlohmann::ordered_json::array();
    for (const auto& p : sequences_[u]) seq.push_back({p.item, p.timestamp});
    users.push_back(std::move(user));
  }
  return j;
}

Catalog Catalog::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "dirrec-catalog" || j.at("version") != 1) {
      throw InputError("unsupported catalog format");
    }
    std::vector<ItemRecord> items;
    for (const auto& it : j.at("items")) {
      ItemRecord rec;
      rec.id = it.at("id").get<std::string>();
      rec.category_path = it.at("category").get<std::vector<std::string>>();
      if (!it.at("price").is_null()) rec.price = it.at("price").get<double>();
      items.push_back(std::move(rec));
    }
    std::vector<std::string> users;
    std::vector<std::vector<Purchase>> sequences;
    for (const auto& user : j.at("users")) {
      users.push_back(user.at("id").get<std::string>());
      auto& seq = sequences.emplace_back();
      for (const auto& p : user.at("purchases")) {
        seq.push_back({p.at(0).get<ItemIndex>(), p.at(1).get<std::int64_t>()});
      }
    }
    return build(std::move(users), std::move(items), std::move(sequences));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed catalog: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw InputError(std::string("inconsistent catalog: ") + e.what());
  }
}

void Catalog::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << to_json().dump() << '\n';
}

Catalog Catalog::load(const std::filesystem::path& path) {
  auto in = open_input(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

Catalog ingest(const std::filesystem::path& interaction_file,
               const std::filesystem::path& item_file, const IngestOptions& options) {
  auto items = read_items(item_file);
  std::unordered_map<std::string, std::size_t> item_index;
  for (std::size_t k = 0; k < items.size(); ++k) item_index.emplace(items[k].id, k);

  auto in = open_input(interaction_file);
  std::vector<std::string> user_names;
  std::unordered_map<std::string, std::size_t> user_index;
  std::vector<RawInteraction> raw;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (clean_line(line)) continue;
    auto fields = split(line, '\t');
    if (fields.size() != 3) fail_line(interaction_file, lineno, "expected 3 tab-separated fields");
    if (fields[0].empty()) fail_line(interaction_file, lineno, "empty user id");
    auto item_it = item_index.find(fields[1]);
    if (item_it == item_index.end()) {
      fail_line(interaction_file, lineno, "item '" + fields[1] + "' missing from item file");
    }
    std::int64_t ts = 0;
    const auto& s = fields[2];
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), ts);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      fail_line(interaction_file, lineno, "malformed timestamp '" + s + "'");
    }
    auto [uit, fresh] = user_index.try_emplace(fields[0], user_names.size());
    if (fresh) user_names.push_back(fields[0]);
    raw.push_back({uit->second, item_it->second, ts});
  }

  // Per-user sequences in file order, exact duplicates removed.
  std::vector<std::vector<RawInteraction>> per_user(user_names.size());
  std::set<std::tuple<std::size_t, std::size_t, std::int64_t>> seen;
  for (const auto& r : raw) {
    if (seen.emplace(r.user, r.item, r.timestamp).second) per_user[r.user].push_back(r);
  }

  std::vector<bool> keep(user_names.size(), true);
  if (options.sample_fraction) {
    const double f = *options.sample_fraction;
    if (!(f > 0.0 && f <= 1.0)) throw InputError("sample fraction must be in (0, 1]");
    std::vector<std::size_t> order(user_names.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(options.seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto kept = static_cast<std::size_t>(std::llround(f * static_cast<double>(order.size())));
    std::fill(keep.begin(), keep.end(), false);
    for (std::size_t k = 0; k < kept; ++k) keep[order[k]] = true;
  }

  std::vector<std::size_t> retained;
  for (std::size_t u = 0; u < per_user.size(); ++u) {
    const auto n = per_user[u].size();
    if (keep[u] && n >= kMinPurchasesPerUser && n <= kMaxPurchasesPerUser) retained.push_back(u);
  }

  std::vector<bool> item_used(items.size(), false);
  for (auto u : retained) {
    for (const auto& r : per_user[u]) item_used[r.item] = true;
  }
  std::vector<ItemIndex> remap(items.size(), 0);
  std::vector<ItemRecord> kept_items;
  for (std::size_t k = 0; k < items.size(); ++k) {
    if (!item_used[k]) continue;
    remap[k] = static_cast<ItemIndex>(kept_items.size());
    kept_items.push_back(std::move(items[k]));
  }

  std::vector<std::string> ids;
  std::vector<std::vector<Purchase>> sequences;
  for (auto u : retained) {
    ids.push_back(user_names[u]);
    auto& seq = sequences.emplace_back();
    for (const auto& r : per_user[u]) seq.push_back({remap[r.item], r.timestamp});
    std::stable_sort(seq.begin(), seq.end(),
                     [](const Purchase& a, const Purchase& b) { return a.timestamp < b.timestamp; });
  }
  spdlog::info("ingested {} users, {} items ({} users filtered out)", ids.size(), kept_items.size(),
               user_names.size() - ids.size());
  return Catalog::build(std::move(ids), std::move(kept_items), std::move(sequences));
}

std::vector<ColdStartLabel> label_cold_start(const Catalog& catalog) {
  std::vector<ColdStartLabel> labels(catalog.num_items());
  for (ItemIndex q = 0; q < catalog.num_items(); ++q) {
    const auto freq = catalog.train_users_of_item(q).size();
    labels[q] = {q, freq, freq < kColdStartThreshold};
  }
  return labels;
}

double cold_start_fraction(const Catalog& catalog, std::span<const ColdStartLabel> labels) {
  if (catalog.num_users() == 0) return 0.0;
  std::size_t cold = 0;
  for (UserIndex u = 0; u < catalog.num_users(); ++u) {
    if (labels[catalog.test(u).item].is_cold) ++cold;
  }
  return static_cast<double>(cold) / static_cast<double>(catalog.num_users());
}

double transform_price(double price) {
  return price <= 5.0 ? price : 5.0 * std::log(price) / std::log(5.0);
}

int bucket_price(std::optional<double> price, const PriceRange& range) {
  if (!price) return kMissingPriceBucket;
  if (*price < 0.0) throw std::invalid_argument("negative price");
  if (!(range.t_min < range.t_max)) throw std::invalid_argument("empty price range");
  const double t = transform_price(*price);
  const double pos = 5.0 * (t - range.t_min) / (range.t_max - range.t_min);
  return static_cast<int>(std::clamp(std::floor(pos), 0.0, 4.0));
}

std::optional<PriceRange> training_price_range(const Catalog& catalog) {
  std::optional<PriceRange> range;
  for (ItemIndex q = 0; q < catalog.num_items(); ++q) {
    const auto& price = catalog.item(q).price;
    if (!price || catalog.train_users_of_item(q).empty()) continue;
    const double t = transform_price(*price);
    if (!range) range = PriceRange{t, t};
    range->t_min = std::min(range->t_min, t);
    range->t_max = std::max(range->t_max, t);
  }
  if (range && !(range->t_min < range->t_max)) return std::nullopt;
  return range;
}

nlohmann::ordered_json CatalogSummary::to_json() const {
  nlohmann::ordered_json j;
  j["users"] = users;
  j["items"] = items;
  j["categories"] = categories;
  j["feedback"] = feedback;
  j["cold_start_fraction"] = cold_start_fraction;
  return j;
}

CatalogSummary summarize(const Catalog& catalog) {
  auto labels = label_cold_start(catalog);
  return {catalog.num_users(), catalog.num_items(), catalog.num_category_leaves(),
          catalog.interaction_count(), cold_start_fraction(catalog, labels)};
}

}  // namespace dirrec
