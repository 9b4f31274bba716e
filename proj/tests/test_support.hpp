#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "dirrec/catalog.hpp"
#include "dirrec/models.hpp"

namespace dirrec::testing {

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("dirrec_test_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Random catalog: items spread over `categories` two-level paths, each user
/// buying a random subset in random order.
inline Catalog random_catalog(Rng& rng, std::size_t users, std::size_t items, std::size_t categories,
                              std::size_t min_len = 3, std::size_t max_len = 6, bool prices = false) {
  std::vector<ItemRecord> recs;
  std::uniform_int_distribution<std::size_t> cat(0, categories - 1);
  std::uniform_real_distribution<double> price(0.5, 300.0);
  for (std::size_t q = 0; q < items; ++q) {
    ItemRecord r;
    r.id = "i" + std::to_string(q);
    const auto c = cat(rng);
    r.category_path = {"root" + std::to_string(c % 2), "leaf" + std::to_string(c)};
    if (prices && rng() % 4 != 0) r.price = price(rng);
    recs.push_back(std::move(r));
  }
  std::vector<std::string> ids;
  std::vector<std::vector<Purchase>> seqs;
  std::uniform_int_distribution<std::size_t> len(min_len, std::min(max_len, items));
  std::vector<ItemIndex> all(items);
  for (ItemIndex q = 0; q < items; ++q) all[q] = q;
  for (std::size_t u = 0; u < users; ++u) {
    std::shuffle(all.begin(), all.end(), rng);
    std::vector<Purchase> seq;
    const auto n = len(rng);
    for (std::size_t t = 0; t < n; ++t) seq.push_back({all[t], static_cast<std::int64_t>(t)});
    ids.push_back("u" + std::to_string(u));
    seqs.push_back(std::move(seq));
  }
  return Catalog::build(std::move(ids), std::move(recs), std::move(seqs));
}

struct GradientCheck {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
};

/// Compares user_loss gradients with central differences (step 1e-5) on every
/// parameter entry. Entries where both values are below `floor` in magnitude
/// are compared absolutely against floor · 1e-4.
inline GradientCheck check_user_gradients(Recommender& model, const Catalog& catalog, UserIndex user,
                                          std::uint64_t negative_seed, double floor = 1e-6) {
  std::vector<Matrix> analytic;
  model.user_loss(catalog, user, negative_seed, &analytic);
  auto tables = model.parameter_tables();
  GradientCheck out;
  const double h = 1e-5;
  for (std::size_t t = 0; t < tables.size(); ++t) {
    auto& values = tables[t].matrix->values();
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double saved = values[k];
      values[k] = saved + h;
      model.refresh();
      const double up = model.user_loss(catalog, user, negative_seed, nullptr);
      values[k] = saved - h;
      model.refresh();
      const double down = model.user_loss(catalog, user, negative_seed, nullptr);
      values[k] = saved;
      model.refresh();
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[t].values()[k];
      const double scale = std::max({std::abs(a), std::abs(numeric), floor});
      out.max_relative_error = std::max(out.max_relative_error, std::abs(a - numeric) / scale);
      ++out.checked;
    }
  }
  return out;
}

}  // namespace dirrec::testing
