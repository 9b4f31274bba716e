#include <gtest/gtest.h>

#include <cmath>

#include "dirrec/catalog.hpp"
#include "test_support.hpp"

using namespace dirrec;
using dirrec::testing::TempDir;
using dirrec::testing::write_file;

namespace {

std::string item_lines(int n, const std::string& price = "NA") {
  std::string s;
  for (int k = 0; k < n; ++k) s += "i" + std::to_string(k) + "\tClothing/Shoes\t" + price + "\n";
  return s;
}

std::string purchases(const std::string& user, int n, int first_ts = 100) {
  std::string s;
  for (int k = 0; k < n; ++k) {
    s += user + "\ti" + std::to_string(k) + "\t" + std::to_string(first_ts + k) + "\n";
  }
  return s;
}

Catalog ingest_text(const TempDir& dir, const std::string& interactions, const std::string& items,
                    const IngestOptions& options = {}) {
  write_file(dir / "interactions.tsv", interactions);
  write_file(dir / "items.tsv", items);
  return ingest(dir / "interactions.tsv", dir / "items.tsv", options);
}

}  // namespace

TEST(Ingest, UserWithFourPurchasesIsDropped) {
  TempDir dir;
  auto c = ingest_text(dir, purchases("alice", 4), item_lines(4));
  EXPECT_EQ(c.num_users(), 0u);
  EXPECT_EQ(c.num_items(), 0u);
}

TEST(Ingest, FivePurchasesSplitLeaveOneOut) {
  TempDir dir;
  auto c = ingest_text(dir, purchases("alice", 5), item_lines(5));
  ASSERT_EQ(c.num_users(), 1u);
  EXPECT_EQ(c.item(c.test(0).item).id, "i4");
  EXPECT_EQ(c.item(c.validation(0).item).id, "i3");
  EXPECT_EQ(c.train(0).size(), 3u);
}

TEST(Ingest, UserWithHundredAndOnePurchasesIsDropped) {
  TempDir dir;
  auto c = ingest_text(dir, purchases("bob", 101) + purchases("carol", 100), item_lines(101));
  ASSERT_EQ(c.num_users(), 1u);
  EXPECT_EQ(c.user_id(0), "carol");
}

TEST(Ingest, SortsByTimestampAndBreaksTiesByFileOrder) {
  TempDir dir;
  const std::string log = "u\ti4\t50\nu\ti2\t10\nu\ti0\t30\nu\ti1\t30\nu\ti3\t20\n";
  auto c = ingest_text(dir, log, item_lines(5));
  std::vector<std::string> order;
  for (const auto& p : c.sequence(0)) order.push_back(c.item(p.item).id);
  EXPECT_EQ(order, (std::vector<std::string>{"i2", "i3", "i0", "i1", "i4"}));
}

TEST(Ingest, MalformedLineNamesTheLine) {
  TempDir dir;
  try {
    ingest_text(dir, "u\ti0\t1\nu\ti1\n", item_lines(2));
    FAIL() << "expected an ingestion error";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
}

TEST(Ingest, BadTimestampIsRejected) {
  TempDir dir;
  EXPECT_THROW(ingest_text(dir, "u\ti0\tyesterday\n", item_lines(1)), InputError);
}

TEST(Ingest, UnknownItemIsRejected) {
  TempDir dir;
  try {
    ingest_text(dir, purchases("u", 5), item_lines(4));
    FAIL() << "expected an ingestion error";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("i4"), std::string::npos) << e.what();
  }
}

TEST(Ingest, ItemFileErrors) {
  TempDir dir;
  EXPECT_THROW(ingest_text(dir, "", "i0\t\t3\n"), InputError);
  EXPECT_THROW(ingest_text(dir, "", "i0\tA\t-1\n"), InputError);
  EXPECT_THROW(ingest_text(dir, "", "i0\tA\tcheap\n"), InputError);
  EXPECT_THROW(ingest_text(dir, "", "i0\tA\t1\ni0\tB\t2\n"), InputError);
}

TEST(Ingest, MissingFileIsAnInputError) {
  TempDir dir;
  write_file(dir / "items.tsv", item_lines(1));
  EXPECT_THROW(ingest(dir / "absent.tsv", dir / "items.tsv"), InputError);
}

TEST(Ingest, DuplicateTriplesCollapseAndUnboughtItemsAreExcluded) {
  TempDir dir;
  auto c = ingest_text(dir, purchases("u", 5) + "u\ti0\t100\n", item_lines(8));
  EXPECT_EQ(c.num_items(), 5u);
  EXPECT_EQ(c.sequence(0).size(), 5u);
}

TEST(Ingest, PricesAndCategoryTree) {
  TempDir dir;
  const std::string items = "a\tMen/Shoes\t25\nb\tMen/Shirts\tNA\nc\tWomen\t3.5\nd\tMen/Shoes\t7\ne\tWomen\t1\n";
  auto c = ingest_text(dir, "u\ta\t1\nu\tb\t2\nu\tc\t3\nu\td\t4\nu\te\t5\n", items);
  ASSERT_EQ(c.num_items(), 5u);
  EXPECT_EQ(c.num_category_leaves(), 3u);
  EXPECT_EQ(c.num_category_nodes(), 4u);
  EXPECT_EQ(c.item_category(0), c.item_category(3));
  EXPECT_FALSE(c.item(1).price.has_value());
  EXPECT_DOUBLE_EQ(*c.item(2).price, 3.5);
  EXPECT_EQ(c.category_leaf_path(c.item_category(0)).size(), 2u);
}

TEST(Ingest, SamplingIsSeededAndFiltersAfterwards) {
  TempDir dir;
  std::string log;
  for (int u = 0; u < 40; ++u) log += purchases("u" + std::to_string(u), 6);
  IngestOptions o;
  o.sample_fraction = 0.25;
  o.seed = 9;
  auto a = ingest_text(dir, log, item_lines(6), o);
  auto b = ingest_text(dir, log, item_lines(6), o);
  EXPECT_EQ(a.num_users(), 10u);
  EXPECT_EQ(a.to_json(), b.to_json());
  o.sample_fraction = 1.5;
  EXPECT_THROW(ingest_text(dir, log, item_lines(6), o), InputError);
}

TEST(Ingest, ReingestingIsByteIdentical) {
  TempDir dir;
  std::string log;
  for (int u = 0; u < 7; ++u) log += purchases("u" + std::to_string(u), 5 + u, 10 * u);
  auto a = ingest_text(dir, log, item_lines(12, "12.5"));
  auto b = ingest_text(dir, log, item_lines(12, "12.5"));
  a.save(dir / "a.json");
  b.save(dir / "b.json");
  EXPECT_EQ(dirrec::testing::read_file(dir / "a.json"), dirrec::testing::read_file(dir / "b.json"));
  auto loaded = Catalog::load(dir / "a.json");
  EXPECT_EQ(loaded.to_json(), a.to_json());
}

TEST(CatalogInvariants, SplitSizesOrderAndInverseIndices) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto c = dirrec::testing::random_catalog(rng, 15, 12, 4, 3, 10);
    std::size_t from_items = 0, from_users = 0;
    for (ItemIndex q = 0; q < c.num_items(); ++q) from_items += c.train_users_of_item(q).size();
    for (UserIndex u = 0; u < c.num_users(); ++u) {
      const auto seq = c.sequence(u);
      EXPECT_EQ(c.train(u).size() + 2, seq.size());
      for (const auto& p : c.train(u)) {
        EXPECT_LE(p.timestamp, c.validation(u).timestamp);
        const auto users = c.train_users_of_item(p.item);
        EXPECT_NE(std::find(users.begin(), users.end(), u), users.end());
      }
      EXPECT_LE(c.validation(u).timestamp, c.test(u).timestamp);
      from_users += c.train(u).size();
    }
    EXPECT_EQ(from_items, c.train_interaction_count());
    EXPECT_EQ(from_users, c.train_interaction_count());
  }
}

TEST(ColdStart, LabelsFollowTheFiveOccurrenceBoundary) {
  // Item 0 is bought in training by 5 users, item 1 by 4, item 2 never.
  std::vector<ItemRecord> items;
  for (int q = 0; q < 5; ++q) items.push_back({"i" + std::to_string(q), {"c"}, std::nullopt});
  std::vector<std::string> ids;
  std::vector<std::vector<Purchase>> seqs;
  for (int u = 0; u < 5; ++u) {
    ids.push_back("u" + std::to_string(u));
    std::vector<Purchase> s{{0, 0}};
    if (u < 4) s.push_back({1, 1});
    s.push_back({3, 2});
    s.push_back({4, 3});
    seqs.push_back(s);
  }
  auto c = Catalog::build(ids, items, seqs);
  auto labels = label_cold_start(c);
  EXPECT_EQ(labels[0].train_frequency, 5u);
  EXPECT_FALSE(labels[0].is_cold);
  EXPECT_EQ(labels[1].train_frequency, 4u);
  EXPECT_TRUE(labels[1].is_cold);
  EXPECT_EQ(labels[2].train_frequency, 0u);
  EXPECT_TRUE(labels[2].is_cold);
  EXPECT_DOUBLE_EQ(cold_start_fraction(c, labels), 1.0);
}

TEST(ColdStart, NoColdTestItemsGivesZeroFraction) {
  std::vector<ItemRecord> items{{"a", {"c"}, {}}, {"b", {"c"}, {}}, {"z", {"c"}, {}}};
  std::vector<std::string> ids;
  std::vector<std::vector<Purchase>> seqs;
  for (int u = 0; u < 6; ++u) {
    ids.push_back("u" + std::to_string(u));
    seqs.push_back({{0, 0}, {1, 1}, {2, 2}, {0, 3}, {1, 4}});
  }
  auto c = Catalog::build(ids, items, seqs);
  auto labels = label_cold_start(c);
  for (const auto& l : labels) EXPECT_GE(l.train_frequency, 5u);
  EXPECT_DOUBLE_EQ(cold_start_fraction(c, labels), 0.0);
  EXPECT_DOUBLE_EQ(summarize(c).cold_start_fraction, 0.0);
}

TEST(PriceBucket, TransformOfTwentyFiveIsTen) {
  EXPECT_NEAR(transform_price(25.0), 10.0, 1e-12);
  EXPECT_DOUBLE_EQ(transform_price(4.0), 4.0);
  EXPECT_DOUBLE_EQ(transform_price(5.0), 5.0);
}

TEST(PriceBucket, Examples) {
  const PriceRange r{0.0, 10.0};
  EXPECT_EQ(bucket_price(std::nullopt, r), 5);
  EXPECT_EQ(bucket_price(25.0, r), 4);
  EXPECT_EQ(bucket_price(0.0, r), 0);
  EXPECT_EQ(bucket_price(2.0, r), 1);
  EXPECT_EQ(bucket_price(1.9999, r), 0);
  EXPECT_EQ(bucket_price(1e9, r), 4);
  EXPECT_THROW(bucket_price(-1.0, r), std::invalid_argument);
}

TEST(PriceBucket, EqualWidthOracle) {
  const PriceRange r{1.0, 9.0};
  const double edges[] = {1.0, 2.6, 4.2, 5.8, 7.4, 9.0};
  for (int k = 0; k <= 800; ++k) {
    const double t = 1.0 + 0.01 * k + 0.005;
    if (t > 9.0) break;
    const double x = t <= 5.0 ? t : std::pow(5.0, t / 5.0);
    int expected = -1;
    for (int b = 0; b < 5; ++b) {
      if (t >= edges[b] && t < edges[b + 1]) expected = b;
    }
    EXPECT_EQ(bucket_price(x, r), expected) << "t=" << t;
  }
}

TEST(PriceBucket, MonotoneInPrice) {
  const PriceRange r{0.3, 12.0};
  int last = 0;
  for (double p = 0.0; p < 1000.0; p += 0.37) {
    const int b = bucket_price(p, r);
    EXPECT_GE(b, last);
    last = b;
  }
}

TEST(PriceBucket, TrainingRangeUsesBoughtItems) {
  std::vector<ItemRecord> items{{"a", {"c"}, 2.0}, {"b", {"c"}, 25.0}, {"x", {"c"}, 1000.0}, {"v", {"c"}, 0.5},
                                {"t", {"c"}, std::nullopt}};
  auto c = Catalog::build({"u"}, items, {{{0, 0}, {1, 1}, {4, 2}, {2, 3}, {3, 4}}});
  auto r = training_price_range(c);
  ASSERT_TRUE(r.has_value());
  EXPECT_DOUBLE_EQ(r->t_min, 2.0);
  EXPECT_NEAR(r->t_max, 10.0, 1e-12);
}

TEST(Summary, CountsMatchTheCatalog) {
  Rng rng(1);
  auto c = dirrec::testing::random_catalog(rng, 9, 7, 3);
  auto s = summarize(c);
  EXPECT_EQ(s.users, 9u);
  EXPECT_EQ(s.items, 7u);
  EXPECT_EQ(s.categories, c.num_category_leaves());
  EXPECT_EQ(s.feedback, c.interaction_count());
  auto j = s.to_json();
  EXPECT_TRUE(j.contains("cold_start_fraction"));
}
