#include "dirrec/allocation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <spdlog/spdlog.h>

#include "dirrec/assignment.hpp"

namespace dirrec {
namespace {

std::string format_key(std::span<const std::uint32_t> key) {
  std::string out = "(";
  for (std::size_t k = 0; k < key.size(); ++k) {
    if (k) out += ",";
    out += std::to_string(key[k]);
  }
  return out + ")";
}

// Items sharing every coordinate except `free_axis`, in first-appearance order.
std::vector<std::vector<ItemIndex>> groups_except_axis(const Allocation& allocation,
                                                       std::size_t free_axis) {
  std::map<std::vector<std::uint32_t>, std::size_t> index;
  std::vector<std::vector<ItemIndex>> groups;
  std::vector<std::uint32_t> key;
  for (ItemIndex q = 0; q < allocation.num_items(); ++q) {
    key.clear();
    for (std::size_t a = 0; a < allocation.num_axes(); ++a) {
      if (a != free_axis) key.push_back(allocation.coordinate(q, a));
    }
    auto [it, fresh] = index.try_emplace(key, groups.size());
    if (fresh) groups.emplace_back();
    groups[it->second].push_back(q);
  }
  return groups;
}

struct GroupOutcome {
  std::vector<std::pair<ItemIndex, std::uint32_t>> moves;
};

GroupOutcome rematch_group(const Allocation& allocation, std::size_t axis, std::size_t axis_size,
                           std::span<const ItemIndex> members, const ImplicitEvidence& evidence) {
  std::vector<ItemIndex> active;
  std::vector<char> reserved(axis_size, 0);
  for (auto q : members) {
    if (evidence.contexts_of_item[q].empty()) reserved[allocation.coordinate(q, axis)] = 1;
    else active.push_back(q);
  }
  if (active.empty()) return {};

  std::vector<std::uint32_t> columns;
  std::vector<std::uint32_t> column_of_value(axis_size, 0);
  for (std::uint32_t v = 0; v < axis_size; ++v) {
    if (reserved[v]) continue;
    column_of_value[v] = static_cast<std::uint32_t>(columns.size());
    columns.push_back(v);
  }

  const auto full = build_assignment_problem(active, evidence);
  Matrix weights(active.size(), columns.size());
  for (std::size_t r = 0; r < active.size(); ++r) {
    for (std::size_t c = 0; c < columns.size(); ++c) weights(r, c) = full.weights(r, columns[c]);
  }

  std::vector<std::uint32_t> incumbent(active.size());
  for (std::size_t r = 0; r < active.size(); ++r) {
    incumbent[r] = column_of_value[allocation.coordinate(active[r], axis)];
  }
  const auto matched = solve_max_weight_assignment(weights);
  const double before = assignment_weight(weights, incumbent);
  const double after = assignment_weight(weights, matched);
  // Keep the incumbent unless the matching is better beyond rounding noise.
  if (!(after > before + 1e-9 * std::max(1.0, std::abs(before)))) return {};

  GroupOutcome out;
  for (std::size_t r = 0; r < active.size(); ++r) {
    if (matched[r] != incumbent[r]) out.moves.emplace_back(active[r], columns[matched[r]]);
  }
  return out;
}

}  // namespace

std::string to_string(ExplicitAttribute a) {
  return a == ExplicitAttribute::Category ? "category" : "price";
}

ExplicitAttribute parse_explicit_attribute(const std::string& name) {
  if (name == "category") return ExplicitAttribute::Category;
  if (name == "price") return ExplicitAttribute::Price;
  throw InputError("unknown explicit attribute '" + name + "'");
}

std::vector<std::uint32_t> explicit_coordinates(const Catalog& catalog,
                                                std::span<const ExplicitAttribute> attributes) {
  const std::size_t n = attributes.size();
  std::vector<std::uint32_t> coords(catalog.num_items() * n);
  std::optional<PriceRange> range;
  if (std::find(attributes.begin(), attributes.end(), ExplicitAttribute::Price) != attributes.end()) {
    range = training_price_range(catalog);
  }
  for (ItemIndex q = 0; q < catalog.num_items(); ++q) {
    for (std::size_t k = 0; k < n; ++k) {
      std::uint32_t v = 0;
      if (attributes[k] == ExplicitAttribute::Category) {
        v = catalog.item_category(q);
      } else {
        const auto& price = catalog.item(q).price;
        // A degenerate range puts every priced item in the first bucket.
        v = static_cast<std::uint32_t>(range ? bucket_price(price, *range)
                                             : (price ? 0 : kMissingPriceBucket));
      }
      coords[q * n + k] = v;
    }
  }
  return coords;
}

std::size_t minimum_implicit_count(const Catalog& catalog,
                                   std::span<const ExplicitAttribute> attributes) {
  const auto coords = explicit_coordinates(catalog, attributes);
  const std::size_t n = attributes.size();
  std::map<std::vector<std::uint32_t>, std::size_t> counts;
  std::size_t best = 0;
  for (ItemIndex q = 0; q < catalog.num_items(); ++q) {
    std::vector<std::uint32_t> key(coords.begin() + q * n, coords.begin() + (q + 1) * n);
    best = std::max(best, ++counts[key]);
  }
  return best;
}

std::size_t implicit_vocabulary_size(std::size_t minimum, double multiplier) {
  if (multiplier < 1.0) throw std::invalid_argument("implicit multiplier must be >= 1");
  const double scaled = multiplier * static_cast<double>(minimum);
  return static_cast<std::size_t>(std::ceil(scaled - 1e-9));
}

std::size_t per_axis_size(std::size_t cells, std::size_t axes) {
  if (axes == 0) throw std::invalid_argument("at least one implicit axis is required");
  std::size_t s = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(std::pow(static_cast<double>(cells), 1.0 / axes))));
  auto power = [axes](std::size_t base) {
    std::size_t p = 1;
    for (std::size_t k = 0; k < axes; ++k) p *= base;
    return p;
  };
  while (s > 1 && power(s - 1) >= cells) --s;
  while (power(s) < cells) ++s;
  return s;
}

AttributeSpace AttributeSpace::build(const Catalog& catalog, const SpaceOptions& options) {
  std::vector<Axis> axes;
  for (auto attr : options.explicit_axes) {
    if (attr == ExplicitAttribute::Category) {
      axes.push_back({"category", AxisKind::Category, catalog.num_category_leaves()});
    } else {
      axes.push_back({"price", AxisKind::Price, static_cast<std::size_t>(kMissingPriceBucket) + 1});
    }
  }
  const auto minimum = minimum_implicit_count(catalog, options.explicit_axes);
  const auto cells = implicit_vocabulary_size(minimum, options.implicit_multiplier);
  const auto size = per_axis_size(cells, options.implicit_axes);
  for (std::size_t m = 0; m < options.implicit_axes; ++m) {
    axes.push_back({"implicit" + std::to_string(m), AxisKind::Implicit, size});
  }
  return from_parts(std::move(axes), options.explicit_axes.size(), catalog.num_items(),
                    dirrec::explicit_coordinates(catalog, options.explicit_axes));
}

AttributeSpace AttributeSpace::from_parts(std::vector<Axis> axes, std::size_t num_explicit, std::size_t num_items,
                                          std::vector<std::uint32_t> explicit_coords) {
  if (num_explicit > axes.size()) throw std::invalid_argument("more explicit axes than axes");
  if (num_explicit == axes.size()) throw std::invalid_argument("space needs an implicit axis");
  for (const auto& axis : axes) {
    if (axis.size == 0) throw std::invalid_argument("axis '" + axis.name + "' is empty");
  }
  AttributeSpace s;
  s.axes_ = std::move(axes);
  s.num_explicit_ = num_explicit;
  if (explicit_coords.size() != num_items * num_explicit) {
    throw std::invalid_argument("explicit coordinates do not cover every item");
  }
  s.num_items_ = num_items;
  s.explicit_coords_ = std::move(explicit_coords);
  return s;
}

std::size_t AttributeSpace::implicit_capacity() const {
  std::size_t cells = 1;
  for (std::size_t a = num_explicit_; a < axes_.size(); ++a) cells *= axes_[a].size;
  return cells;
}

std::vector<ExplicitGroup> explicit_groups(const AttributeSpace& space) {
  std::map<std::vector<std::uint32_t>, std::size_t> index;
  std::vector<ExplicitGroup> groups;
  const std::size_t n = space.num_explicit();
  for (ItemIndex q = 0; q < space.num_items(); ++q) {
    std::vector<std::uint32_t> key(n);
    for (std::size_t k = 0; k < n; ++k) key[k] = space.explicit_coordinate(q, k);
    auto [it, fresh] = index.try_emplace(key, groups.size());
    if (fresh) groups.push_back({key, {}});
    groups[it->second].members.push_back(q);
  }
  return groups;
}

std::optional<std::string> Allocation::violation(const AttributeSpace& space) const {
  if (num_axes_ != space.num_axes()) return "axis count mismatch";
  if (num_items() != space.num_items()) return "item count mismatch";
  for (ItemIndex q = 0; q < num_items(); ++q) {
    for (std::size_t a = 0; a < num_axes_; ++a) {
      if (coordinate(q, a) >= space.axis(a).size) {
        return "item " + std::to_string(q) + " has out-of-range coordinate on axis " +
               space.axis(a).name;
      }
      if (a < space.num_explicit() && coordinate(q, a) != space.explicit_coordinate(q, a)) {
        return "item " + std::to_string(q) + " moved off its explicit attribute on axis " +
               space.axis(a).name;
      }
    }
  }
  std::vector<ItemIndex> order(num_items());
  std::iota(order.begin(), order.end(), 0);
  auto cell_less = [this](ItemIndex x, ItemIndex y) {
    auto cx = cell(x), cy = cell(y);
    return std::lexicographical_compare(cx.begin(), cx.end(), cy.begin(), cy.end());
  };
  std::sort(order.begin(), order.end(), cell_less);
  for (std::size_t k = 1; k < order.size(); ++k) {
    auto a = cell(order[k - 1]), b = cell(order[k]);
    if (std::equal(a.begin(), a.end(), b.begin())) {
      return "items " + std::to_string(order[k - 1]) + " and " + std::to_string(order[k]) +
             " share cell " + format_key(a);
    }
  }
  return std::nullopt;
}

void Allocation::validate(const AttributeSpace& space) const {
  if (auto v = violation(space)) throw InfeasibleError("invalid allocation: " + *v);
}

Allocation random_allocation(const AttributeSpace& space, std::uint64_t seed) {
  Rng rng(seed);
  Allocation alloc(space.num_items(), space.num_axes());
  const std::size_t capacity = space.implicit_capacity();
  std::vector<std::size_t> cells(capacity);
  for (const auto& group : explicit_groups(space)) {
    if (group.members.size() > capacity) {
      throw InfeasibleError("explicit group " + format_key(group.key) + " has " +
                            std::to_string(group.members.size()) + " items but only " +
                            std::to_string(capacity) + " implicit cells");
    }
    std::iota(cells.begin(), cells.end(), 0);
    // Partial Fisher-Yates: the first |members| slots become a random injection.
    for (std::size_t k = 0; k < group.members.size(); ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, capacity - 1);
      std::swap(cells[k], cells[pick(rng)]);
    }
    for (std::size_t k = 0; k < group.members.size(); ++k) {
      const ItemIndex q = group.members[k];
      for (std::size_t e = 0; e < space.num_explicit(); ++e) {
        alloc.set_coordinate(q, e, group.key[e]);
      }
      std::size_t cell = cells[k];
      for (std::size_t a = space.num_axes(); a-- > space.num_explicit();) {
        alloc.set_coordinate(q, a, static_cast<std::uint32_t>(cell % space.axis(a).size));
        cell /= space.axis(a).size;
      }
    }
  }
  return alloc;
}

ImplicitEvidence ImplicitEvidence::from_user_probabilities(const Matrix& user_probs,
                                                           const Catalog& catalog) {
  ImplicitEvidence ev;
  ev.log_probs = Matrix(user_probs.rows(), user_probs.cols());
  for (std::size_t k = 0; k < user_probs.size(); ++k) {
    ev.log_probs.values()[k] = std::log(std::max(user_probs.values()[k], kProbabilityFloor));
  }
  ev.contexts_of_item.resize(catalog.num_items());
  for (ItemIndex q = 0; q < catalog.num_items(); ++q) {
    auto users = catalog.train_users_of_item(q);
    ev.contexts_of_item[q].assign(users.begin(), users.end());
  }
  return ev;
}

AssignmentProblem build_assignment_problem(std::span<const ItemIndex> members,
                                           const ImplicitEvidence& evidence) {
  AssignmentProblem p;
  p.items.assign(members.begin(), members.end());
  p.weights = Matrix(members.size(), evidence.log_probs.cols());
  for (std::size_t r = 0; r < members.size(); ++r) {
    auto row = p.weights.row(r);
    for (auto ctx : evidence.contexts_of_item[members[r]]) axpy(1.0, evidence.log_probs.row(ctx), row);
  }
  return p;
}

AssignmentProblem build_assignment_problem(const ExplicitGroup& group, const Matrix& user_implicit_probs,
                                           const Catalog& catalog) {
  return build_assignment_problem(group.members,
                                  ImplicitEvidence::from_user_probabilities(user_implicit_probs, catalog));
}

std::vector<std::uint32_t> solve_assignment(const AssignmentProblem& problem) {
  return solve_max_weight_assignment(problem.weights);
}

double implicit_objective(const Allocation& allocation, std::size_t axis,
                          const ImplicitEvidence& evidence) {
  double total = 0.0;
  for (ItemIndex q = 0; q < allocation.num_items(); ++q) {
    const auto v = allocation.coordinate(q, axis);
    for (auto ctx : evidence.contexts_of_item[q]) total += evidence.log_probs(ctx, v);
  }
  return total;
}

Allocation reallocate(const Allocation& allocation, const AttributeSpace& space,
                      std::span<const ImplicitEvidence> evidence_per_implicit_axis,
                      const ReallocateOptions& options, ReallocationReport* report) {
  if (evidence_per_implicit_axis.size() != space.num_implicit()) {
    throw std::invalid_argument("need evidence for every implicit axis");
  }
  Allocation current = allocation;
  ReallocationReport local;
  for (std::size_t m = 0; m < space.num_implicit(); ++m) {
    const std::size_t axis = space.num_explicit() + m;
    const auto& evidence = evidence_per_implicit_axis[m];
    local.objective_before.push_back(implicit_objective(current, axis, evidence));

    auto groups = groups_except_axis(current, axis);
    std::vector<std::size_t> order(groups.size());
    std::iota(order.begin(), order.end(), 0);
    if (options.shuffle_groups_seed) {
      Rng rng(*options.shuffle_groups_seed);
      std::shuffle(order.begin(), order.end(), rng);
    }
    std::vector<GroupOutcome> outcomes(groups.size());
    parallel_for(order.size(), options.threads, [&](std::size_t k) {
      const auto g = order[k];
      outcomes[g] = rematch_group(current, axis, space.axis(axis).size, groups[g], evidence);
    });
    for (const auto& out : outcomes) {
      for (auto [q, v] : out.moves) current.set_coordinate(q, axis, v);
      local.moved_items += out.moves.size();
    }
    local.groups += groups.size();
    local.objective_after.push_back(implicit_objective(current, axis, evidence));
  }
  current.validate(space);
  spdlog::debug("reallocation moved {} items across {} groups", local.moved_items, local.groups);
  if (report) *report = std::move(local);
  return current;
}

}  // namespace dirrec
