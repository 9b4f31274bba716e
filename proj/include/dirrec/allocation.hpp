#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dirrec/catalog.hpp"
#include "dirrec/common.hpp"

namespace dirrec {

enum class ExplicitAttribute { Category, Price };
enum class AxisKind { Category, Price, Implicit };

std::string to_string(ExplicitAttribute a);
ExplicitAttribute parse_explicit_attribute(const std::string& name);

struct Axis {
  std::string name;
  AxisKind kind = AxisKind::Implicit;
  std::size_t size = 0;
};

struct SpaceOptions {
  std::vector<ExplicitAttribute> explicit_axes{ExplicitAttribute::Category};
  std::size_t implicit_axes = 1;
  double implicit_multiplier = 1.0;
};

/// Axes of the representation tensor: explicit axes first, then implicit
/// ones, plus each item's given explicit coordinates.
class AttributeSpace {
 public:
  AttributeSpace() = default;

  static AttributeSpace build(const Catalog& catalog, const SpaceOptions& options);
  /// Explicit coordinates are item-major: coords[q * explicit_axes.size() + k].
  static AttributeSpace from_parts(std::vector<Axis> axes, std::size_t num_explicit, std::size_t num_items,
                                   std::vector<std::uint32_t> explicit_coords);

  std::size_t num_axes() const { return axes_.size(); }
  std::size_t num_explicit() const { return num_explicit_; }
  std::size_t num_implicit() const { return axes_.size() - num_explicit_; }
  std::size_t num_items() const { return num_items_; }
  const Axis& axis(std::size_t a) const { return axes_[a]; }
  const std::vector<Axis>& axes() const { return axes_; }

  std::uint32_t explicit_coordinate(ItemIndex q, std::size_t k) const {
    return explicit_coords_[q * num_explicit_ + k];
  }
  const std::vector<std::uint32_t>& explicit_coordinates() const { return explicit_coords_; }

  /// Number of implicit cells available to each explicit group.
  std::size_t implicit_capacity() const;

 private:
  std::vector<Axis> axes_;
  std::size_t num_explicit_ = 0;
  std::size_t num_items_ = 0;
  std::vector<std::uint32_t> explicit_coords_;
};

/// Explicit coordinates of every item for the requested attributes.
std::vector<std::uint32_t> explicit_coordinates(const Catalog& catalog,
                                                std::span<const ExplicitAttribute> attributes);

/// Largest number of items sharing one explicit combination.
std::size_t minimum_implicit_count(const Catalog& catalog,
                                   std::span<const ExplicitAttribute> attributes);

/// ⌈multiplier · minimum⌉, guarded against floating-point noise.
std::size_t implicit_vocabulary_size(std::size_t minimum, double multiplier);

/// Smallest s with s^axes ≥ cells.
std::size_t per_axis_size(std::size_t cells, std::size_t axes);

struct ExplicitGroup {
  std::vector<std::uint32_t> key;
  std::vector<ItemIndex> members;
};

/// Items grouped by explicit combination, in order of first appearance.
std::vector<ExplicitGroup> explicit_groups(const AttributeSpace& space);

/// The allocating function: one tensor cell per item.
class Allocation {
 public:
  Allocation() = default;
  Allocation(std::size_t num_items, std::size_t num_axes)
      : num_axes_(num_axes), coords_(num_items * num_axes, 0) {}

  std::size_t num_items() const { return num_axes_ ? coords_.size() / num_axes_ : 0; }
  std::size_t num_axes() const { return num_axes_; }

  std::span<const std::uint32_t> cell(ItemIndex q) const {
    return {coords_.data() + q * num_axes_, num_axes_};
  }
  std::uint32_t coordinate(ItemIndex q, std::size_t a) const { return coords_[q * num_axes_ + a]; }
  void set_coordinate(ItemIndex q, std::size_t a, std::uint32_t v) { coords_[q * num_axes_ + a] = v; }

  const std::vector<std::uint32_t>& raw() const { return coords_; }

  /// Describes the first violated constraint: coordinate out of range,
  /// explicit coordinate differing from the given one, or two items sharing
  /// a cell. Nullopt when the allocation is valid.
  std::optional<std::string> violation(const AttributeSpace& space) const;
  void validate(const AttributeSpace& space) const;

  bool operator==(const Allocation&) const = default;

 private:
  std::size_t num_axes_ = 0;
  std::vector<std::uint32_t> coords_;
};

/// Seeded random injection of each explicit group into the implicit cells.
/// Throws InfeasibleError when a group exceeds the implicit capacity.
Allocation random_allocation(const AttributeSpace& space, std::uint64_t seed);

/// Clamped log-probabilities of one implicit axis, one row per scoring context
/// (a user for MF, a user and time step for RNN), plus the contexts attached to
/// each item's train purchases.
struct ImplicitEvidence {
  Matrix log_probs;
  std::vector<std::vector<std::uint32_t>> contexts_of_item;

  /// Rows are users; contexts of an item are its train purchasers.
  static ImplicitEvidence from_user_probabilities(const Matrix& user_probs, const Catalog& catalog);
};

struct AssignmentProblem {
  std::vector<ItemIndex> items;
  Matrix weights;  // items × implicit values
};

AssignmentProblem build_assignment_problem(std::span<const ItemIndex> members,
                                           const ImplicitEvidence& evidence);

/// x_{u,i} given as a users × values probability matrix.
AssignmentProblem build_assignment_problem(const ExplicitGroup& group, const Matrix& user_implicit_probs,
                                           const Catalog& catalog);

/// Implicit value per problem row.
std::vector<std::uint32_t> solve_assignment(const AssignmentProblem& problem);

/// Σ over items of weight(item, its implicit value on `axis`).
double implicit_objective(const Allocation& allocation, std::size_t axis,
                          const ImplicitEvidence& evidence);

struct ReallocateOptions {
  std::size_t threads = 1;
  // Process groups in a seeded random order (results must not depend on it).
  std::optional<std::uint64_t> shuffle_groups_seed;
};

struct ReallocationReport {
  std::size_t moved_items = 0;
  std::size_t groups = 0;
  // Σ ln x over train purchases for each implicit axis, before and after.
  std::vector<double> objective_before;
  std::vector<double> objective_after;
};

/// The R-step. Implicit axes are matched one after another, each with every
/// other coordinate fixed, so each group holds items sharing all coordinates
/// except the one being matched. Items without train purchases keep their
/// value, and a group's matching is only installed when it strictly improves
/// the group's total weight.
Allocation reallocate(const Allocation& allocation, const AttributeSpace& space,
                      std::span<const ImplicitEvidence> evidence_per_implicit_axis,
                      const ReallocateOptions& options = {}, ReallocationReport* report = nullptr);

}  // namespace dirrec
