#pragma once

#include <cstdint>
#include <vector>

#include "dirrec/common.hpp"

namespace dirrec {

/// Rectangular maximum-weight assignment: every row gets a distinct column.
///
/// Solved as a min-cost assignment on negated weights with the shortest
/// augmenting path form of the Hungarian method, O(rows² · cols). Rows are
/// inserted in order and columns scanned in ascending order with strict
/// comparisons, so among equally weighted optima the result is deterministic;
/// for a constant matrix it is the identity prefix.
///
/// Throws InfeasibleError when rows > cols.
std::vector<std::uint32_t> solve_max_weight_assignment(const Matrix& weights);

/// Sum of weights(r, columns[r]).
double assignment_weight(const Matrix& weights, const std::vector<std::uint32_t>& columns);

}  // namespace dirrec
