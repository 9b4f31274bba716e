#include "dirrec/assignment.hpp"

#include <limits>
#include <string>

namespace dirrec {

std::vector<std::uint32_t> solve_max_weight_assignment(const Matrix& weights) {
  const std::size_t n = weights.rows();
  const std::size_t m = weights.cols();
  if (n > m) {
    throw InfeasibleError("assignment has " + std::to_string(n) + " rows but only " +
                          std::to_string(m) + " columns");
  }
  if (n == 0) return {};

  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based potentials; column 0 is the virtual source of each augmentation.
  std::vector<double> row_pot(n + 1, 0.0), col_pot(m + 1, 0.0);
  std::vector<std::size_t> owner(m + 1, 0), way(m + 1, 0);
  std::vector<double> min_slack(m + 1);
  std::vector<char> used(m + 1);

  auto cost = [&](std::size_t r, std::size_t c) { return -weights(r - 1, c - 1); };

  for (std::size_t r = 1; r <= n; ++r) {
    owner[0] = r;
    std::size_t col = 0;
    std::fill(min_slack.begin(), min_slack.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[col] = 1;
      const std::size_t row = owner[col];
      double delta = kInf;
      std::size_t next = 0;
      for (std::size_t c = 1; c <= m; ++c) {
        if (used[c]) continue;
        const double slack = cost(row, c) - row_pot[row] - col_pot[c];
        if (slack < min_slack[c]) {
          min_slack[c] = slack;
          way[c] = col;
        }
        if (min_slack[c] < delta) {
          delta = min_slack[c];
          next = c;
        }
      }
      for (std::size_t c = 0; c <= m; ++c) {
        if (used[c]) {
          row_pot[owner[c]] += delta;
          col_pot[c] -= delta;
        } else {
          min_slack[c] -= delta;
        }
      }
      col = next;
    } while (owner[col] != 0);
    do {
      const std::size_t prev = way[col];
      owner[col] = owner[prev];
      col = prev;
    } while (col != 0);
  }

  std::vector<std::uint32_t> result(n);
  for (std::size_t c = 1; c <= m; ++c) {
    if (owner[c] != 0) result[owner[c] - 1] = static_cast<std::uint32_t>(c - 1);
  }
  return result;
}

double assignment_weight(const Matrix& weights, const std::vector<std::uint32_t>& columns) {
  double total = 0.0;
  for (std::size_t r = 0; r < columns.size(); ++r) total += weights(r, columns[r]);
  return total;
}

}  // namespace dirrec
