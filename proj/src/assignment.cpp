#include "lsp/assignment.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace lsp {

CostMatrix CostMatrix::transposed() const {
  CostMatrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  }
  return t;
}

MatchResult solve(const CostMatrix& costs) {
  const std::size_t m = costs.rows();
  const std::size_t n = costs.cols();
  if (m > n) throw std::invalid_argument("assignment: more rows than columns");
  for (double v : costs.data()) {
    if (!std::isfinite(v)) throw std::invalid_argument("assignment: non-finite cost");
  }

  MatchResult result;
  if (m == 0) {
    for (std::size_t c = 0; c < n; ++c) result.unmatched_cols.push_back(static_cast<int>(c));
    return result;
  }

  constexpr double inf = std::numeric_limits<double>::infinity();
  // 1-based indexing; column 0 is the virtual source of each augmentation.
  std::vector<double> u(m + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> col_owner(n + 1, 0), way(n + 1, 0);
  std::vector<double> dist(n + 1);
  std::vector<char> done(n + 1);

  for (std::size_t row = 1; row <= m; ++row) {
    col_owner[0] = row;
    std::size_t col = 0;
    std::fill(dist.begin(), dist.end(), inf);
    std::fill(done.begin(), done.end(), 0);
    // Dijkstra over reduced costs until a free column is reached.
    do {
      done[col] = 1;
      const std::size_t r = col_owner[col];
      double delta = inf;
      std::size_t next = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (done[j]) continue;
        const double reduced = costs(r - 1, j - 1) - u[r] - v[j];
        if (reduced < dist[j]) {
          dist[j] = reduced;
          way[j] = col;
        }
        if (dist[j] < delta) {
          delta = dist[j];
          next = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (done[j]) {
          u[col_owner[j]] += delta;
          v[j] -= delta;
        } else {
          dist[j] -= delta;
        }
      }
      col = next;
    } while (col_owner[col] != 0);
    // Flip the alternating path back to the source.
    do {
      const std::size_t prev = way[col];
      col_owner[col] = col_owner[prev];
      col = prev;
    } while (col != 0);
  }

  result.row_to_col.assign(m, -1);
  for (std::size_t j = 1; j <= n; ++j) {
    if (col_owner[j] != 0) {
      result.row_to_col[col_owner[j] - 1] = static_cast<int>(j - 1);
    } else {
      result.unmatched_cols.push_back(static_cast<int>(j - 1));
    }
  }
  for (std::size_t r = 0; r < m; ++r) {
    result.total_cost += costs(r, static_cast<std::size_t>(result.row_to_col[r]));
  }
  return result;
}

}  // namespace lsp
