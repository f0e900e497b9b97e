#pragma once

#include <cstddef>
#include <vector>

namespace lsp {

// Dense rows x cols cost matrix, row-major. Rows are ground-truth items,
// columns are predictions.
class CostMatrix {
 public:
  CostMatrix() = default;
  CostMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  const std::vector<double>& data() const noexcept { return data_; }

  CostMatrix transposed() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct MatchResult {
  std::vector<int> row_to_col;       // injective, one entry per row
  double total_cost = 0.0;           // sum of the selected entries
  std::vector<int> unmatched_cols;   // ascending
};

// Minimum-cost injective assignment of every row to a distinct column using
// shortest augmenting paths with dual potentials. O(rows^2 * cols).
// Ties resolve towards the smallest column index, so the result is a pure
// function of the input.
// Throws std::invalid_argument when rows > cols or an entry is not finite.
MatchResult solve(const CostMatrix& costs);

}  // namespace lsp
