#include <doctest.h>

#include <chrono>
#include <cmath>
#include <limits>
#include <set>

#include "lsp/assignment.hpp"
#include "oracles/oracles.hpp"

using namespace lsp;

namespace {

CostMatrix from_rows(const std::vector<std::vector<double>>& rows) {
  CostMatrix c(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) c(i, j) = rows[i][j];
  return c;
}

void check_consistent(const CostMatrix& c, const MatchResult& r) {
  REQUIRE(r.row_to_col.size() == c.rows());
  std::set<int> used;
  double sum = 0.0;
  for (std::size_t i = 0; i < c.rows(); ++i) {
    const int j = r.row_to_col[i];
    REQUIRE(j >= 0);
    REQUIRE(static_cast<std::size_t>(j) < c.cols());
    CHECK(used.insert(j).second);
    sum += c(i, static_cast<std::size_t>(j));
  }
  CHECK(r.total_cost == doctest::Approx(sum).epsilon(1e-12));
  CHECK(r.unmatched_cols.size() == c.cols() - c.rows());
  for (int j : r.unmatched_cols) CHECK(used.count(j) == 0);
  CHECK(std::is_sorted(r.unmatched_cols.begin(), r.unmatched_cols.end()));
}

}  // namespace

TEST_CASE("small worked examples") {
  auto r = solve(from_rows({{1, 2}, {2, 1}}));
  CHECK(r.row_to_col == std::vector<int>{0, 1});
  CHECK(r.total_cost == 2.0);

  r = solve(from_rows({{5, 3}}));
  CHECK(r.row_to_col == std::vector<int>{1});
  CHECK(r.total_cost == 3.0);
  CHECK(r.unmatched_cols == std::vector<int>{0});

  r = solve(CostMatrix(0, 3));
  CHECK(r.row_to_col.empty());
  CHECK(r.unmatched_cols == std::vector<int>{0, 1, 2});
}

TEST_CASE("optimal against exhaustive enumeration") {
  Rng rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t m = rng.below(7);
    const std::size_t n = m + rng.below(9 - m);
    std::vector<std::vector<double>> rows(m, std::vector<double>(n));
    const bool integer = trial % 3 == 0;  // forces many ties
    for (auto& row : rows)
      for (auto& v : row) v = integer ? static_cast<double>(rng.below(4)) : rng.uniform(-5, 5);
    const auto c = from_rows(rows);
    const auto r = solve(c);
    check_consistent(c, r);
    CHECK(r.total_cost == doctest::Approx(oracle::brute_force_assignment(rows)).epsilon(1e-9));
  }
}

TEST_CASE("5x7 example") {
  Rng rng(57);
  std::vector<std::vector<double>> rows(5, std::vector<double>(7));
  for (auto& row : rows)
    for (auto& v : row) v = rng.uniform(0, 1);
  CHECK(solve(from_rows(rows)).total_cost ==
        doctest::Approx(oracle::brute_force_assignment(rows)).epsilon(1e-12));
}

TEST_CASE("row shift moves the optimum by the shift") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 1 + rng.below(6), n = m + rng.below(3);
    CostMatrix c(m, n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) c(i, j) = rng.uniform(0, 10);
    const double base = solve(c).total_cost;
    const std::size_t row = rng.below(m);
    const double shift = rng.uniform(-3, 3);
    for (std::size_t j = 0; j < n; ++j) c(row, j) += shift;
    CHECK(solve(c).total_cost == doctest::Approx(base + shift).epsilon(1e-9));
  }
}

TEST_CASE("ties are broken deterministically towards small columns") {
  const auto r = solve(CostMatrix(3, 5, 1.0));
  CHECK(r.row_to_col == std::vector<int>{0, 1, 2});
  CHECK(r.unmatched_cols == std::vector<int>{3, 4});
}

TEST_CASE("errors") {
  CHECK_THROWS_AS(solve(CostMatrix(3, 2)), std::invalid_argument);
  CostMatrix c(2, 2);
  c(1, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(solve(c), std::invalid_argument);
  c(1, 1) = std::nan("");
  CHECK_THROWS_AS(solve(c), std::invalid_argument);
}

TEST_CASE("transpose") {
  const auto c = from_rows({{1, 2, 3}, {4, 5, 6}});
  const auto t = c.transposed();
  CHECK(t.rows() == 3);
  CHECK(t(2, 1) == 6);
}

TEST_CASE("324 x 324 solves quickly") {
  Rng rng(324);
  CostMatrix c(324, 324);
  for (std::size_t i = 0; i < 324; ++i)
    for (std::size_t j = 0; j < 324; ++j) c(i, j) = rng.uniform(0, 100);
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = solve(c);
  const double ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  check_consistent(c, r);
  MESSAGE("324x324 solve took " << ms << " ms");
  CHECK(ms < 100.0);
}
