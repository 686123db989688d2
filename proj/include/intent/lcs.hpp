#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

namespace intent {

/// Longest common subsequence with a deterministic witness.
///
/// Table: C[i][j] = 0 on the borders, C[i-1][j-1] + 1 on a match, else
/// max(C[i][j-1], C[i-1][j]). The backtrace takes a match first and, on a
/// tie between the two neighbours, moves up (drops an element of `x`).
template <typename T>
std::vector<T> lcs(std::span<const T> x, std::span<const T> y) {
  const std::size_t n = x.size(), m = y.size();
  std::vector<std::size_t> c((n + 1) * (m + 1), 0);
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return c[i * (m + 1) + j]; };
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      at(i, j) = x[i - 1] == y[j - 1] ? at(i - 1, j - 1) + 1 : std::max(at(i, j - 1), at(i - 1, j));

  std::vector<T> out;
  out.reserve(at(n, m));
  std::size_t i = n, j = m;
  while (i > 0 && j > 0) {
    if (x[i - 1] == y[j - 1]) {
      out.push_back(x[i - 1]);
      --i;
      --j;
    } else if (at(i - 1, j) >= at(i, j - 1)) {
      --i;
    } else {
      --j;
    }
  }
  std::reverse(out.begin(), out.end());
  return out;
}

template <typename T>
std::vector<T> lcs(const std::vector<T>& x, const std::vector<T>& y) {
  return lcs(std::span<const T>(x), std::span<const T>(y));
}

/// Length only, two-row table.
template <typename T>
std::size_t lcs_length(std::span<const T> x, std::span<const T> y) {
  if (x.size() < y.size()) std::swap(x, y);
  std::vector<std::size_t> prev(y.size() + 1, 0), cur(y.size() + 1, 0);
  for (std::size_t i = 1; i <= x.size(); ++i) {
    for (std::size_t j = 1; j <= y.size(); ++j)
      cur[j] = x[i - 1] == y[j - 1] ? prev[j - 1] + 1 : std::max(cur[j - 1], prev[j]);
    std::swap(prev, cur);
  }
  return prev[y.size()];
}

template <typename T>
std::size_t lcs_length(const std::vector<T>& x, const std::vector<T>& y) {
  return lcs_length(std::span<const T>(x), std::span<const T>(y));
}

/// True when `sub` can be obtained from `seq` by deleting elements.
template <typename T>
bool is_subsequence(std::span<const T> sub, std::span<const T> seq) {
  std::size_t k = 0;
  for (std::size_t i = 0; i < seq.size() && k < sub.size(); ++i)
    if (seq[i] == sub[k]) ++k;
  return k == sub.size();
}

template <typename T>
bool is_subsequence(const std::vector<T>& sub, const std::vector<T>& seq) {
  return is_subsequence(std::span<const T>(sub), std::span<const T>(seq));
}

}  // namespace intent
