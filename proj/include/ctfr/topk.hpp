#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace ctfr {

// Top-k indices of `scores` by descending score, ties broken by lowest index.
// Returns min(k, N) entries.
inline std::vector<std::pair<std::int64_t, double>> topk(std::span<const double> scores,
                                                         std::int64_t k) {
  if (scores.empty()) throw std::invalid_argument("topk: empty score vector");
  if (k < 1) throw std::invalid_argument("topk: k must be positive");
  const auto n = static_cast<std::int64_t>(scores.size());
  const auto kk = std::min(k, n);
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  auto better = [&](std::int64_t a, std::int64_t b) {
    if (scores[static_cast<std::size_t>(a)] != scores[static_cast<std::size_t>(b)])
      return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
    return a < b;
  };
  std::partial_sort(idx.begin(), idx.begin() + kk, idx.end(), better);
  std::vector<std::pair<std::int64_t, double>> out;
  out.reserve(static_cast<std::size_t>(kk));
  for (std::int64_t i = 0; i < kk; ++i)
    out.emplace_back(idx[static_cast<std::size_t>(i)],
                     scores[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
  return out;
}

}  // namespace ctfr
