#pragma once

// Independent scalar-loop reference implementations used to cross-check the
// library. Everything here is written in the most naive way possible — plain
// loops over std::vector<double> — and deliberately shares no code with the
// library's tensor ops.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace oracle {

using Grid = std::vector<std::vector<double>>;

inline Grid make_grid(std::size_t r, std::size_t c, double fill = 0.0) {
  return Grid(r, std::vector<double>(c, fill));
}

// y = x W^T + b with W given as [out][in]
inline Grid linear(const Grid& x, const Grid& w, const std::vector<double>& b) {
  Grid y = make_grid(x.size(), w.size());
  for (std::size_t t = 0; t < x.size(); ++t)
    for (std::size_t o = 0; o < w.size(); ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < x[t].size(); ++i) s += x[t][i] * w[o][i];
      y[t][o] = s;
    }
  return y;
}

inline std::vector<double> softmax(const std::vector<double>& v) {
  double m = *std::max_element(v.begin(), v.end());
  std::vector<double> e(v.size());
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    e[i] = std::exp(v[i] - m);
    s += e[i];
  }
  for (auto& x : e) x /= s;
  return e;
}

// Full multi-head attention, one scalar at a time. Weight matrices are
// [out][in]; q/k/v/out projections all d->d.
inline Grid attention(const Grid& queries, const Grid& keys_values, std::size_t heads,
                      const Grid& wq, const std::vector<double>& bq, const Grid& wk,
                      const std::vector<double>& bk, const Grid& wv,
                      const std::vector<double>& bv, const Grid& wo,
                      const std::vector<double>& bo) {
  const std::size_t d = queries[0].size();
  const std::size_t hd = d / heads;
  Grid q = linear(queries, wq, bq);
  Grid k = linear(keys_values, wk, bk);
  Grid v = linear(keys_values, wv, bv);
  Grid mixed = make_grid(queries.size(), d);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t t = 0; t < q.size(); ++t) {
      std::vector<double> scores(k.size());
      for (std::size_t u = 0; u < k.size(); ++u) {
        double s = 0.0;
        for (std::size_t i = 0; i < hd; ++i) s += q[t][h * hd + i] * k[u][h * hd + i];
        scores[u] = s / std::sqrt(static_cast<double>(hd));
      }
      auto a = softmax(scores);
      for (std::size_t i = 0; i < hd; ++i) {
        double s = 0.0;
        for (std::size_t u = 0; u < k.size(); ++u) s += a[u] * v[u][h * hd + i];
        mixed[t][h * hd + i] = s;
      }
    }
  }
  return linear(mixed, wo, bo);
}

// Unpadded strided 1-D convolution; w is [out][kernel*c_in] matching the
// window flattened time-major.
inline Grid conv1d(const Grid& x, const Grid& w, const std::vector<double>& b,
                   std::size_t kernel, std::size_t stride) {
  const std::size_t cin = x[0].size();
  const std::size_t lout = (x.size() - kernel) / stride + 1;
  Grid y = make_grid(lout, w.size());
  for (std::size_t t = 0; t < lout; ++t)
    for (std::size_t o = 0; o < w.size(); ++o) {
      double s = b[o];
      for (std::size_t kk = 0; kk < kernel; ++kk)
        for (std::size_t c = 0; c < cin; ++c) s += w[o][kk * cin + c] * x[t * stride + kk][c];
      y[t][o] = s;
    }
  return y;
}

// Masked bidirectional contrastive loss, enumerated term by term. `a_to_i`
// walks rows (caption i against all images j); the other direction walks
// columns. mask[i][j] == 1 keeps pair (i,j) as a negative.
inline double masked_infonce(const Grid& s, const std::vector<std::vector<int>>& mask,
                             double delta, bool a_to_i) {
  const std::size_t b = s.size();
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double pos = a_to_i ? s[i][i] : s[i][i];
    double num = std::exp(pos - delta);
    double den = num;
    for (std::size_t j = 0; j < b; ++j) {
      double neg = a_to_i ? s[i][j] : s[j][i];
      int m = a_to_i ? mask[i][j] : mask[j][i];
      if (m) den += std::exp(neg);
    }
    total += std::log(num / den);
  }
  return -total / static_cast<double>(b);
}

// Fraction of queries whose top-k ranking hits at least one gold id.
inline double recall_at_k(const std::map<std::string, std::vector<std::string>>& rankings,
                          const std::map<std::string, std::set<std::string>>& gold,
                          std::size_t k) {
  std::size_t hits = 0;
  for (const auto& [query, ranked] : rankings) {
    const auto& golds = gold.at(query);
    bool hit = false;
    for (std::size_t i = 0; i < ranked.size() && i < k; ++i) hit = hit || golds.count(ranked[i]);
    hits += hit;
  }
  return static_cast<double>(hits) / static_cast<double>(rankings.size());
}

// One update of the moment-tracking rule without bias correction:
// m <- b1 m + (1-b1) g ; v <- b2 v + (1-b2) g^2 ;
// theta <- theta - lr (m / (sqrt(v) + eps) + wd theta)
struct AdamScalar {
  double m = 0.0, v = 0.0;
  double step(double theta, double g, double lr, double b1, double b2, double eps, double wd) {
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    return theta - lr * (m / (std::sqrt(v) + eps) + wd * theta);
  }
};

}  // namespace oracle
