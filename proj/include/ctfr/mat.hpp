#pragma once

#include <cstdint>
#include <vector>

namespace ctfr {

using Vec = std::vector<double>;

// Plain row-major matrix used on the value side (indexes, cached encodings,
// score matrices). Graph-tracked math lives in Tensor.
struct Mat {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(std::int64_t r, std::int64_t c) : rows(r), cols(c), v(static_cast<std::size_t>(r * c), 0.0) {}

  double& at(std::int64_t r, std::int64_t c) { return v[static_cast<std::size_t>(r * cols + c)]; }
  double at(std::int64_t r, std::int64_t c) const {
    return v[static_cast<std::size_t>(r * cols + c)];
  }

  std::int64_t size() const { return rows * cols; }

  bool operator==(const Mat& o) const { return rows == o.rows && cols == o.cols && v == o.v; }
};

}  // namespace ctfr
