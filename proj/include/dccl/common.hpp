#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dccl {

using UserId = std::uint32_t;
using ItemId = std::uint32_t;

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dense row-major matrix of doubles. All embedding tables and score
/// buffers use this; rows are contiguous so row() spans are cheap.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  std::span<double> row(std::size_t i) {
    return {data.data() + i * cols, cols};
  }
  std::span<const double> row(std::size_t i) const {
    return {data.data() + i * cols, cols};
  }
  void fill(double x) { std::fill(data.begin(), data.end(), x); }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// y += a * x
inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

/// Shortest decimal form that round-trips a double exactly (%.17g, trimmed).
std::string format_g17(double x);

/// Thread cap for internal parallelism. Reads DCCL_THREADS once; falls back
/// to hardware_concurrency.
unsigned thread_cap();

/// Runs fn(begin, end) over [0, n) split into contiguous chunks, one per
/// worker. Workers write to disjoint output slots, so results do not depend
/// on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace dccl
