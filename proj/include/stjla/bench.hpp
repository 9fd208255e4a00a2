#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "stjla/tensor.hpp"

namespace stjla {

struct BenchOptions {
  std::vector<Index> sizes{1024, 4096};  // token counts M = T * N
  Index dim = 16;
  Index repeats = 5;
  /// Quadratic runs whose M x M score matrix would exceed this are skipped.
  double budget_bytes = 1024.0 * 1024.0 * 1024.0;
  bool measure_memory = true;
  std::uint64_t seed = 0;
  std::ostream* log = nullptr;
};

struct BenchRow {
  Index m = 0;
  std::string variant;  // "softmax" or "linear"
  double seconds = 0;   // median over repeats
  long long bytes = -1; // peak resident growth during one run; -1 if not measured
};

/// Raised when the kernels disagree on the cross-checks that gate timing.
class BenchCheckError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Times softmax and linear attention at each size. Before timing, the M = 1
/// outputs of both kernels must agree and every output must lie in the
/// convex hull of V's columns.
std::vector<BenchRow> run_bench(const BenchOptions& options);

/// Header `m,variant,seconds,bytes`.
void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows);

/// Peak resident-set growth, in bytes, while `fn` runs in a forked child.
/// Returns -1 where the platform cannot measure it.
long long measure_peak_bytes(void (*fn)(void*), void* arg);

}  // namespace stjla
