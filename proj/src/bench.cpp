#include "stjla/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <ostream>
#include <random>

#include "stjla/attention.hpp"

#if defined(__linux__)
#include <malloc.h>
#include <sys/wait.h>
#include <unistd.h>
#endif

namespace stjla {

namespace {

struct Instance {
  Matrix q, k, v;
};

Instance make_instance(Index m, Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Instance in{Matrix(m, d), Matrix(m, d), Matrix(m, d)};
  for (Matrix* x : {&in.q, &in.k, &in.v}) {
    for (Index i = 0; i < x->size(); ++i) x->data()[i] = static_cast<Scalar>(u(rng));
  }
  return in;
}

void check_convex(const Matrix& out, const Matrix& v, const char* variant, Index m) {
  const auto lo = v.colwise().minCoeff();
  const auto hi = v.colwise().maxCoeff();
  const Scalar tol = std::is_same_v<Scalar, double> ? Scalar(1e-10) : Scalar(1e-5);
  for (Index i = 0; i < out.rows(); ++i) {
    for (Index j = 0; j < out.cols(); ++j) {
      if (!(out(i, j) >= lo(j) - tol && out(i, j) <= hi(j) + tol)) {
        throw BenchCheckError(std::string(variant) + " attention output leaves the convex hull of V at M=" +
                              std::to_string(m) + ", row " + std::to_string(i));
      }
    }
  }
}

void check_identity(Index d, std::uint64_t seed) {
  const Instance in = make_instance(1, d, seed);
  const Matrix s = softmax_attention(in.q, in.k, in.v);
  const Matrix l = linear_attention(in.q, in.k, in.v);
  if ((s - l).cwiseAbs().maxCoeff() > 1e-12 || (s - in.v).cwiseAbs().maxCoeff() > 1e-12) {
    throw BenchCheckError("softmax and linear attention disagree at M=1");
  }
}

struct MemoryJob {
  Index m, d;
  std::uint64_t seed;
  bool quadratic;
};

void run_job(void* arg) {
  const auto* job = static_cast<const MemoryJob*>(arg);
  const Instance in = make_instance(job->m, job->d, job->seed);
  Matrix out = job->quadratic ? softmax_attention(in.q, in.k, in.v) : linear_attention(in.q, in.k, in.v);
  // Keep the result observable so the work is not elided.
  if (!std::isfinite(out.sum())) std::abort();
}

template <typename Fn>
double median_seconds(Index repeats, Fn&& fn) {
  std::vector<double> times;
  for (Index r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(times.begin(), times.end());
  const std::size_t n = times.size();
  return n % 2 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
}

#if defined(__linux__)
long long status_bytes(const char* key) {
  std::ifstream in("/proc/self/status");
  std::string line;
  const std::size_t len = std::strlen(key);
  while (std::getline(in, line)) {
    if (line.compare(0, len, key) == 0) return std::stoll(line.substr(len + 1)) * 1024;
  }
  return -1;
}
#endif

}  // namespace

long long measure_peak_bytes(void (*fn)(void*), void* arg) {
#if defined(__linux__)
  int fds[2];
  if (pipe(fds) != 0) return -1;
  const pid_t pid = fork();
  if (pid < 0) {
    close(fds[0]);
    close(fds[1]);
    return -1;
  }
  if (pid == 0) {
    close(fds[0]);
    // Large blocks get their own mappings, so reused heap pages cannot hide growth.
    mallopt(M_MMAP_THRESHOLD, 64 * 1024);
    // Free chunks inherited from the parent are already resident; hand them
    // back so that reusing them shows up as growth.
    malloc_trim(0);
    long long result = -1;
    {
      std::ofstream reset("/proc/self/clear_refs");
      reset << "5";
    }
    const long long base = status_bytes("VmRSS:");
    const long long hwm0 = status_bytes("VmHWM:");
    // If the reset did not take, the inherited peak would swamp the reading.
    if (base >= 0 && hwm0 >= 0 && hwm0 - base < 1024 * 1024) {
      fn(arg);
      result = status_bytes("VmHWM:") - base;
    }
    [[maybe_unused]] auto n = write(fds[1], &result, sizeof(result));
    close(fds[1]);
    _exit(0);
  }
  close(fds[1]);
  long long result = -1;
  if (read(fds[0], &result, sizeof(result)) != static_cast<ssize_t>(sizeof(result))) result = -1;
  close(fds[0]);
  int status = 0;
  waitpid(pid, &status, 0);
  return result;
#else
  (void)fn;
  (void)arg;
  return -1;
#endif
}

std::vector<BenchRow> run_bench(const BenchOptions& o) {
  if (o.dim < 1 || o.repeats < 1) throw ContractError("bench: dim and repeats must be positive");
  for (Index m : o.sizes) {
    if (m < 1) throw ContractError("bench: sizes must be positive");
  }
  check_identity(o.dim, o.seed);

  std::vector<BenchRow> rows;
  for (Index m : o.sizes) {
    const double score_bytes = static_cast<double>(m) * static_cast<double>(m) * sizeof(Scalar);
    const bool run_quadratic = score_bytes <= o.budget_bytes;
    const Instance in = make_instance(m, o.dim, o.seed + static_cast<std::uint64_t>(m));

    if (run_quadratic) {
      check_convex(softmax_attention(in.q, in.k, in.v), in.v, "softmax", m);
    } else if (o.log) {
      *o.log << "skipping softmax at M=" << m << ": score matrix needs " << score_bytes
             << " bytes, budget is " << o.budget_bytes << "\n";
    }
    check_convex(linear_attention(in.q, in.k, in.v), in.v, "linear", m);

    for (bool quadratic : {true, false}) {
      if (quadratic && !run_quadratic) continue;
      BenchRow row;
      row.m = m;
      row.variant = quadratic ? "softmax" : "linear";
      Scalar sink = 0;
      row.seconds = median_seconds(o.repeats, [&] {
        const Matrix out =
            quadratic ? softmax_attention(in.q, in.k, in.v) : linear_attention(in.q, in.k, in.v);
        sink += out(0, 0);
      });
      if (!std::isfinite(sink)) throw BenchCheckError("non-finite attention output at M=" + std::to_string(m));
      if (o.measure_memory) {
        MemoryJob job{m, o.dim, o.seed + static_cast<std::uint64_t>(m), quadratic};
        row.bytes = measure_peak_bytes(&run_job, &job);
      }
      if (o.log) {
        *o.log << "M=" << m << " " << row.variant << " " << row.seconds << " s, " << row.bytes << " bytes\n";
      }
      rows.push_back(row);
    }
  }
  return rows;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
  out << "m,variant,seconds,bytes\n";
  for (const BenchRow& r : rows) out << r.m << ',' << r.variant << ',' << r.seconds << ',' << r.bytes << '\n';
}

}  // namespace stjla
