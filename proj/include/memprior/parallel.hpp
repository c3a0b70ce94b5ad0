#pragma once

#include <cstdint>
#include <exception>
#include <mutex>
#include <random>

#include <Eigen/Core>

namespace memprior {

using Index = Eigen::Index;

/// Execution policy for the data-parallel kernels. `serial` is the reference
/// path; `parallel` distributes independent iterations over OpenMP threads and
/// must produce bitwise-identical results.
enum class Exec { serial, parallel };

void set_thread_count(int n);
int thread_count();

/// Runs body(i) for i in [0, n). Exceptions thrown inside worker threads are
/// captured and the first one is rethrown on the calling thread.
template <class Body>
void for_each_index(Exec exec, Index n, Body&& body) {
  if (exec == Exec::serial || n < 2) {
    for (Index i = 0; i < n; ++i) body(i);
    return;
  }
  std::exception_ptr first;
  std::mutex guard;
#pragma omp parallel for schedule(dynamic)
  for (Index i = 0; i < n; ++i) {
    try {
      body(i);
    } catch (...) {
      std::lock_guard<std::mutex> lock(guard);
      if (!first) first = std::current_exception();
    }
  }
  if (first) std::rethrow_exception(first);
}

/// splitmix64 finalizer; used to derive decorrelated per-stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent generator for stream `stream` of a run seeded with `seed`.
/// Batch kernels give every row its own stream so that the serial and parallel
/// paths draw identical numbers.
inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
  return std::mt19937_64(mix_seed(mix_seed(seed) ^ mix_seed(stream + 0x5851f42d4c957f2dULL)));
}

}  // namespace memprior
