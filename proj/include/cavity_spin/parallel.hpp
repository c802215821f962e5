#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace cavity_spin {

/// Worker count: hardware concurrency capped by CAVITY_SPIN_THREADS.
inline unsigned worker_count() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("CAVITY_SPIN_THREADS")) {
    try {
      const long cap = std::stol(env);
      if (cap >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
    } catch (...) {
    }
  }
  return n;
}

/// Splits [0, count) into contiguous chunks and runs fn(lo, hi) on each.
/// Chunks write disjoint outputs, so results do not depend on the worker count.
template <class Fn>
void parallel_for(std::size_t count, Fn&& fn, std::size_t min_chunk = 1) {
  const std::size_t workers =
      std::min<std::size_t>(worker_count(), std::max<std::size_t>(1, count / std::max<std::size_t>(1, min_chunk)));
  if (workers <= 1) {
    fn(std::size_t{0}, count);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  const std::size_t step = (count + workers - 1) / workers;
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t lo = w * step, hi = std::min(count, lo + step);
    if (lo < hi) pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  fn(std::size_t{0}, std::min(count, step));
  for (auto& t : pool) t.join();
}

/// Fixed-order pairwise summation of term(0) + ... + term(n-1).
/// The tree shape depends only on n, so sums are bit-reproducible.
template <class T, class Term>
T pairwise_sum(std::size_t lo, std::size_t hi, const Term& term) {
  if (hi - lo <= 8) {
    T s{};
    for (std::size_t i = lo; i < hi; ++i) s += term(i);
    return s;
  }
  const std::size_t mid = lo + (hi - lo) / 2;
  T left = pairwise_sum<T>(lo, mid, term);
  left += pairwise_sum<T>(mid, hi, term);
  return left;
}

template <class T, class Term>
T pairwise_sum(std::size_t n, const Term& term) {
  return pairwise_sum<T>(std::size_t{0}, n, term);
}

}  // namespace cavity_spin
