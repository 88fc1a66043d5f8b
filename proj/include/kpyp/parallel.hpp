#pragma once

#include <algorithm>
#include <functional>
#include <thread>
#include <vector>

namespace kpyp {

/// Runs fn(begin, end) over disjoint row ranges on up to `jobs` threads.
/// Chunks are fixed by (rows, jobs) alone, and callers only ever write to
/// disjoint rows, so results are identical for any job count.
inline void parallel_for_rows(int rows, int jobs, const std::function<void(int, int)>& fn) {
  jobs = std::max(1, std::min(jobs, rows));
  if (jobs == 1) {
    fn(0, rows);
    return;
  }
  const int chunk = (rows + jobs - 1) / jobs;
  std::vector<std::thread> threads;
  threads.reserve(jobs);
  for (int t = 0; t < jobs; ++t) {
    const int lo = t * chunk;
    const int hi = std::min(rows, lo + chunk);
    if (lo >= hi) break;
    threads.emplace_back(fn, lo, hi);
  }
  for (auto& th : threads) th.join();
}

}  // namespace kpyp
