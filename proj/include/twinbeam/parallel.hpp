#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <optional>
#include <thread>
#include <vector>

namespace twinbeam {

inline unsigned default_worker_count() {
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs produce(i) for i in [0, n) on up to `workers` threads and hands each
/// result to consume(i, result) strictly in index order. Work is done in
/// batches so that at most `workers * batch_factor` results are alive at once.
template <class Produce, class Consume>
void ordered_parallel_for(std::size_t n, unsigned workers, Produce&& produce,
                          Consume&& consume, std::size_t batch_factor = 4) {
  using Result = decltype(produce(std::size_t{}));
  workers = std::max(1u, workers);
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) consume(i, produce(i));
    return;
  }
  const std::size_t batch = static_cast<std::size_t>(workers) * batch_factor;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t stop = std::min(n, start + batch);
    std::vector<std::optional<Result>> slots(stop - start);
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = start + w; i < stop; i += workers)
            slots[i - start].emplace(produce(i));
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
    for (std::size_t i = start; i < stop; ++i)
      consume(i, std::move(*slots[i - start]));
  }
}

}  // namespace twinbeam
