#include "dirrec/common.hpp"

#include <algorithm>
#include <sstream>
#include <thread>

namespace dirrec {

void fill_uniform(std::span<double> values, double scale, Rng& rng) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (double& v : values) v = dist(rng);
}

void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t)>& body) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::jthread> workers;
  workers.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    workers.emplace_back([&, t] {
      for (std::size_t i = t; i < count; i += threads) body(i);
    });
  }
}

std::string rng_state(const Rng& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

void restore_rng_state(Rng& rng, const std::string& state) {
  std::istringstream in(state);
  in >> rng;
  if (!in) throw InputError("corrupt RNG state");
}

}  // namespace dirrec
