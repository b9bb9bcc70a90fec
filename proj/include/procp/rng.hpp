#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace procp {

std::uint64_t splitmix64(std::uint64_t& state);

// Seed of stream `stream` under a master seed. Streams are independent of the
// order in which they are requested, so parallel and serial runs agree.
std::uint64_t substream_seed(std::uint64_t master, std::uint64_t stream);

// Every draw is computed here from raw engine bits so results do not depend
// on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  static Rng substream(std::uint64_t master, std::uint64_t stream) {
    return Rng(substream_seed(master, stream));
  }

  std::uint64_t bits() { return engine_(); }
  // [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // (0, 1), never exactly zero.
  double uniform_open();
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  bool bernoulli(double p) { return uniform() < p; }
  // Uniform on {0, ..., n-1}, unbiased.
  std::uint64_t below(std::uint64_t n);

  template <class T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::swap(values[i - 1], values[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace procp
