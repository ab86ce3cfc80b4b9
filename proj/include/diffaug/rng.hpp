#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "diffaug/tensor.hpp"

namespace diffaug {

/// Seedable random stream with a serializable state. Distribution transforms
/// are implemented here (not via <random> distributions) so a saved state
/// fully determines every future draw.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);
  /// Independent stream `stream` derived from a master seed.
  static Rng derive(std::uint64_t master_seed, std::uint64_t stream);

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [lo, hi).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  Tensor normal_tensor(const Shape& shape, float stddev = 1.0f);
  std::vector<std::int64_t> permutation(std::int64_t n);

  std::string serialize() const;
  void deserialize(const std::string& state);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace diffaug
