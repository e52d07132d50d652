#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace nmf {

/// Invalid input, inconsistent shapes or violated preconditions.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed file content. The message names the file line where possible.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values during a forward pass or training.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using NodeId = int;
using NodeSet = std::vector<NodeId>;

/// splitmix64 finalizer; used to derive independent substream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Random stream with platform-independent output. The engine is fully
/// specified by the standard; the distributions below are written out so
/// that results do not depend on the standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer on [0, bound), bound > 0.
  std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t r;
    do {
      r = engine_();
    } while (r >= limit);
    return r % bound;
  }

  /// Uniform integer on [lo, hi].
  int between(int lo, int hi) {
    return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  std::uint64_t next() { return engine_(); }

  /// Independent stream keyed by (seed, index).
  static Rng substream(std::uint64_t seed, std::uint64_t index) {
    return Rng(mix_seed(seed, index));
  }

 private:
  std::mt19937_64 engine_;
};

/// Fisher-Yates with Rng::below, deterministic across platforms.
template <class T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = rng.below(i);
    std::swap(items[i - 1], items[j]);
  }
}

/// Parses "0,3,7" into a node list. Whitespace is ignored.
NodeSet parse_node_list(const std::string& text);
std::string format_node_list(const NodeSet& nodes);

/// Shortest decimal text that round-trips a double (up to 17 digits).
std::string format_double(double value);

}  // namespace nmf
