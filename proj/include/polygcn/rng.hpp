#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace polygcn {

/// Seed-controlled generator. Draws are derived from raw 64-bit engine
/// output (not std:: distributions) so sequences are identical across
/// standard libraries.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n), unbiased.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller.
  double normal();

  /// `count` distinct indices from [0, n) without replacement, in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count);

  /// Independent stream for (this seed, index); does not advance this one.
  SeededRng child(std::uint64_t index) const;

  std::string state() const;
  void set_state(const std::string& state);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace polygcn
