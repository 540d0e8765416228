#pragma once

// Counter-based random streams.
//
// Every random quantity in the library is a pure function of a 64-bit key and
// a position counter, so results never depend on call order or on which
// thread draws them. Keys for sub-tasks are derived with `derive_seed`.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace rdlr {

/// SplitMix64 finalizer; a bijective avalanche mix of one 64-bit word.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Key for the sub-stream `path` of `master`, e.g. derive_seed(master, {step, role}).
constexpr std::uint64_t derive_seed(std::uint64_t master,
                                    std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t key = mix64(master);
  for (auto p : path) key = mix64(key ^ mix64(p + 0x632be59bd9b4e019ULL));
  return key;
}

class CounterRng {
 public:
  explicit constexpr CounterRng(std::uint64_t key) noexcept : key_(key) {}

  constexpr std::uint64_t key() const noexcept { return key_; }

  constexpr std::uint64_t bits(std::uint64_t counter) const noexcept {
    return mix64(key_ ^ mix64(counter));
  }

  /// Uniform on the open interval (0, 1) with 53 random bits.
  double uniform(std::uint64_t counter) const noexcept {
    return (static_cast<double>(bits(counter) >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller on counters (2k, 2k+1).
  double normal(std::uint64_t k) const noexcept {
    const double u1 = uniform(2 * k);
    const double u2 = uniform(2 * k + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// rows x cols matrix of i.i.d. N(0,1); entry (i, j) uses counter j*rows + i.
  Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols) const {
    Eigen::MatrixXd g(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i)
        g(i, j) = normal(static_cast<std::uint64_t>(j * rows + i));
    return g;
  }

 private:
  std::uint64_t key_;
};

}  // namespace rdlr
