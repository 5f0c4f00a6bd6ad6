#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "expt/kernels.hpp"

namespace expt::nn {

/// allow(i, j) is true iff token i may attend token j. Every row must allow
/// itself, which also guarantees at least one allowed entry per row.
class AttentionMask {
 public:
  AttentionMask() = default;
  /// All-false n x n mask; fill with set() and then validate().
  explicit AttentionMask(std::size_t n) : n_(n), allow_(n * n, 0) {}

  std::size_t size() const { return n_; }
  bool allow(std::size_t i, std::size_t j) const { return allow_[i * n_ + j] != 0; }
  void set(std::size_t i, std::size_t j, bool on) { allow_[i * n_ + j] = on ? 1 : 0; }

  /// Throws InputError if a row is empty or the diagonal is not allowed.
  void validate() const;

  kernels::AttentionPattern pattern() const;

 private:
  std::size_t n_ = 0;
  std::vector<std::uint8_t> allow_;
};

}  // namespace expt::nn
