#pragma once

// Data-parallel compute kernels. Every kernel in `expt::kernels` has an
// OpenMP-parallel implementation; `expt::kernels::serial` keeps plain
// single-threaded versions used as test references and benchmark baselines.
//
// All matrices are dense row-major. Each output row of the parallel kernels
// is produced by exactly one thread with a fixed summation order, so results
// are bitwise independent of the thread count.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace expt::kernels {

enum class Trans { kNo, kYes };

/// C[M,N] (+)= op(A)[M,K] * op(B)[K,N]. A is stored [M,K] (or [K,M] when
/// transposed), B is stored [K,N] (or [N,K]).
template <typename T>
void gemm(Trans ta, Trans tb, std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C,
          bool accumulate);

/// Row-sparse attention pattern: row i may attend cols[row_ptr[i] .. row_ptr[i+1]).
struct AttentionPattern {
  std::vector<std::uint32_t> row_ptr;
  std::vector<std::uint32_t> cols;
  std::size_t seq() const { return row_ptr.empty() ? 0 : row_ptr.size() - 1; }
  std::size_t nnz() const { return cols.size(); }
};

struct AttentionShape {
  std::size_t batch = 1;
  std::size_t seq = 1;
  std::size_t heads = 1;
  std::size_t head_dim = 1;
  std::size_t model_dim() const { return heads * head_dim; }
  std::size_t rows() const { return batch * seq; }
};

/// Multi-head attention restricted to `pattern`. q, k, v and out are
/// [batch*seq, heads*head_dim]; probs receives the softmax weights laid out
/// as [batch][heads][nnz]. When `keep` is non-empty it holds per-weight
/// dropout multipliers in the same layout.
template <typename T>
void attention_forward(const AttentionShape& shape, const AttentionPattern& pattern, const T* q, const T* k,
                       const T* v, std::span<const T> keep, T* probs, T* out);

/// Accumulates gradients of attention_forward into dq, dk, dv.
template <typename T>
void attention_backward(const AttentionShape& shape, const AttentionPattern& pattern, const T* q, const T* k,
                        const T* v, std::span<const T> keep, const T* probs, const T* dout, T* dq, T* dk, T* dv);

/// For each query row returns the index of the nearest reference row
/// (squared Euclidean distance, ties to the lower index).
std::vector<std::size_t> nearest_rows(std::span<const double> reference, std::span<const double> queries,
                                      std::size_t dim);

namespace serial {

template <typename T>
void gemm(Trans ta, Trans tb, std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C,
          bool accumulate);

template <typename T>
void attention_forward(const AttentionShape& shape, const AttentionPattern& pattern, const T* q, const T* k,
                       const T* v, std::span<const T> keep, T* probs, T* out);

std::vector<std::size_t> nearest_rows(std::span<const double> reference, std::span<const double> queries,
                                      std::size_t dim);

}  // namespace serial
}  // namespace expt::kernels
