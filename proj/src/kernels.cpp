#include "expt/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace expt::kernels {
namespace {

constexpr std::size_t kRowBlock = 256;

template <typename T>
void softmax_inplace(T* s, std::size_t n) {
  T mx = s[0];
  for (std::size_t t = 1; t < n; ++t) mx = std::max(mx, s[t]);
  T sum = 0;
  for (std::size_t t = 0; t < n; ++t) {
    s[t] = std::exp(s[t] - mx);
    sum += s[t];
  }
  const T inv = T(1) / sum;
  for (std::size_t t = 0; t < n; ++t) s[t] *= inv;
}

}  // namespace

template <typename T>
void gemm(Trans ta, Trans tb, std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C,
          bool accumulate) {
  const auto m = static_cast<std::ptrdiff_t>(M);
  if (!accumulate) std::fill(C, C + M * N, T(0));

  if (ta == Trans::kNo && tb == Trans::kNo) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < m; ++i) {
      T* c = C + i * N;
      const T* a = A + i * K;
      for (std::size_t k = 0; k < K; ++k) {
        const T aik = a[k];
        const T* b = B + k * N;
#pragma omp simd
        for (std::size_t j = 0; j < N; ++j) c[j] += aik * b[j];
      }
    }
  } else if (ta == Trans::kNo && tb == Trans::kYes) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < m; ++i) {
      T* c = C + i * N;
      const T* a = A + i * K;
      for (std::size_t j = 0; j < N; ++j) {
        const T* b = B + j * K;
        T s = 0;
#pragma omp simd reduction(+ : s)
        for (std::size_t k = 0; k < K; ++k) s += a[k] * b[k];
        c[j] += s;
      }
    }
  } else if (ta == Trans::kYes && tb == Trans::kNo) {
    // Blocked over K so the active slice of B stays cache resident; every
    // C row still accumulates in ascending k.
#pragma omp parallel
    for (std::size_t k0 = 0; k0 < K; k0 += kRowBlock) {
      const std::size_t k1 = std::min(K, k0 + kRowBlock);
#pragma omp for schedule(static)
      for (std::ptrdiff_t i = 0; i < m; ++i) {
        T* c = C + i * N;
        for (std::size_t k = k0; k < k1; ++k) {
          const T aki = A[k * M + i];
          const T* b = B + k * N;
#pragma omp simd
          for (std::size_t j = 0; j < N; ++j) c[j] += aki * b[j];
        }
      }
    }
  } else {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < m; ++i) {
      T* c = C + i * N;
      for (std::size_t j = 0; j < N; ++j) {
        T s = 0;
        for (std::size_t k = 0; k < K; ++k) s += A[k * M + i] * B[j * K + k];
        c[j] += s;
      }
    }
  }
}

template <typename T>
void attention_forward(const AttentionShape& shape, const AttentionPattern& pattern, const T* q, const T* k,
                       const T* v, std::span<const T> keep, T* probs, T* out) {
  const std::size_t D = shape.model_dim();
  const std::size_t dh = shape.head_dim;
  const std::size_t nnz = pattern.nnz();
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const auto blocks = static_cast<std::ptrdiff_t>(shape.batch * shape.heads);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t bh = 0; bh < blocks; ++bh) {
    const std::size_t b = static_cast<std::size_t>(bh) / shape.heads;
    const std::size_t h = static_cast<std::size_t>(bh) % shape.heads;
    const std::size_t row0 = b * shape.seq;
    const std::size_t col0 = h * dh;
    T* p_block = probs + static_cast<std::size_t>(bh) * nnz;
    const T* keep_block = keep.empty() ? nullptr : keep.data() + static_cast<std::size_t>(bh) * nnz;
    for (std::size_t i = 0; i < shape.seq; ++i) {
      const std::size_t lo = pattern.row_ptr[i];
      const std::size_t hi = pattern.row_ptr[i + 1];
      const T* qi = q + (row0 + i) * D + col0;
      T* p = p_block + lo;
      for (std::size_t t = lo; t < hi; ++t) {
        const T* kj = k + (row0 + pattern.cols[t]) * D + col0;
        T s = 0;
        for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
        p[t - lo] = s * scale;
      }
      softmax_inplace(p, hi - lo);
      T* o = out + (row0 + i) * D + col0;
      for (std::size_t c = 0; c < dh; ++c) o[c] = 0;
      for (std::size_t t = lo; t < hi; ++t) {
        const T w = keep_block ? p[t - lo] * keep_block[t] : p[t - lo];
        const T* vj = v + (row0 + pattern.cols[t]) * D + col0;
#pragma omp simd
        for (std::size_t c = 0; c < dh; ++c) o[c] += w * vj[c];
      }
    }
  }
}

template <typename T>
void attention_backward(const AttentionShape& shape, const AttentionPattern& pattern, const T* q, const T* k,
                        const T* v, std::span<const T> keep, const T* probs, const T* dout, T* dq, T* dk, T* dv) {
  const std::size_t D = shape.model_dim();
  const std::size_t dh = shape.head_dim;
  const std::size_t nnz = pattern.nnz();
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const auto blocks = static_cast<std::ptrdiff_t>(shape.batch * shape.heads);

  // Each (batch, head) block owns a disjoint slice of dq/dk/dv.
#pragma omp parallel
  {
    std::vector<T> dp;
#pragma omp for schedule(static)
    for (std::ptrdiff_t bh = 0; bh < blocks; ++bh) {
      const std::size_t b = static_cast<std::size_t>(bh) / shape.heads;
      const std::size_t h = static_cast<std::size_t>(bh) % shape.heads;
      const std::size_t row0 = b * shape.seq;
      const std::size_t col0 = h * dh;
      const T* p_block = probs + static_cast<std::size_t>(bh) * nnz;
      const T* keep_block = keep.empty() ? nullptr : keep.data() + static_cast<std::size_t>(bh) * nnz;
      for (std::size_t i = 0; i < shape.seq; ++i) {
        const std::size_t lo = pattern.row_ptr[i];
        const std::size_t hi = pattern.row_ptr[i + 1];
        const T* go = dout + (row0 + i) * D + col0;
        const T* qi = q + (row0 + i) * D + col0;
        T* gqi = dq + (row0 + i) * D + col0;
        dp.assign(hi - lo, T(0));
        T dot = 0;
        for (std::size_t t = lo; t < hi; ++t) {
          const std::size_t j = row0 + pattern.cols[t];
          const T kp = keep_block ? keep_block[t] : T(1);
          const T w = p_block[t] * kp;
          const T* vj = v + j * D + col0;
          T* gvj = dv + j * D + col0;
          T s = 0;
          for (std::size_t c = 0; c < dh; ++c) {
            gvj[c] += w * go[c];
            s += go[c] * vj[c];
          }
          dp[t - lo] = s * kp;
          dot += p_block[t] * dp[t - lo];
        }
        for (std::size_t t = lo; t < hi; ++t) {
          const std::size_t j = row0 + pattern.cols[t];
          const T ds = p_block[t] * (dp[t - lo] - dot) * scale;
          const T* kj = k + j * D + col0;
          T* gkj = dk + j * D + col0;
          for (std::size_t c = 0; c < dh; ++c) {
            gqi[c] += ds * kj[c];
            gkj[c] += ds * qi[c];
          }
        }
      }
    }
  }
}

std::vector<std::size_t> nearest_rows(std::span<const double> reference, std::span<const double> queries,
                                      std::size_t dim) {
  const std::size_t R = reference.size() / dim;
  const auto Q = static_cast<std::ptrdiff_t>(queries.size() / dim);
  std::vector<std::size_t> out(static_cast<std::size_t>(Q));
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t qi = 0; qi < Q; ++qi) {
    const double* x = queries.data() + static_cast<std::size_t>(qi) * dim;
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t r = 0; r < R; ++r) {
      const double* y = reference.data() + r * dim;
      double d2 = 0;
#pragma omp simd reduction(+ : d2)
      for (std::size_t c = 0; c < dim; ++c) {
        const double diff = x[c] - y[c];
        d2 += diff * diff;
      }
      if (d2 < best) {
        best = d2;
        arg = r;
      }
    }
    out[static_cast<std::size_t>(qi)] = arg;
  }
  return out;
}

namespace serial {

template <typename T>
void gemm(Trans ta, Trans tb, std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C,
          bool accumulate) {
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t j = 0; j < N; ++j) {
      T s = 0;
      for (std::size_t k = 0; k < K; ++k) {
        const T a = ta == Trans::kNo ? A[i * K + k] : A[k * M + i];
        const T b = tb == Trans::kNo ? B[k * N + j] : B[j * K + k];
        s += a * b;
      }
      C[i * N + j] = accumulate ? C[i * N + j] + s : s;
    }
  }
}

template <typename T>
void attention_forward(const AttentionShape& shape, const AttentionPattern& pattern, const T* q, const T* k,
                       const T* v, std::span<const T> keep, T* probs, T* out) {
  const std::size_t D = shape.model_dim();
  const std::size_t dh = shape.head_dim;
  const std::size_t nnz = pattern.nnz();
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  for (std::size_t b = 0; b < shape.batch; ++b) {
    for (std::size_t h = 0; h < shape.heads; ++h) {
      const std::size_t base = (b * shape.heads + h) * nnz;
      for (std::size_t i = 0; i < shape.seq; ++i) {
        const std::size_t lo = pattern.row_ptr[i];
        const std::size_t hi = pattern.row_ptr[i + 1];
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t t = lo; t < hi; ++t) {
          T s = 0;
          for (std::size_t c = 0; c < dh; ++c)
            s += q[(b * shape.seq + i) * D + h * dh + c] * k[(b * shape.seq + pattern.cols[t]) * D + h * dh + c];
          probs[base + t] = s * scale;
          mx = std::max(mx, probs[base + t]);
        }
        T sum = 0;
        for (std::size_t t = lo; t < hi; ++t) sum += (probs[base + t] = std::exp(probs[base + t] - mx));
        for (std::size_t t = lo; t < hi; ++t) probs[base + t] /= sum;
        for (std::size_t c = 0; c < dh; ++c) {
          T o = 0;
          for (std::size_t t = lo; t < hi; ++t) {
            const T w = keep.empty() ? probs[base + t] : probs[base + t] * keep[base + t];
            o += w * v[(b * shape.seq + pattern.cols[t]) * D + h * dh + c];
          }
          out[(b * shape.seq + i) * D + h * dh + c] = o;
        }
      }
    }
  }
}

std::vector<std::size_t> nearest_rows(std::span<const double> reference, std::span<const double> queries,
                                      std::size_t dim) {
  const std::size_t R = reference.size() / dim;
  const std::size_t Q = queries.size() / dim;
  std::vector<std::size_t> out(Q, 0);
  for (std::size_t qi = 0; qi < Q; ++qi) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < R; ++r) {
      double d2 = 0;
      for (std::size_t c = 0; c < dim; ++c) {
        const double diff = queries[qi * dim + c] - reference[r * dim + c];
        d2 += diff * diff;
      }
      if (d2 < best) {
        best = d2;
        out[qi] = r;
      }
    }
  }
  return out;
}

}  // namespace serial

#define EXPT_INSTANTIATE_KERNELS(T)                                                                             \
  template void gemm<T>(Trans, Trans, std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);    \
  template void attention_forward<T>(const AttentionShape&, const AttentionPattern&, const T*, const T*,        \
                                     const T*, std::span<const T>, T*, T*);                                     \
  template void attention_backward<T>(const AttentionShape&, const AttentionPattern&, const T*, const T*,       \
                                      const T*, std::span<const T>, const T*, const T*, T*, T*, T*);            \
  template void serial::gemm<T>(Trans, Trans, std::size_t, std::size_t, std::size_t, const T*, const T*, T*,    \
                                bool);                                                                          \
  template void serial::attention_forward<T>(const AttentionShape&, const AttentionPattern&, const T*,          \
                                             const T*, const T*, std::span<const T>, T*, T*);

EXPT_INSTANTIATE_KERNELS(float)
EXPT_INSTANTIATE_KERNELS(double)

}  // namespace expt::kernels
