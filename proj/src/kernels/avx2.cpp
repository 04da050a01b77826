// AVX2/FMA float kernels. This translation unit is compiled with -mavx2 -mfma
// and must only be entered after a runtime CPU check.
#include "metaprompt/kernels.hpp"

#include <immintrin.h>

namespace metaprompt::kernels::avx2 {
namespace {

inline __m256i tail_mask(std::int64_t count) {
  // lanes [0, count) active; count in [0, 8]
  const __m256i idx = _mm256_setr_epi32(0, 1, 2, 3, 4, 5, 6, 7);
  return _mm256_cmpgt_epi32(_mm256_set1_epi32(static_cast<int>(count)), idx);
}

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 shuf = _mm_movehdup_ps(lo);
  __m128 sums = _mm_add_ps(lo, shuf);
  shuf = _mm_movehl_ps(shuf, sums);
  sums = _mm_add_ss(sums, shuf);
  return _mm_cvtss_f32(sums);
}

// MR rows × 16 columns of C, columns [j, j+16) clipped to `width` valid lanes.
template <int MR>
inline void micro_tile(std::int64_t k, std::int64_t n, const float* a, std::int64_t lda,
                       const float* b, float* c, std::int64_t width, bool accumulate) {
  const __m256i m0 = tail_mask(width >= 8 ? 8 : width);
  const __m256i m1 = tail_mask(width >= 16 ? 8 : (width > 8 ? width - 8 : 0));
  const bool full = width == 16;
  __m256 acc0[MR];
  __m256 acc1[MR];
  for (int r = 0; r < MR; ++r) {
    if (accumulate) {
      acc0[r] = full ? _mm256_loadu_ps(c + r * n) : _mm256_maskload_ps(c + r * n, m0);
      acc1[r] = full ? _mm256_loadu_ps(c + r * n + 8) : _mm256_maskload_ps(c + r * n + 8, m1);
    } else {
      acc0[r] = _mm256_setzero_ps();
      acc1[r] = _mm256_setzero_ps();
    }
  }
  for (std::int64_t p = 0; p < k; ++p) {
    const float* brow = b + p * n;
    const __m256 b0 = full ? _mm256_loadu_ps(brow) : _mm256_maskload_ps(brow, m0);
    const __m256 b1 = full ? _mm256_loadu_ps(brow + 8) : _mm256_maskload_ps(brow + 8, m1);
    for (int r = 0; r < MR; ++r) {
      const __m256 av = _mm256_broadcast_ss(a + r * lda + p);
      acc0[r] = _mm256_fmadd_ps(av, b0, acc0[r]);
      acc1[r] = _mm256_fmadd_ps(av, b1, acc1[r]);
    }
  }
  for (int r = 0; r < MR; ++r) {
    if (full) {
      _mm256_storeu_ps(c + r * n, acc0[r]);
      _mm256_storeu_ps(c + r * n + 8, acc1[r]);
    } else {
      _mm256_maskstore_ps(c + r * n, m0, acc0[r]);
      _mm256_maskstore_ps(c + r * n + 8, m1, acc1[r]);
    }
  }
}

template <int MR>
void row_block(std::int64_t n, std::int64_t k, std::int64_t lda, const float* a, const float* b,
               float* c, bool accumulate) {
  for (std::int64_t j = 0; j < n; j += 16) {
    const std::int64_t width = n - j < 16 ? n - j : 16;
    micro_tile<MR>(k, n, a, lda, b + j, c + j, width, accumulate);
  }
}

// k is split into panels so one panel of B stays cache resident while every
// row block of A streams over it.
constexpr std::int64_t kPanel = 256;

}  // namespace

void gemm_nn_f32(std::int64_t m, std::int64_t n, std::int64_t k, const float* a, const float* b,
                 float* c, bool accumulate) {
  for (std::int64_t p0 = 0; p0 < k; p0 += kPanel) {
    const std::int64_t kb = k - p0 < kPanel ? k - p0 : kPanel;
    const bool acc = accumulate || p0 > 0;
    const float* ap = a + p0;
    const float* bp = b + p0 * n;
    std::int64_t i = 0;
    for (; i + 4 <= m; i += 4) row_block<4>(n, kb, k, ap + i * k, bp, c + i * n, acc);
    switch (m - i) {
      case 3: row_block<3>(n, kb, k, ap + i * k, bp, c + i * n, acc); break;
      case 2: row_block<2>(n, kb, k, ap + i * k, bp, c + i * n, acc); break;
      case 1: row_block<1>(n, kb, k, ap + i * k, bp, c + i * n, acc); break;
      default: break;
    }
  }
}

void axpy_f32(std::int64_t n, float alpha, const float* x, float* y) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

float dot_f32(std::int64_t n, const float* x, const float* y) {
  __m256 acc = _mm256_setzero_ps();
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc);
  }
  float s = hsum(acc);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

}  // namespace metaprompt::kernels::avx2
