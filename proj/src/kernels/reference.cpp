#include "metaprompt/kernels.hpp"

namespace metaprompt::kernels::ref {

template <typename T>
void gemm_nn(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  for (std::int64_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    if (!accumulate) {
      for (std::int64_t j = 0; j < n; ++j) crow[j] = T(0);
    }
    const T* arow = a + i * k;
    for (std::int64_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void axpy(std::int64_t n, T alpha, const T* x, T* y) {
  for (std::int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
T dot(std::int64_t n, const T* x, const T* y) {
  T s = T(0);
  for (std::int64_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

template void gemm_nn<float>(std::int64_t, std::int64_t, std::int64_t, const float*, const float*,
                             float*, bool);
template void gemm_nn<double>(std::int64_t, std::int64_t, std::int64_t, const double*,
                              const double*, double*, bool);
template void axpy<float>(std::int64_t, float, const float*, float*);
template void axpy<double>(std::int64_t, double, const double*, double*);
template float dot<float>(std::int64_t, const float*, const float*);
template double dot<double>(std::int64_t, const double*, const double*);

}  // namespace metaprompt::kernels::ref
