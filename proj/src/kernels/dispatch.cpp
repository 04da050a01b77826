#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "metaprompt/kernels.hpp"

namespace metaprompt::kernels {
namespace {

bool cpu_has_avx2() {
#if (defined(__x86_64__) || defined(_M_X64)) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa initial_isa() {
  const char* env = std::getenv("METAPROMPT_SIMD");
  if (env != nullptr) {
    const std::string v(env);
    if (v == "scalar") return Isa::scalar;
    if (v == "avx2" && cpu_has_avx2()) return Isa::avx2;
  }
  return cpu_has_avx2() ? Isa::avx2 : Isa::scalar;
}

int initial_threads() {
  const char* env = std::getenv("METAPROMPT_THREADS");
  if (env == nullptr) return 1;
  const int n = std::atoi(env);
  return n >= 1 ? n : 1;
}

std::atomic<Isa>& isa_slot() {
  static std::atomic<Isa> slot{initial_isa()};
  return slot;
}

std::atomic<int>& thread_slot() {
  static std::atomic<int> slot{initial_threads()};
  return slot;
}

template <typename T>
void transpose_into(std::int64_t rows, std::int64_t cols, const T* src, std::vector<T>& dst) {
  dst.resize(static_cast<std::size_t>(rows * cols));
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  }
}

template <typename T>
void gemm_nn_dispatch(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b,
                      T* c, bool accumulate) {
  auto run = [&](std::int64_t r0, std::int64_t r1) {
#if defined(__x86_64__) || defined(_M_X64)
    if constexpr (std::is_same_v<T, float>) {
      if (active_isa() == Isa::avx2) {
        avx2::gemm_nn_f32(r1 - r0, n, k, a + r0 * k, b, c + r0 * n, accumulate);
        return;
      }
    }
#endif
    ref::gemm_nn<T>(r1 - r0, n, k, a + r0 * k, b, c + r0 * n, accumulate);
  };
  if (thread_count() > 1 && m * n * k >= (1 << 18)) {
    parallel_for(m, 4, run);
  } else {
    run(0, m);
  }
}

}  // namespace

bool isa_supported(Isa isa) { return isa == Isa::scalar || cpu_has_avx2(); }

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

Isa active_isa() { return isa_slot().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (!isa_supported(isa)) {
    throw std::runtime_error("ISA not supported on this CPU: " + std::string(isa_name(isa)));
  }
  isa_slot().store(isa, std::memory_order_relaxed);
}

int thread_count() { return thread_slot().load(std::memory_order_relaxed); }

void set_thread_count(int n) { thread_slot().store(std::max(1, n), std::memory_order_relaxed); }

void parallel_for(std::int64_t n, std::int64_t grain,
                  const std::function<void(std::int64_t, std::int64_t)>& fn) {
  const int threads = thread_count();
  if (threads <= 1 || n <= grain) {
    fn(0, n);
    return;
  }
  const std::int64_t chunks = std::min<std::int64_t>(threads, (n + grain - 1) / grain);
  const std::int64_t per = ((n + chunks - 1) / chunks + grain - 1) / grain * grain;
  std::vector<std::jthread> workers;
  for (std::int64_t start = per; start < n; start += per) {
    workers.emplace_back([&fn, start, per, n] { fn(start, std::min(n, start + per)); });
  }
  fn(0, std::min(n, per));
}

template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) std::fill(c, c + m * n, T(0));
    return;
  }
  thread_local std::vector<T> a_packed;
  thread_local std::vector<T> b_packed;
  const T* a_nn = a;
  const T* b_nn = b;
  if (trans_a) {
    transpose_into(k, m, a, a_packed);
    a_nn = a_packed.data();
  }
  if (trans_b) {
    transpose_into(n, k, b, b_packed);
    b_nn = b_packed.data();
  }
  gemm_nn_dispatch(m, n, k, a_nn, b_nn, c, accumulate);
}

template <typename T>
void axpy(std::int64_t n, T alpha, const T* x, T* y) {
#if defined(__x86_64__) || defined(_M_X64)
  if constexpr (std::is_same_v<T, float>) {
    if (active_isa() == Isa::avx2) return avx2::axpy_f32(n, alpha, x, y);
  }
#endif
  ref::axpy<T>(n, alpha, x, y);
}

template <typename T>
T dot(std::int64_t n, const T* x, const T* y) {
#if defined(__x86_64__) || defined(_M_X64)
  if constexpr (std::is_same_v<T, float>) {
    if (active_isa() == Isa::avx2) return avx2::dot_f32(n, x, y);
  }
#endif
  return ref::dot<T>(n, x, y);
}

template void gemm<float>(bool, bool, std::int64_t, std::int64_t, std::int64_t, const float*,
                          const float*, float*, bool);
template void gemm<double>(bool, bool, std::int64_t, std::int64_t, std::int64_t, const double*,
                           const double*, double*, bool);
template void axpy<float>(std::int64_t, float, const float*, float*);
template void axpy<double>(std::int64_t, double, const double*, double*);
template float dot<float>(std::int64_t, const float*, const float*);
template double dot<double>(std::int64_t, const double*, const double*);

}  // namespace metaprompt::kernels
