#pragma once
// Low-level numeric kernels with a scalar reference path and SIMD variants
// selected at runtime. Every SIMD kernel has a `ref::` twin that defines its
// semantics; the equivalence tests compare the two.

#include <cstdint>
#include <functional>
#include <string_view>

namespace metaprompt::kernels {

enum class Isa { scalar, avx2 };

/// True when the CPU (and the build) can run `isa`.
bool isa_supported(Isa isa);
std::string_view isa_name(Isa isa);

/// Kernel set used by the float dispatchers. Initialized once from the
/// METAPROMPT_SIMD environment variable ("scalar" or "avx2"); defaults to the
/// best supported ISA.
Isa active_isa();
/// Override the active ISA (tests, golden captures). Throws if unsupported.
void set_active_isa(Isa isa);

/// Scoped ISA override.
class IsaScope {
 public:
  explicit IsaScope(Isa isa) : saved_(active_isa()) { set_active_isa(isa); }
  ~IsaScope() { set_active_isa(saved_); }
  IsaScope(const IsaScope&) = delete;
  IsaScope& operator=(const IsaScope&) = delete;

 private:
  Isa saved_;
};

/// Worker count for kernel-level parallelism (METAPROMPT_THREADS, default 1).
int thread_count();
void set_thread_count(int n);

/// Runs fn(begin, end) over disjoint chunks of [0, n). Each index lands in
/// exactly one chunk, so per-element results never depend on the thread count.
void parallel_for(std::int64_t n, std::int64_t grain,
                  const std::function<void(std::int64_t, std::int64_t)>& fn);

/// Row-major C[m×n] (+)= op(A)·op(B). op(A) is m×k: A is stored m×k, or k×m
/// when trans_a. op(B) is k×n: B is stored k×n, or n×k when trans_b.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
          const T* a, const T* b, T* c, bool accumulate);

/// y += alpha·x
template <typename T>
void axpy(std::int64_t n, T alpha, const T* x, T* y);

/// Σ x·y, accumulated in the kernel's native order.
template <typename T>
T dot(std::int64_t n, const T* x, const T* y);

namespace ref {
template <typename T>
void gemm_nn(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c,
             bool accumulate);
template <typename T>
void axpy(std::int64_t n, T alpha, const T* x, T* y);
template <typename T>
T dot(std::int64_t n, const T* x, const T* y);
}  // namespace ref

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
void gemm_nn_f32(std::int64_t m, std::int64_t n, std::int64_t k, const float* a, const float* b,
                 float* c, bool accumulate);
void axpy_f32(std::int64_t n, float alpha, const float* x, float* y);
float dot_f32(std::int64_t n, const float* x, const float* y);
}  // namespace avx2
#endif

}  // namespace metaprompt::kernels
