#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "metaprompt/kernels.hpp"
#include "metaprompt/rng.hpp"

using namespace metaprompt;
namespace k = metaprompt::kernels;

namespace {

template <typename T>
std::vector<T> random_vec(std::size_t n, Rng& rng) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-1.0, 1.0));
  return v;
}

// c[i][j] = Σ_p opA(i,p)·opB(p,j), accumulated in double.
template <typename T>
std::vector<double> gemm_oracle(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t kk,
                                const std::vector<T>& a, const std::vector<T>& b) {
  std::vector<double> c(static_cast<std::size_t>(m * n), 0.0);
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::int64_t p = 0; p < kk; ++p) {
        const double av = ta ? a[p * m + i] : a[i * kk + p];
        const double bv = tb ? b[j * kk + p] : b[p * n + j];
        s += av * bv;
      }
      c[i * n + j] = s;
    }
  }
  return c;
}

struct Dims {
  std::int64_t m, n, k;
};
const Dims kShapes[] = {{1, 1, 1}, {3, 5, 7}, {4, 16, 9}, {7, 33, 300}, {17, 18, 1}, {64, 40, 520}};

}  // namespace

TEST_CASE("gemm matches the triple-loop oracle in every transpose mode") {
  Rng rng(1);
  for (auto isa : {k::Isa::scalar, k::Isa::avx2}) {
    if (!k::isa_supported(isa)) continue;
    k::IsaScope scope(isa);
    for (const auto& d : kShapes) {
      for (int mode = 0; mode < 4; ++mode) {
        const bool ta = mode & 1, tb = mode & 2;
        const auto a = random_vec<float>(static_cast<std::size_t>(d.m * d.k), rng);
        const auto b = random_vec<float>(static_cast<std::size_t>(d.k * d.n), rng);
        const auto want = gemm_oracle(ta, tb, d.m, d.n, d.k, a, b);
        std::vector<float> c(want.size(), 0.5f);
        k::gemm<float>(ta, tb, d.m, d.n, d.k, a.data(), b.data(), c.data(), false);
        for (std::size_t i = 0; i < c.size(); ++i) {
          CHECK(std::abs(c[i] - want[i]) <= 2e-6 * static_cast<double>(d.k) + 1e-6);
        }
      }
    }
  }
}

TEST_CASE("gemm accumulate adds onto the destination") {
  Rng rng(2);
  const auto a = random_vec<double>(12, rng);
  const auto b = random_vec<double>(20, rng);
  const auto want = gemm_oracle(false, false, 3, 5, 4, a, b);
  std::vector<double> c(15, 1.0);
  k::gemm<double>(false, false, 3, 5, 4, a.data(), b.data(), c.data(), true);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(want[i] + 1.0).epsilon(1e-12));
}

TEST_CASE("gemm with k = 0 zeroes or preserves the destination") {
  std::vector<float> c(6, 3.0f);
  k::gemm<float>(false, false, 2, 3, 0, nullptr, nullptr, c.data(), true);
  for (float v : c) CHECK(v == 3.0f);
  k::gemm<float>(false, false, 2, 3, 0, nullptr, nullptr, c.data(), false);
  for (float v : c) CHECK(v == 0.0f);
}

TEST_CASE("avx2 kernels agree with their scalar twins") {
  if (!k::isa_supported(k::Isa::avx2)) return;
#if defined(__x86_64__) || defined(_M_X64)
  Rng rng(3);
  for (const auto& d : kShapes) {
    const auto a = random_vec<float>(static_cast<std::size_t>(d.m * d.k), rng);
    const auto b = random_vec<float>(static_cast<std::size_t>(d.k * d.n), rng);
    std::vector<float> ref(static_cast<std::size_t>(d.m * d.n), 0.25f), simd = ref;
    for (bool acc : {false, true}) {
      k::ref::gemm_nn<float>(d.m, d.n, d.k, a.data(), b.data(), ref.data(), acc);
      k::avx2::gemm_nn_f32(d.m, d.n, d.k, a.data(), b.data(), simd.data(), acc);
      for (std::size_t i = 0; i < ref.size(); ++i) {
        // Bound by the summation-order error of a k-term float dot product.
        CHECK(std::abs(ref[i] - simd[i]) <= 2e-6f * static_cast<float>(d.k) + 1e-6f);
      }
    }
  }
  for (std::int64_t n : {0, 1, 7, 8, 9, 31, 1000}) {
    const auto x = random_vec<float>(static_cast<std::size_t>(n), rng);
    auto y_ref = random_vec<float>(static_cast<std::size_t>(n), rng);
    auto y_simd = y_ref;
    k::ref::axpy<float>(n, 0.7f, x.data(), y_ref.data());
    k::avx2::axpy_f32(n, 0.7f, x.data(), y_simd.data());
    for (std::int64_t i = 0; i < n; ++i) CHECK(std::abs(y_ref[i] - y_simd[i]) <= 1e-6f);
    const float d_ref = k::ref::dot<float>(n, x.data(), y_ref.data());
    const float d_simd = k::avx2::dot_f32(n, x.data(), y_ref.data());
    CHECK(std::abs(d_ref - d_simd) <= 2e-6f * static_cast<float>(n) + 1e-6f);
  }
#endif
}

TEST_CASE("gemm results do not depend on the thread count") {
  Rng rng(4);
  const std::int64_t m = 37, n = 29, kk = 64;
  const auto a = random_vec<float>(static_cast<std::size_t>(m * kk), rng);
  const auto b = random_vec<float>(static_cast<std::size_t>(kk * n), rng);
  std::vector<float> one(static_cast<std::size_t>(m * n)), many(one.size());
  const int saved = k::thread_count();
  k::set_thread_count(1);
  k::gemm<float>(false, true, m, n, kk, a.data(), b.data(), one.data(), false);
  k::set_thread_count(4);
  k::gemm<float>(false, true, m, n, kk, a.data(), b.data(), many.data(), false);
  k::set_thread_count(saved);
  CHECK(one == many);
}

TEST_CASE("parallel_for covers every index exactly once") {
  const int saved = k::thread_count();
  for (int threads : {1, 2, 5}) {
    k::set_thread_count(threads);
    std::vector<int> hits(1003, 0);
    k::parallel_for(1003, 16, [&](std::int64_t b, std::int64_t e) {
      for (auto i = b; i < e; ++i) ++hits[static_cast<std::size_t>(i)];
    });
    for (int h : hits) CHECK(h == 1);
  }
  k::set_thread_count(saved);
}

TEST_CASE("isa override round-trips") {
  const auto before = k::active_isa();
  {
    k::IsaScope scope(k::Isa::scalar);
    CHECK(k::active_isa() == k::Isa::scalar);
  }
  CHECK(k::active_isa() == before);
  CHECK(k::isa_name(k::Isa::scalar) == "scalar");
}
