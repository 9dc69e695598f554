#include <cstdlib>
#include <string_view>

#include "kernels_impl.hpp"

namespace syncsde::simd {

namespace {

constexpr KernelTable kScalar{
    "scalar",
    &scalar::affine_bcast,
    &scalar::em_update,
    &scalar::axpy,
    &scalar::dot,
    &scalar::squared_distance,
    &scalar::sum,
    &scalar::central_sums,
};

#if defined(SYNCSDE_HAVE_AVX2)
constexpr KernelTable kAvx2{
    "avx2",
    &avx2::affine_bcast,
    &avx2::em_update,
    &avx2::axpy,
    &avx2::dot,
    &avx2::squared_distance,
    &avx2::sum,
    &avx2::central_sums,
};

bool cpu_has_avx2() {
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}
#endif

const KernelTable& select() {
  const char* forced = std::getenv("SYNCSDE_SIMD");
  const std::string_view want = forced ? forced : "";
  if (want == "scalar") return kScalar;
  if (const KernelTable* t = avx2_kernels()) return *t;
  return kScalar;
}

}  // namespace

const KernelTable& scalar_kernels() { return kScalar; }

const KernelTable* avx2_kernels() {
#if defined(SYNCSDE_HAVE_AVX2)
  static const bool ok = cpu_has_avx2();
  return ok ? &kAvx2 : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& active_kernels() {
  static const KernelTable& table = select();
  return table;
}

}  // namespace syncsde::simd
