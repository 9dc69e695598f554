#pragma once

// Data-parallel inner loops shared by the integrators and the statistics code.
//
// Every kernel has a scalar reference implementation and, on x86-64, an AVX2+FMA
// variant. The active table is picked once at first use from CPUID; set
// SYNCSDE_SIMD=scalar (or avx2) in the environment to force a variant.
// Results between variants agree to rounding, not bitwise: FMA contraction and
// the 4-lane reduction order both change the last bits.

#include <cstddef>
#include <span>
#include <string_view>

namespace syncsde::simd {

struct CentralSums {
  double sq = 0.0;     // sum (x - c)^2
  double quad = 0.0;   // sum (x - c)^4
};

struct KernelTable {
  std::string_view name;

  // out[i] = scale * (x[i] - shift[i % d]) + bias[i % d],  d = shift.size()
  void (*affine_bcast)(std::span<const double> x, std::span<const double> shift,
                       double scale, std::span<const double> bias,
                       std::span<double> out);

  // x[i] += ax * x[i] + bf * f[i] + cn * noise[i]
  void (*em_update)(std::span<double> x, std::span<const double> f,
                    std::span<const double> noise, double ax, double bf, double cn);

  // y[i] += a * x[i]
  void (*axpy)(double a, std::span<const double> x, std::span<double> y);

  double (*dot)(std::span<const double> a, std::span<const double> b);
  double (*squared_distance)(std::span<const double> a, std::span<const double> b);
  double (*sum)(std::span<const double> x);
  CentralSums (*central_sums)(std::span<const double> x, double c);
};

const KernelTable& scalar_kernels();

// nullptr when the variant is not compiled in or the CPU lacks the extension.
const KernelTable* avx2_kernels();

// The table selected for this process.
const KernelTable& active_kernels();

inline void affine_bcast(std::span<const double> x, std::span<const double> shift,
                         double scale, std::span<const double> bias,
                         std::span<double> out) {
  active_kernels().affine_bcast(x, shift, scale, bias, out);
}

inline void em_update(std::span<double> x, std::span<const double> f,
                      std::span<const double> noise, double ax, double bf, double cn) {
  active_kernels().em_update(x, f, noise, ax, bf, cn);
}

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  active_kernels().axpy(a, x, y);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active_kernels().dot(a, b);
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  return active_kernels().squared_distance(a, b);
}

inline double sum(std::span<const double> x) { return active_kernels().sum(x); }

inline CentralSums central_sums(std::span<const double> x, double c) {
  return active_kernels().central_sums(x, c);
}

}  // namespace syncsde::simd
