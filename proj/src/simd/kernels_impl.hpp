#pragma once

#include "syncsde/simd.hpp"

namespace syncsde::simd {

namespace scalar {
void affine_bcast(std::span<const double> x, std::span<const double> shift, double scale,
                  std::span<const double> bias, std::span<double> out);
void em_update(std::span<double> x, std::span<const double> f, std::span<const double> noise,
               double ax, double bf, double cn);
void axpy(double a, std::span<const double> x, std::span<double> y);
double dot(std::span<const double> a, std::span<const double> b);
double squared_distance(std::span<const double> a, std::span<const double> b);
double sum(std::span<const double> x);
CentralSums central_sums(std::span<const double> x, double c);
}  // namespace scalar

#if defined(SYNCSDE_HAVE_AVX2)
namespace avx2 {
void affine_bcast(std::span<const double> x, std::span<const double> shift, double scale,
                  std::span<const double> bias, std::span<double> out);
void em_update(std::span<double> x, std::span<const double> f, std::span<const double> noise,
               double ax, double bf, double cn);
void axpy(double a, std::span<const double> x, std::span<double> y);
double dot(std::span<const double> a, std::span<const double> b);
double squared_distance(std::span<const double> a, std::span<const double> b);
double sum(std::span<const double> x);
CentralSums central_sums(std::span<const double> x, double c);
}  // namespace avx2
#endif

}  // namespace syncsde::simd
