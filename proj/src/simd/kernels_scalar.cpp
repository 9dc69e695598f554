#include "kernels_impl.hpp"

namespace syncsde::simd::scalar {

void affine_bcast(std::span<const double> x, std::span<const double> shift, double scale,
                  std::span<const double> bias, std::span<double> out) {
  const std::size_t d = shift.size();
  const std::size_t n = x.size();
  if (d == 1) {
    const double s = shift[0];
    const double b = bias[0];
    for (std::size_t i = 0; i < n; ++i) out[i] = scale * (x[i] - s) + b;
    return;
  }
  for (std::size_t i = 0; i < n; i += d) {
    for (std::size_t j = 0; j < d; ++j) {
      out[i + j] = scale * (x[i + j] - shift[j]) + bias[j];
    }
  }
}

void em_update(std::span<double> x, std::span<const double> f, std::span<const double> noise,
               double ax, double bf, double cn) {
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    x[i] += ax * x[i] + bf * f[i] + cn * noise[i];
  }
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double r = a[i] - b[i];
    acc += r * r;
  }
  return acc;
}

double sum(std::span<const double> x) {
  double acc = 0.0;
  for (double v : x) acc += v;
  return acc;
}

CentralSums central_sums(std::span<const double> x, double c) {
  CentralSums s;
  for (double v : x) {
    const double r = v - c;
    const double r2 = r * r;
    s.sq += r2;
    s.quad += r2 * r2;
  }
  return s;
}

}  // namespace syncsde::simd::scalar
