// Compiled with -mavx2 -mfma. Nothing in here may be called unless the
// dispatcher has confirmed CPU support.

#include <immintrin.h>

#include <cmath>

#include "kernels_impl.hpp"

namespace syncsde::simd::avx2 {

namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// Four-lane pattern of a length-d vector, valid when 4 % d == 0.
inline __m256d pattern(std::span<const double> v) {
  switch (v.size()) {
    case 1: return _mm256_set1_pd(v[0]);
    case 2: return _mm256_setr_pd(v[0], v[1], v[0], v[1]);
    default: return _mm256_loadu_pd(v.data());
  }
}

}  // namespace

void affine_bcast(std::span<const double> x, std::span<const double> shift, double scale,
                  std::span<const double> bias, std::span<double> out) {
  const std::size_t d = shift.size();
  const std::size_t n = x.size();
  const __m256d vscale = _mm256_set1_pd(scale);

  if (d == 1 || d == 2 || d == 4) {
    const __m256d vs = pattern(shift);
    const __m256d vb = pattern(bias);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
      const __m256d r = _mm256_sub_pd(_mm256_loadu_pd(&x[i]), vs);
      _mm256_storeu_pd(&out[i], _mm256_fmadd_pd(vscale, r, vb));
    }
    // n is a multiple of d, so the tail starts on a row boundary.
    for (; i < n; ++i) {
      const std::size_t j = i % d;
      out[i] = std::fma(scale, x[i] - shift[j], bias[j]);
    }
    return;
  }

  for (std::size_t row = 0; row < n; row += d) {
    std::size_t j = 0;
    for (; j + 4 <= d; j += 4) {
      const __m256d r = _mm256_sub_pd(_mm256_loadu_pd(&x[row + j]), _mm256_loadu_pd(&shift[j]));
      _mm256_storeu_pd(&out[row + j], _mm256_fmadd_pd(vscale, r, _mm256_loadu_pd(&bias[j])));
    }
    for (; j < d; ++j) out[row + j] = std::fma(scale, x[row + j] - shift[j], bias[j]);
  }
}

void em_update(std::span<double> x, std::span<const double> f, std::span<const double> noise,
               double ax, double bf, double cn) {
  const std::size_t n = x.size();
  const __m256d vax = _mm256_set1_pd(ax);
  const __m256d vbf = _mm256_set1_pd(bf);
  const __m256d vcn = _mm256_set1_pd(cn);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d xv = _mm256_loadu_pd(&x[i]);
    __m256d t = _mm256_mul_pd(vcn, _mm256_loadu_pd(&noise[i]));
    t = _mm256_fmadd_pd(vbf, _mm256_loadu_pd(&f[i]), t);
    t = _mm256_fmadd_pd(vax, xv, t);
    _mm256_storeu_pd(&x[i], _mm256_add_pd(xv, t));
  }
  for (; i < n; ++i) {
    double t = cn * noise[i];
    t = std::fma(bf, f[i], t);
    t = std::fma(ax, x[i], t);
    x[i] += t;
  }
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
  const std::size_t n = x.size();
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(&y[i], _mm256_fmadd_pd(va, _mm256_loadu_pd(&x[i]), _mm256_loadu_pd(&y[i])));
  }
  for (; i < n; ++i) y[i] = std::fma(a, x[i], y[i]);
}

double dot(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(&a[i]), _mm256_loadu_pd(&b[i]), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(&a[i + 4]), _mm256_loadu_pd(&b[i + 4]), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(&a[i]), _mm256_loadu_pd(&b[i]), acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc = std::fma(a[i], b[i], acc);
  return acc;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256d r0 = _mm256_sub_pd(_mm256_loadu_pd(&a[i]), _mm256_loadu_pd(&b[i]));
    const __m256d r1 = _mm256_sub_pd(_mm256_loadu_pd(&a[i + 4]), _mm256_loadu_pd(&b[i + 4]));
    acc0 = _mm256_fmadd_pd(r0, r0, acc0);
    acc1 = _mm256_fmadd_pd(r1, r1, acc1);
  }
  for (; i + 4 <= n; i += 4) {
    const __m256d r = _mm256_sub_pd(_mm256_loadu_pd(&a[i]), _mm256_loadu_pd(&b[i]));
    acc0 = _mm256_fmadd_pd(r, r, acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) {
    const double r = a[i] - b[i];
    acc = std::fma(r, r, acc);
  }
  return acc;
}

double sum(std::span<const double> x) {
  const std::size_t n = x.size();
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(&x[i]));
    acc1 = _mm256_add_pd(acc1, _mm256_loadu_pd(&x[i + 4]));
  }
  for (; i + 4 <= n; i += 4) acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(&x[i]));
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += x[i];
  return acc;
}

CentralSums central_sums(std::span<const double> x, double c) {
  const std::size_t n = x.size();
  const __m256d vc = _mm256_set1_pd(c);
  __m256d sq = _mm256_setzero_pd();
  __m256d quad = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d r = _mm256_sub_pd(_mm256_loadu_pd(&x[i]), vc);
    const __m256d r2 = _mm256_mul_pd(r, r);
    sq = _mm256_add_pd(sq, r2);
    quad = _mm256_fmadd_pd(r2, r2, quad);
  }
  CentralSums s{hsum(sq), hsum(quad)};
  for (; i < n; ++i) {
    const double r = x[i] - c;
    const double r2 = r * r;
    s.sq += r2;
    s.quad = std::fma(r2, r2, s.quad);
  }
  return s;
}

}  // namespace syncsde::simd::avx2
