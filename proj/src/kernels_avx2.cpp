#include "fewloc/kernels.hpp"

#if defined(FEWLOC_HAVE_AVX2)

#include <immintrin.h>

#include <cmath>

// AVX2 variants, 4 doubles per lane. Compiled with -mavx2 only (no -mfma):
// lane-independent ops keep scalar operation order per element and are
// bit-identical to the scalar backend; FMA contraction would break that.

namespace fewloc::kernels {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d shuf = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(a + i),
                                             _mm256_loadu_pd(b + i)));
    acc1 = _mm256_add_pd(acc1, _mm256_mul_pd(_mm256_loadu_pd(a + i + 4),
                                             _mm256_loadu_pd(b + i + 4)));
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(a + i),
                                             _mm256_loadu_pd(b + i)));
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void matvec_avx2(const double* w, const double* x, const double* bias,
                 double* y, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = w + r * cols;
    double s = dot_avx2(row, x, cols);
    y[r] = bias ? s + bias[r] : s;
  }
}

void axpy_avx2(double a, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d t = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), t));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void modulate_avx2(const double* f, const double* gamma, const double* beta,
                   double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d t =
        _mm256_mul_pd(_mm256_loadu_pd(gamma + i), _mm256_loadu_pd(f + i));
    _mm256_storeu_pd(out + i, _mm256_add_pd(t, _mm256_loadu_pd(beta + i)));
  }
  for (; i < n; ++i) out[i] = gamma[i] * f[i] + beta[i];
}

void matvec_t_acc_avx2(const double* w, const double* g, double* out,
                       std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) axpy_avx2(g[r], w + r * cols, out, cols);
}

void outer_acc_avx2(const double* g, const double* x, double* w,
                    std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) axpy_avx2(g[r], x, w + r * cols, cols);
}

void relu_avx2(const double* x, double* y, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
  }
  for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward_avx2(const double* pre, const double* dpost, double* dpre,
                        std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask =
        _mm256_cmp_pd(_mm256_loadu_pd(pre + i), zero, _CMP_GT_OQ);
    _mm256_storeu_pd(dpre + i,
                     _mm256_and_pd(mask, _mm256_loadu_pd(dpost + i)));
  }
  for (; i < n; ++i) dpre[i] = pre[i] > 0.0 ? dpost[i] : 0.0;
}

void adam_step_avx2(double* x, const double* g, double* m, double* v,
                    std::size_t n, double lr, double b1, double b2, double eps,
                    double b1c, double b2c) {
  const __m256d vb1 = _mm256_set1_pd(b1);
  const __m256d vnb1 = _mm256_set1_pd(1.0 - b1);
  const __m256d vb2 = _mm256_set1_pd(b2);
  const __m256d vnb2 = _mm256_set1_pd(1.0 - b2);
  const __m256d vlr = _mm256_set1_pd(lr);
  const __m256d veps = _mm256_set1_pd(eps);
  const __m256d vb1c = _mm256_set1_pd(b1c);
  const __m256d vb2c = _mm256_set1_pd(b2c);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d gi = _mm256_loadu_pd(g + i);
    __m256d mi = _mm256_loadu_pd(m + i);
    __m256d vi = _mm256_loadu_pd(v + i);
    mi = _mm256_add_pd(_mm256_mul_pd(vb1, mi), _mm256_mul_pd(vnb1, gi));
    vi = _mm256_add_pd(_mm256_mul_pd(vb2, vi),
                       _mm256_mul_pd(vnb2, _mm256_mul_pd(gi, gi)));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d mhat = _mm256_div_pd(mi, vb1c);
    const __m256d vhat = _mm256_div_pd(vi, vb2c);
    const __m256d t1 = _mm256_mul_pd(vlr, mhat);
    const __m256d t2 = _mm256_add_pd(_mm256_sqrt_pd(vhat), veps);
    const __m256d xi =
        _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_div_pd(t1, t2));
    _mm256_storeu_pd(x + i, xi);
  }
  for (; i < n; ++i) {
    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
    v[i] = b2 * v[i] + (1.0 - b2) * (g[i] * g[i]);
    const double mhat = m[i] / b1c;
    const double vhat = v[i] / b2c;
    x[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

void nearest_centroid_avx2(const double* xs, const double* ys,
                           const double* zs, std::size_t n, const double* cx,
                           const double* cy, const double* cz, std::size_t k,
                           uint32_t* best, double* best_d2) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d px = _mm256_loadu_pd(xs + i);
    const __m256d py = _mm256_loadu_pd(ys + i);
    const __m256d pz = _mm256_loadu_pd(zs + i);
    __m256d bd = _mm256_setzero_pd();
    __m256d bidx = _mm256_setzero_pd();
    for (std::size_t j = 0; j < k; ++j) {
      const __m256d dx = _mm256_sub_pd(px, _mm256_set1_pd(cx[j]));
      const __m256d dy = _mm256_sub_pd(py, _mm256_set1_pd(cy[j]));
      const __m256d dz = _mm256_sub_pd(pz, _mm256_set1_pd(cz[j]));
      __m256d d = _mm256_mul_pd(dx, dx);
      d = _mm256_add_pd(d, _mm256_mul_pd(dy, dy));
      d = _mm256_add_pd(d, _mm256_mul_pd(dz, dz));
      if (j == 0) {
        bd = d;
      } else {
        const __m256d mask = _mm256_cmp_pd(d, bd, _CMP_LT_OQ);
        bd = _mm256_blendv_pd(bd, d, mask);
        bidx = _mm256_blendv_pd(bidx, _mm256_set1_pd(double(j)), mask);
      }
    }
    _mm256_storeu_pd(best_d2 + i, bd);
    alignas(32) double idx[4];
    _mm256_store_pd(idx, bidx);
    for (int l = 0; l < 4; ++l) best[i + l] = static_cast<uint32_t>(idx[l]);
  }
  if (i < n) {
    scalar_ops().nearest_centroid(xs + i, ys + i, zs + i, n - i, cx, cy, cz, k,
                                  best + i, best_d2 + i);
  }
}

}  // namespace

const Ops& avx2_ops() {
  static const Ops ops = {
      "avx2",          dot_avx2,       matvec_avx2,
      axpy_avx2,       modulate_avx2,  matvec_t_acc_avx2,
      outer_acc_avx2,  relu_avx2,      relu_backward_avx2,
      adam_step_avx2,  nearest_centroid_avx2,
  };
  return ops;
}

}  // namespace fewloc::kernels

#endif  // FEWLOC_HAVE_AVX2
