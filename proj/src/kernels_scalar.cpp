#include <cmath>

#include "fewloc/kernels.hpp"

namespace fewloc::kernels {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void matvec_scalar(const double* w, const double* x, const double* bias,
                   double* y, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = w + r * cols;
    double s = bias ? bias[r] : 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += row[c] * x[c];
    y[r] = s;
  }
}

void axpy_scalar(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void modulate_scalar(const double* f, const double* gamma, const double* beta,
                     double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = gamma[i] * f[i] + beta[i];
}

// i-outer / j-inner order; the AVX2 variant vectorizes j and therefore
// matches this result exactly.
void matvec_t_acc_scalar(const double* w, const double* g, double* out,
                         std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double gr = g[r];
    const double* row = w + r * cols;
    for (std::size_t c = 0; c < cols; ++c) out[c] += gr * row[c];
  }
}

void outer_acc_scalar(const double* g, const double* x, double* w,
                      std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double gr = g[r];
    double* row = w + r * cols;
    for (std::size_t c = 0; c < cols; ++c) row[c] += gr * x[c];
  }
}

void relu_scalar(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward_scalar(const double* pre, const double* dpost, double* dpre,
                          std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dpre[i] = pre[i] > 0.0 ? dpost[i] : 0.0;
}

void adam_step_scalar(double* x, const double* g, double* m, double* v,
                      std::size_t n, double lr, double b1, double b2,
                      double eps, double b1c, double b2c) {
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
    v[i] = b2 * v[i] + (1.0 - b2) * (g[i] * g[i]);
    const double mhat = m[i] / b1c;
    const double vhat = v[i] / b2c;
    x[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

void nearest_centroid_scalar(const double* xs, const double* ys,
                             const double* zs, std::size_t n, const double* cx,
                             const double* cy, const double* cz, std::size_t k,
                             uint32_t* best, double* best_d2) {
  for (std::size_t i = 0; i < n; ++i) {
    uint32_t bj = 0;
    double bd = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double dx = xs[i] - cx[j];
      const double dy = ys[i] - cy[j];
      const double dz = zs[i] - cz[j];
      double d = dx * dx;
      d += dy * dy;
      d += dz * dz;
      if (j == 0 || d < bd) {
        bd = d;
        bj = static_cast<uint32_t>(j);
      }
    }
    best[i] = bj;
    best_d2[i] = bd;
  }
}

}  // namespace

const Ops& scalar_ops() {
  static const Ops ops = {
      "scalar",          dot_scalar,       matvec_scalar,
      axpy_scalar,       modulate_scalar,  matvec_t_acc_scalar,
      outer_acc_scalar,  relu_scalar,      relu_backward_scalar,
      adam_step_scalar,  nearest_centroid_scalar,
  };
  return ops;
}

}  // namespace fewloc::kernels
