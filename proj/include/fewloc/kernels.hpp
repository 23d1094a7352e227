#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace fewloc::kernels {

// Data-parallel inner loops used by the classifier, the k-means partitioner
// and the optimizers. Two implementations exist: a scalar reference and an
// AVX2 variant; the active one is selected at runtime (cpuid, overridable
// with FEWLOC_KERNELS=scalar|avx2 or set_backend()).
//
// Contract between backends:
//  - lane-independent ops (axpy, modulate, relu*, adam_step, outer_acc,
//    matvec_t_acc, nearest_centroid) produce bit-identical results in both
//    backends: per-element operation order is the same and no FMA
//    contraction is used.
//  - reductions (dot, matvec) may reassociate; backends agree to rounding
//    error only.
struct Ops {
  const char* name;

  // Reductions.
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y = W x + bias. W is row-major rows x cols; bias may be null.
  void (*matvec)(const double* w, const double* x, const double* bias,
                 double* y, std::size_t rows, std::size_t cols);

  // Lane-independent ops (bit-identical across backends).
  // y += a * x
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // out = gamma * f + beta, elementwise
  void (*modulate)(const double* f, const double* gamma, const double* beta,
                   double* out, std::size_t n);
  // out += W^T g  (W row-major rows x cols, g has rows entries, out cols)
  void (*matvec_t_acc)(const double* w, const double* g, double* out,
                       std::size_t rows, std::size_t cols);
  // W += g x^T
  void (*outer_acc)(const double* g, const double* x, double* w,
                    std::size_t rows, std::size_t cols);
  void (*relu)(const double* x, double* y, std::size_t n);
  // dpre = (pre > 0) ? dpost : 0
  void (*relu_backward)(const double* pre, const double* dpost, double* dpre,
                        std::size_t n);
  // One Adam update over a flat parameter vector. b1c/b2c are the bias
  // corrections 1-beta1^t and 1-beta2^t.
  void (*adam_step)(double* x, const double* g, double* m, double* v,
                    std::size_t n, double lr, double b1, double b2, double eps,
                    double b1c, double b2c);
  // For every point i (SoA xs/ys/zs), the index of the nearest of k centroids
  // and its squared distance. Ties resolved to the lowest centroid index.
  void (*nearest_centroid)(const double* xs, const double* ys,
                           const double* zs, std::size_t n, const double* cx,
                           const double* cy, const double* cz, std::size_t k,
                           uint32_t* best, double* best_d2);
};

const Ops& scalar_ops();
#if defined(FEWLOC_HAVE_AVX2)
const Ops& avx2_ops();
#endif

// The dispatched backend. First call resolves it from FEWLOC_KERNELS or
// cpu detection; later calls are a plain load.
const Ops& active();

// Force a backend by name ("scalar", "avx2", "auto"). Returns false if the
// request cannot be satisfied on this machine.
bool set_backend(std::string_view name);

bool avx2_available();

}  // namespace fewloc::kernels
