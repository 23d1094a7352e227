#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fewloc/geometry.hpp"

namespace fewloc {

// Per-pixel descriptor samples for one view. Row-major storage, one
// dim-length row per sample.
struct DescriptorMap {
  uint32_t dim = 0;
  std::vector<Eigen::Vector2d> pixels;
  std::vector<double> data;
  // Set when the samples form a regular grid (stride-sampled full view).
  int grid_h = 0, grid_w = 0;

  std::size_t count() const { return pixels.size(); }
  const double* row(std::size_t i) const { return data.data() + i * dim; }
  double* row(std::size_t i) { return data.data() + i * dim; }

  // Throws DataError on dimension mismatch, non-finite entries or pixels
  // outside [0,width) x [0,height).
  void validate(int width, int height) const;
};

// Stand-in for a frozen learned feature extractor: maps the scene point seen
// at a pixel to a descriptor. Implementations are read-only after
// construction; describe_view is pure.
class DescriptorProvider {
 public:
  virtual ~DescriptorProvider() = default;
  virtual uint32_t dim() const = 0;
  // One descriptor per stride-sampled valid-depth pixel, row-major pixel
  // order. view_index selects the per-view noise stream (and the file for
  // file-backed providers).
  virtual DescriptorMap describe_view(const PosedDepth& view,
                                      const PinholeCamera& camera, int stride,
                                      uint64_t view_index) const = 0;
};

// Deterministic base embedding of a 3D point: a random-projection-plus-
// sinusoid encoding seeded by scene_seed, plus zero-mean Gaussian noise of
// std noise_sigma drawn from rng_stream. The base embedding depends only on
// (scene_seed, point), never on the viewpoint.
std::vector<double> oracle_describe(uint64_t scene_seed,
                                    const Eigen::Vector3d& point,
                                    double noise_sigma, uint64_t rng_stream,
                                    uint32_t dim);

class OracleDescriptorProvider final : public DescriptorProvider {
 public:
  struct Config {
    uint64_t scene_seed = 0;
    uint32_t dim = 32;
    double noise_sigma = 0.0;
    // Emulates domain gap between scenes for meta-learning experiments:
    // task_id != 0 shifts the encoding phases by cross_scene_shift times a
    // task-specific random offset.
    double cross_scene_shift = 0.0;
    uint64_t task_id = 0;
  };

  explicit OracleDescriptorProvider(const Config& cfg);

  uint32_t dim() const override { return cfg_.dim; }
  void base_embedding(const Eigen::Vector3d& point, double* out) const;
  DescriptorMap describe_view(const PosedDepth& view,
                              const PinholeCamera& camera, int stride,
                              uint64_t view_index) const override;

 private:
  Config cfg_;
  std::vector<double> proj_;   // dim x 3 row-major projection frequencies
  std::vector<double> phase_;  // dim phases
};

// Serves descriptors computed offline, one SRCD file per view.
class FileDescriptorProvider final : public DescriptorProvider {
 public:
  FileDescriptorProvider(std::vector<std::string> paths, int width,
                         int height);

  uint32_t dim() const override { return dim_; }
  DescriptorMap describe_view(const PosedDepth& view,
                              const PinholeCamera& camera, int stride,
                              uint64_t view_index) const override;

 private:
  std::vector<DescriptorMap> maps_;
  uint32_t dim_ = 0;
};

// SRCD: header (magic "SRCD", u32 version, u32 dim, u32 count) then
// little-endian f32 records (u, v, d[0..dim)).
void save_descriptors(const std::string& path, const DescriptorMap& map);
DescriptorMap load_descriptors(const std::string& path);

// Serialized SRCD bytes; the determinism tests compare these.
std::vector<uint8_t> descriptor_bytes(const DescriptorMap& map);

}  // namespace fewloc
