#include "fewloc/descriptors.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fewloc/errors.hpp"
#include "fewloc/rng.hpp"

namespace fewloc {
namespace {

// Frequency scale of the sinusoid encoding, radians per scene unit. Chosen
// so points ~1 unit apart decorrelate at desk scale.
constexpr double kFreqSigma = 2.0;

constexpr uint64_t kProjStream = 0x5243445F70726F6AULL;   // "RCD_proj"
constexpr uint64_t kShiftStream = 0x5243445F73686674ULL;  // "RCD_shft"
constexpr uint64_t kNoiseStream = 0x5243445F6E6F6973ULL;  // "RCD_nois"

void fill_encoding(uint64_t scene_seed, uint32_t dim, double cross_scene_shift,
                   uint64_t task_id, std::vector<double>& proj,
                   std::vector<double>& phase) {
  Rng rng(Rng::mix(scene_seed, kProjStream));
  proj.resize(std::size_t(dim) * 3);
  phase.resize(dim);
  for (auto& w : proj) w = kFreqSigma * rng.normal();
  for (auto& p : phase) p = rng.uniform(0.0, 2.0 * M_PI);
  if (task_id != 0 && cross_scene_shift != 0.0) {
    Rng shift(Rng::mix(Rng::mix(scene_seed, kShiftStream), task_id));
    for (auto& p : phase) p += cross_scene_shift * shift.uniform(-M_PI, M_PI);
  }
}

void embed(const std::vector<double>& proj, const std::vector<double>& phase,
           const Eigen::Vector3d& point, double* out) {
  const std::size_t dim = phase.size();
  for (std::size_t d = 0; d < dim; ++d) {
    const double* w = proj.data() + d * 3;
    out[d] =
        std::sin(w[0] * point.x() + w[1] * point.y() + w[2] * point.z() +
                 phase[d]);
  }
}

}  // namespace

void DescriptorMap::validate(int width, int height) const {
  if (dim == 0) throw DataError("descriptor map: dim must be positive");
  if (data.size() != pixels.size() * dim)
    throw DataError("descriptor map: data size inconsistent with dim");
  for (const auto& px : pixels) {
    if (!(px.x() >= 0 && px.x() < width && px.y() >= 0 && px.y() < height))
      throw DataError("descriptor map: pixel outside image bounds");
  }
  for (double v : data)
    if (!std::isfinite(v))
      throw DataError("descriptor map: non-finite descriptor entry");
}

std::vector<double> oracle_describe(uint64_t scene_seed,
                                    const Eigen::Vector3d& point,
                                    double noise_sigma, uint64_t rng_stream,
                                    uint32_t dim) {
  if (noise_sigma < 0.0)
    throw DataError("oracle_describe: noise_sigma must be >= 0");
  std::vector<double> proj, phase;
  fill_encoding(scene_seed, dim, 0.0, 0, proj, phase);
  std::vector<double> out(dim);
  embed(proj, phase, point, out.data());
  if (noise_sigma > 0.0) {
    Rng noise(Rng::mix(Rng::mix(scene_seed, kNoiseStream), rng_stream));
    for (auto& v : out) v += noise_sigma * noise.normal();
  }
  return out;
}

OracleDescriptorProvider::OracleDescriptorProvider(const Config& cfg)
    : cfg_(cfg) {
  if (cfg.dim == 0) throw DataError("oracle provider: dim must be positive");
  if (cfg.noise_sigma < 0.0)
    throw DataError("oracle provider: noise_sigma must be >= 0");
  fill_encoding(cfg.scene_seed, cfg.dim, cfg.cross_scene_shift, cfg.task_id,
                proj_, phase_);
}

void OracleDescriptorProvider::base_embedding(const Eigen::Vector3d& point,
                                              double* out) const {
  embed(proj_, phase_, point, out);
}

DescriptorMap OracleDescriptorProvider::describe_view(
    const PosedDepth& view, const PinholeCamera& camera, int stride,
    uint64_t view_index) const {
  if (stride < 1) throw DataError("describe_view: stride must be >= 1");
  DescriptorMap map;
  map.dim = cfg_.dim;
  const uint64_t view_stream =
      Rng::mix(Rng::mix(cfg_.scene_seed, kNoiseStream), view_index);
  for (int y = 0; y < view.depth.height; y += stride) {
    for (int x = 0; x < view.depth.width; x += stride) {
      const float d = view.depth.at(x, y);
      if (!DepthImage::valid_depth(d)) continue;
      const Eigen::Vector2d px(double(x), double(y));
      const Eigen::Vector3d world = backproject(view.pose, camera, px, d);
      map.pixels.push_back(px);
      const std::size_t row = map.pixels.size() - 1;
      map.data.resize((row + 1) * cfg_.dim);
      base_embedding(world, map.row(row));
      if (cfg_.noise_sigma > 0.0) {
        // Noise keyed by (view, pixel): a fresh draw per observation,
        // independent of the sampling stride.
        Rng noise(Rng::mix(view_stream,
                           uint64_t(y) * uint64_t(view.depth.width) + x));
        double* r = map.row(row);
        for (uint32_t k = 0; k < cfg_.dim; ++k)
          r[k] += cfg_.noise_sigma * noise.normal();
      }
    }
  }
  // Stride sampling of the full raster forms a regular grid.
  map.grid_w = (view.depth.width + stride - 1) / stride;
  map.grid_h = (view.depth.height + stride - 1) / stride;
  return map;
}

FileDescriptorProvider::FileDescriptorProvider(std::vector<std::string> paths,
                                               int width, int height) {
  if (paths.empty()) throw DataError("file provider: no descriptor files");
  for (const auto& p : paths) {
    DescriptorMap map = load_descriptors(p);
    map.validate(width, height);
    if (dim_ == 0)
      dim_ = map.dim;
    else if (map.dim != dim_)
      throw DataError("file provider: descriptor dim mismatch in " + p);
    maps_.push_back(std::move(map));
  }
}

DescriptorMap FileDescriptorProvider::describe_view(const PosedDepth&,
                                                    const PinholeCamera&, int,
                                                    uint64_t view_index) const {
  if (view_index >= maps_.size())
    throw DataError("file provider: no descriptors for view " +
                    std::to_string(view_index));
  return maps_[view_index];
}

// --- SRCD ------------------------------------------------------------------

namespace {
constexpr char kDescMagic[4] = {'S', 'R', 'C', 'D'};
constexpr uint32_t kDescVersion = 1;

void append_bytes(std::vector<uint8_t>& out, const void* p, std::size_t n) {
  const auto* b = static_cast<const uint8_t*>(p);
  out.insert(out.end(), b, b + n);
}
}  // namespace

std::vector<uint8_t> descriptor_bytes(const DescriptorMap& map) {
  std::vector<uint8_t> out;
  append_bytes(out, kDescMagic, 4);
  const uint32_t version = kDescVersion;
  const uint32_t dim = map.dim;
  const uint32_t count = uint32_t(map.count());
  append_bytes(out, &version, 4);
  append_bytes(out, &dim, 4);
  append_bytes(out, &count, 4);
  for (std::size_t i = 0; i < map.count(); ++i) {
    const float u = float(map.pixels[i].x());
    const float v = float(map.pixels[i].y());
    append_bytes(out, &u, 4);
    append_bytes(out, &v, 4);
    const double* r = map.row(i);
    for (uint32_t k = 0; k < dim; ++k) {
      const float f = float(r[k]);
      append_bytes(out, &f, 4);
    }
  }
  return out;
}

void save_descriptors(const std::string& path, const DescriptorMap& map) {
  const auto bytes = descriptor_bytes(map);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for write: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            std::streamsize(bytes.size()));
  if (!out) throw DataError("write failed: " + path);
}

DescriptorMap load_descriptors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kDescMagic, 4) != 0)
    throw DataError("not a descriptor file: " + path);
  uint32_t version = 0, dim = 0, count = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&dim), 4);
  in.read(reinterpret_cast<char*>(&count), 4);
  if (!in || version != kDescVersion)
    throw DataError("unsupported descriptor version in " + path);
  if (dim == 0) throw DataError("bad descriptor header: " + path);
  DescriptorMap map;
  map.dim = dim;
  map.pixels.resize(count);
  map.data.resize(std::size_t(count) * dim);
  for (uint32_t i = 0; i < count; ++i) {
    float u, v;
    in.read(reinterpret_cast<char*>(&u), 4);
    in.read(reinterpret_cast<char*>(&v), 4);
    map.pixels[i] = {double(u), double(v)};
    for (uint32_t k = 0; k < dim; ++k) {
      float f;
      in.read(reinterpret_cast<char*>(&f), 4);
      map.data[std::size_t(i) * dim + k] = double(f);
    }
  }
  if (!in) throw DataError("truncated descriptor file: " + path);
  return map;
}

}  // namespace fewloc
