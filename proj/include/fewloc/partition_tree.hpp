#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fewloc/geometry.hpp"

namespace fewloc {

struct KMeansResult {
  std::vector<uint32_t> assignments;
  std::vector<Eigen::Vector3d> centroids;
  // True when k exceeded the number of distinct points and was capped.
  bool capped = false;
  int iterations = 0;
};

// Lloyd's algorithm with k-means++ seeding. Converges when no assignment
// changes or after 100 iterations; empty clusters are re-seeded to the point
// farthest from its current centroid. Deterministic for fixed inputs + seed;
// distance ties go to the lowest centroid index.
KMeansResult kmeans(const std::vector<Eigen::Vector3d>& points, std::size_t k,
                    uint64_t seed);

// Per-level class indices (0-indexed, each < m) plus the composite leaf id
// sum_i a_i * m^(n-i).
struct RegionLabel {
  std::vector<uint32_t> path;
  uint64_t composite = 0;

  static uint64_t compose(std::span<const uint32_t> path, uint32_t m);
  static RegionLabel from_path(std::vector<uint32_t> path, uint32_t m);
  static RegionLabel from_composite(uint64_t composite, uint32_t m, uint32_t n);

  bool operator==(const RegionLabel& o) const {
    return path == o.path && composite == o.composite;
  }
};

// n-level m-way hierarchy over scene points built by recursive K-Means.
// Nodes of level l are stored contiguously; children of a node occupy a
// contiguous range in level l+1. Leaves are the level n-1 nodes. Immutable
// once built.
class PartitionTree {
 public:
  struct Node {
    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
    uint32_t parent = kNoParent;      // index into previous level
    uint32_t first_child = 0;         // index into next level
    uint32_t num_children = 0;
  };
  static constexpr uint32_t kNoParent = 0xFFFFFFFFu;

  uint32_t m() const { return m_; }
  uint32_t n() const { return n_; }
  const std::vector<Node>& level(uint32_t l) const { return levels_[l]; }
  uint32_t num_levels() const { return uint32_t(levels_.size()); }
  std::size_t leaf_count() const { return levels_.back().size(); }

  const std::vector<std::vector<Eigen::Vector3d>>& leaf_members() const {
    return leaf_members_;
  }
  const std::vector<std::vector<Eigen::Vector3d>>& leaf_centers() const {
    return leaf_centers_;
  }

  // Greedy descent: at each level picks the child with the nearest centroid
  // (ties to the lowest index).
  RegionLabel label_point(const Eigen::Vector3d& point) const;

  // Leaf position (index into the last level) for a per-level path, or -1
  // when the path names a child that does not exist.
  int64_t leaf_for_path(std::span<const uint32_t> path) const;

  // Mean over non-empty leaves of the mean member distance to the leaf
  // centroid; the natural resolution limit of region-level correspondences.
  double mean_leaf_radius() const;

  bool has_leaf_centers() const;

 private:
  uint32_t m_ = 0;
  uint32_t n_ = 0;
  std::vector<std::vector<Node>> levels_;
  std::vector<std::vector<Eigen::Vector3d>> leaf_members_;
  std::vector<std::vector<Eigen::Vector3d>> leaf_centers_;

  friend PartitionTree build_tree(const PointCloud&, uint32_t, uint32_t,
                                  uint64_t);
  friend PartitionTree cluster_leaves(PartitionTree, uint32_t, uint64_t);
  friend PartitionTree load_tree(const std::string&);
  friend PartitionTree load_tree_json(const std::string&);
};

// Recursive K-Means partition: level 1 splits the cloud into m clusters, and
// each cluster is re-partitioned until depth n. Clusters with fewer than m
// distinct points get capped K-Means (singleton children), so leaves may
// number fewer than m^n. Deterministic given seed. Throws DataError on an
// empty cloud, m < 2 or n < 1.
PartitionTree build_tree(const PointCloud& cloud, uint32_t m, uint32_t n,
                         uint64_t seed);

// Labels the back-projection of every stride-sampled valid depth pixel.
std::vector<std::pair<Eigen::Vector2d, RegionLabel>> label_view(
    const PartitionTree& tree, const PosedDepth& view,
    const PinholeCamera& camera, int stride);

// Fills leaf_centers with min(q, member count) K-Means centers per leaf.
PartitionTree cluster_leaves(PartitionTree tree, uint32_t q, uint64_t seed);

// Versioned binary container (magic "SRCT"); rejects unknown versions.
void save_tree(const std::string& path, const PartitionTree& tree);
PartitionTree load_tree(const std::string& path);

// JSON debug dump; the loader also rejects unknown versions.
void save_tree_json(const std::string& path, const PartitionTree& tree);
PartitionTree load_tree_json(const std::string& path);

}  // namespace fewloc
