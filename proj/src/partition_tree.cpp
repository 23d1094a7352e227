#include "fewloc/partition_tree.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>

#include "fewloc/errors.hpp"
#include "fewloc/kernels.hpp"
#include "fewloc/rng.hpp"

namespace fewloc {
namespace {

struct Soa {
  std::vector<double> x, y, z;
  explicit Soa(const std::vector<Eigen::Vector3d>& pts) {
    x.reserve(pts.size());
    y.reserve(pts.size());
    z.reserve(pts.size());
    for (const auto& p : pts) {
      x.push_back(p.x());
      y.push_back(p.y());
      z.push_back(p.z());
    }
  }
};

std::size_t count_distinct(const std::vector<Eigen::Vector3d>& pts) {
  std::vector<std::array<double, 3>> v;
  v.reserve(pts.size());
  for (const auto& p : pts) v.push_back({p.x(), p.y(), p.z()});
  std::sort(v.begin(), v.end());
  return std::size_t(std::unique(v.begin(), v.end()) - v.begin());
}

double sq_dist(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  const double dx = a.x() - b.x();
  const double dy = a.y() - b.y();
  const double dz = a.z() - b.z();
  double d = dx * dx;
  d += dy * dy;
  d += dz * dz;
  return d;
}

}  // namespace

KMeansResult kmeans(const std::vector<Eigen::Vector3d>& points, std::size_t k,
                    uint64_t seed) {
  if (points.empty()) throw DataError("kmeans: empty point set");
  if (k < 1) throw DataError("kmeans: k must be >= 1");

  KMeansResult res;
  const std::size_t n = points.size();
  if (k > n) {
    const std::size_t distinct = count_distinct(points);
    if (k > distinct) {
      k = distinct;
      res.capped = true;
    }
  } else if (k == n) {
    // Still cannot exceed the number of distinct values.
    const std::size_t distinct = count_distinct(points);
    if (k > distinct) {
      k = distinct;
      res.capped = true;
    }
  }

  const Soa soa(points);
  Rng rng(seed);

  // k-means++ seeding.
  std::vector<Eigen::Vector3d>& centroids = res.centroids;
  centroids.reserve(k);
  centroids.push_back(points[rng.bounded(n)]);
  std::vector<double> min_d2(n);
  for (std::size_t i = 0; i < n; ++i) min_d2[i] = sq_dist(points[i], centroids[0]);
  while (centroids.size() < k) {
    double total = 0.0;
    for (double d : min_d2) total += d;
    const double r = rng.uniform01() * total;
    std::size_t pick = 0;
    double cum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      cum += min_d2[i];
      if (cum > r) {
        pick = i;
        break;
      }
      if (i + 1 == n) pick = i;
    }
    centroids.push_back(points[pick]);
    for (std::size_t i = 0; i < n; ++i)
      min_d2[i] = std::min(min_d2[i], sq_dist(points[i], centroids.back()));
  }

  // Lloyd iterations.
  std::vector<double> cx(k), cy(k), cz(k);
  auto refresh_soa = [&] {
    for (std::size_t j = 0; j < k; ++j) {
      cx[j] = centroids[j].x();
      cy[j] = centroids[j].y();
      cz[j] = centroids[j].z();
    }
  };
  refresh_soa();

  std::vector<uint32_t>& assign = res.assignments;
  assign.resize(n);
  std::vector<double> best_d2(n);
  const auto& ops = kernels::active();
  ops.nearest_centroid(soa.x.data(), soa.y.data(), soa.z.data(), n, cx.data(),
                       cy.data(), cz.data(), k, assign.data(), best_d2.data());

  std::vector<Eigen::Vector3d> sums(k);
  std::vector<std::size_t> counts(k);
  std::vector<uint32_t> next(n);
  for (int iter = 1; iter <= 100; ++iter) {
    res.iterations = iter;
    std::fill(sums.begin(), sums.end(), Eigen::Vector3d::Zero());
    std::fill(counts.begin(), counts.end(), std::size_t(0));
    for (std::size_t i = 0; i < n; ++i) {
      sums[assign[i]] += points[i];
      counts[assign[i]]++;
    }
    bool repaired = false;
    std::vector<char> taken(n, 0);
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] > 0) {
        centroids[j] = sums[j] / double(counts[j]);
      } else {
        // Re-seed to the point farthest from its current centroid
        // (lowest index on ties).
        std::size_t far = n;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          if (taken[i]) continue;
          if (best_d2[i] > far_d) {
            far_d = best_d2[i];
            far = i;
          }
        }
        centroids[j] = points[far];
        taken[far] = 1;
        repaired = true;
      }
    }
    refresh_soa();
    ops.nearest_centroid(soa.x.data(), soa.y.data(), soa.z.data(), n, cx.data(),
                         cy.data(), cz.data(), k, next.data(), best_d2.data());
    const bool changed = !std::equal(next.begin(), next.end(), assign.begin());
    assign.swap(next);
    if (!changed && !repaired) break;
  }

  // Exact means for the final assignment (no-op when converged; restores the
  // invariant when the iteration cap was hit mid-update).
  std::fill(sums.begin(), sums.end(), Eigen::Vector3d::Zero());
  std::fill(counts.begin(), counts.end(), std::size_t(0));
  for (std::size_t i = 0; i < n; ++i) {
    sums[assign[i]] += points[i];
    counts[assign[i]]++;
  }
  for (std::size_t j = 0; j < k; ++j)
    if (counts[j] > 0) centroids[j] = sums[j] / double(counts[j]);
  return res;
}

// --- RegionLabel ---------------------------------------------------------------

uint64_t RegionLabel::compose(std::span<const uint32_t> path, uint32_t m) {
  uint64_t c = 0;
  for (uint32_t a : path) c = c * m + a;
  return c;
}

RegionLabel RegionLabel::from_path(std::vector<uint32_t> path, uint32_t m) {
  RegionLabel l;
  l.composite = compose(path, m);
  l.path = std::move(path);
  return l;
}

RegionLabel RegionLabel::from_composite(uint64_t composite, uint32_t m,
                                        uint32_t n) {
  RegionLabel l;
  l.composite = composite;
  l.path.resize(n);
  for (uint32_t i = n; i-- > 0;) {
    l.path[i] = uint32_t(composite % m);
    composite /= m;
  }
  return l;
}

// --- PartitionTree --------------------------------------------------------------

RegionLabel PartitionTree::label_point(const Eigen::Vector3d& point) const {
  std::vector<uint32_t> path(n_);
  uint32_t first = 0;
  uint32_t count = uint32_t(levels_[0].size());
  for (uint32_t l = 0; l < n_; ++l) {
    uint32_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (uint32_t c = 0; c < count; ++c) {
      const double d = sq_dist(point, levels_[l][first + c].centroid);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    path[l] = best;
    if (l + 1 < n_) {
      const Node& node = levels_[l][first + best];
      first = node.first_child;
      count = node.num_children;
    }
  }
  return RegionLabel::from_path(std::move(path), m_);
}

int64_t PartitionTree::leaf_for_path(std::span<const uint32_t> path) const {
  if (path.size() != n_) return -1;
  uint32_t first = 0;
  uint32_t count = uint32_t(levels_[0].size());
  uint32_t idx = 0;
  for (uint32_t l = 0; l < n_; ++l) {
    if (path[l] >= count) return -1;
    idx = first + path[l];
    if (l + 1 < n_) {
      const Node& node = levels_[l][idx];
      first = node.first_child;
      count = node.num_children;
    }
  }
  return int64_t(idx);
}

double PartitionTree::mean_leaf_radius() const {
  double total = 0.0;
  std::size_t nonempty = 0;
  for (std::size_t i = 0; i < leaf_members_.size(); ++i) {
    const auto& members = leaf_members_[i];
    if (members.empty()) continue;
    double r = 0.0;
    for (const auto& p : members)
      r += (p - levels_.back()[i].centroid).norm();
    total += r / double(members.size());
    nonempty++;
  }
  return nonempty == 0 ? 0.0 : total / double(nonempty);
}

bool PartitionTree::has_leaf_centers() const {
  for (const auto& c : leaf_centers_)
    if (!c.empty()) return true;
  return false;
}

PartitionTree build_tree(const PointCloud& cloud, uint32_t m, uint32_t n,
                         uint64_t seed) {
  if (cloud.empty()) throw DataError("build_tree: empty cloud");
  if (m < 2) throw DataError("build_tree: m must be >= 2");
  if (n < 1) throw DataError("build_tree: n must be >= 1");

  PartitionTree tree;
  tree.m_ = m;
  tree.n_ = n;
  tree.levels_.resize(n);

  struct Pending {
    std::vector<Eigen::Vector3d> pts;
    uint64_t seed;
    uint32_t parent;
  };
  std::vector<Pending> frontier;
  frontier.push_back({cloud.points, Rng::mix(seed, 0), PartitionTree::kNoParent});

  for (uint32_t l = 0; l < n; ++l) {
    std::vector<Pending> next;
    auto& nodes = tree.levels_[l];
    for (auto& pending : frontier) {
      const std::size_t k = std::min<std::size_t>(m, pending.pts.size());
      KMeansResult res = kmeans(pending.pts, k, pending.seed);

      std::vector<std::vector<Eigen::Vector3d>> members(res.centroids.size());
      for (std::size_t i = 0; i < pending.pts.size(); ++i)
        members[res.assignments[i]].push_back(pending.pts[i]);

      const uint32_t first = uint32_t(nodes.size());
      uint32_t emitted = 0;
      for (std::size_t c = 0; c < res.centroids.size(); ++c) {
        if (members[c].empty()) continue;  // cap pathologies; drop dead clusters
        PartitionTree::Node node;
        node.centroid = res.centroids[c];
        node.parent = pending.parent;
        nodes.push_back(node);
        if (l + 1 < n) {
          next.push_back({std::move(members[c]),
                          Rng::mix(pending.seed, emitted + 1),
                          uint32_t(nodes.size() - 1)});
        } else {
          tree.leaf_members_.push_back(std::move(members[c]));
        }
        emitted++;
      }
      if (pending.parent != PartitionTree::kNoParent) {
        tree.levels_[l - 1][pending.parent].first_child = first;
        tree.levels_[l - 1][pending.parent].num_children = emitted;
      }
    }
    frontier = std::move(next);
  }
  tree.leaf_centers_.resize(tree.leaf_members_.size());
  return tree;
}

std::vector<std::pair<Eigen::Vector2d, RegionLabel>> label_view(
    const PartitionTree& tree, const PosedDepth& view,
    const PinholeCamera& camera, int stride) {
  if (stride < 1) throw DataError("label_view: stride must be >= 1");
  std::vector<std::pair<Eigen::Vector2d, RegionLabel>> out;
  for (int y = 0; y < view.depth.height; y += stride) {
    for (int x = 0; x < view.depth.width; x += stride) {
      const float d = view.depth.at(x, y);
      if (!DepthImage::valid_depth(d)) continue;
      const Eigen::Vector2d px(double(x), double(y));
      const Eigen::Vector3d world = backproject(view.pose, camera, px, d);
      out.emplace_back(px, tree.label_point(world));
    }
  }
  return out;
}

PartitionTree cluster_leaves(PartitionTree tree, uint32_t q, uint64_t seed) {
  if (q < 1) throw DataError("cluster_leaves: q must be >= 1");
  for (std::size_t i = 0; i < tree.leaf_members_.size(); ++i) {
    const auto& members = tree.leaf_members_[i];
    if (members.empty()) continue;
    const std::size_t k = std::min<std::size_t>(q, members.size());
    tree.leaf_centers_[i] = kmeans(members, k, Rng::mix(seed, i)).centroids;
  }
  return tree;
}

// --- Serialization ---------------------------------------------------------------

namespace {
constexpr char kTreeMagic[4] = {'S', 'R', 'C', 'T'};
constexpr uint32_t kTreeVersion = 1;
// bit0: labels are zero-indexed (the on-disk convention record)
constexpr uint32_t kTreeFlags = 1;

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

void put_vec3(std::ofstream& out, const Eigen::Vector3d& v) {
  put<double>(out, v.x());
  put<double>(out, v.y());
  put<double>(out, v.z());
}

Eigen::Vector3d get_vec3(std::ifstream& in) {
  const double x = get<double>(in);
  const double y = get<double>(in);
  const double z = get<double>(in);
  return {x, y, z};
}
}  // namespace

void save_tree(const std::string& path, const PartitionTree& tree) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for write: " + path);
  out.write(kTreeMagic, 4);
  put<uint32_t>(out, kTreeVersion);
  put<uint32_t>(out, tree.m());
  put<uint32_t>(out, tree.n());
  put<uint32_t>(out, kTreeFlags);
  for (uint32_t l = 0; l < tree.n(); ++l) {
    const auto& nodes = tree.level(l);
    put<uint32_t>(out, uint32_t(nodes.size()));
    for (const auto& node : nodes) {
      put_vec3(out, node.centroid);
      put<uint32_t>(out, node.parent);
      put<uint32_t>(out, node.first_child);
      put<uint32_t>(out, node.num_children);
    }
  }
  for (const auto& members : tree.leaf_members()) {
    put<uint64_t>(out, members.size());
    for (const auto& p : members) put_vec3(out, p);
  }
  for (const auto& centers : tree.leaf_centers()) {
    put<uint32_t>(out, uint32_t(centers.size()));
    for (const auto& p : centers) put_vec3(out, p);
  }
  if (!out) throw DataError("write failed: " + path);
}

PartitionTree load_tree(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kTreeMagic, 4) != 0)
    throw DataError("not a partition tree file: " + path);
  const auto version = get<uint32_t>(in);
  if (version != kTreeVersion)
    throw DataError("unsupported tree version " + std::to_string(version) +
                    " in " + path);
  PartitionTree tree;
  tree.m_ = get<uint32_t>(in);
  tree.n_ = get<uint32_t>(in);
  get<uint32_t>(in);  // flags
  if (!in || tree.m_ < 2 || tree.n_ < 1)
    throw DataError("bad tree header: " + path);
  tree.levels_.resize(tree.n_);
  for (uint32_t l = 0; l < tree.n_; ++l) {
    const auto count = get<uint32_t>(in);
    tree.levels_[l].resize(count);
    for (auto& node : tree.levels_[l]) {
      node.centroid = get_vec3(in);
      node.parent = get<uint32_t>(in);
      node.first_child = get<uint32_t>(in);
      node.num_children = get<uint32_t>(in);
    }
  }
  tree.leaf_members_.resize(tree.levels_.back().size());
  for (auto& members : tree.leaf_members_) {
    const auto count = get<uint64_t>(in);
    members.resize(count);
    for (auto& p : members) p = get_vec3(in);
  }
  tree.leaf_centers_.resize(tree.levels_.back().size());
  for (auto& centers : tree.leaf_centers_) {
    const auto count = get<uint32_t>(in);
    centers.resize(count);
    for (auto& p : centers) p = get_vec3(in);
  }
  if (!in) throw DataError("truncated tree file: " + path);
  return tree;
}

void save_tree_json(const std::string& path, const PartitionTree& tree) {
  nlohmann::json j;
  j["format"] = "fewloc-partition-tree";
  j["version"] = kTreeVersion;
  j["m"] = tree.m();
  j["n"] = tree.n();
  j["zero_indexed"] = true;
  auto vec3 = [](const Eigen::Vector3d& v) {
    return nlohmann::json::array({v.x(), v.y(), v.z()});
  };
  nlohmann::json levels = nlohmann::json::array();
  for (uint32_t l = 0; l < tree.n(); ++l) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& node : tree.level(l)) {
      nodes.push_back({{"centroid", vec3(node.centroid)},
                       {"parent", node.parent == PartitionTree::kNoParent
                                      ? -1
                                      : int64_t(node.parent)},
                       {"first_child", node.first_child},
                       {"num_children", node.num_children}});
    }
    levels.push_back(std::move(nodes));
  }
  j["levels"] = std::move(levels);
  nlohmann::json members = nlohmann::json::array();
  for (const auto& mlist : tree.leaf_members()) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : mlist) pts.push_back(vec3(p));
    members.push_back(std::move(pts));
  }
  j["leaf_members"] = std::move(members);
  nlohmann::json centers = nlohmann::json::array();
  for (const auto& clist : tree.leaf_centers()) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : clist) pts.push_back(vec3(p));
    centers.push_back(std::move(pts));
  }
  j["leaf_centers"] = std::move(centers);
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for write: " + path);
  out << j.dump(2) << '\n';
  if (!out) throw DataError("write failed: " + path);
}

PartitionTree load_tree_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad tree json " + path + ": " + e.what());
  }
  if (j.value("format", "") != "fewloc-partition-tree")
    throw DataError("not a partition tree json: " + path);
  if (j.value("version", 0) != int(kTreeVersion))
    throw DataError("unsupported tree json version in " + path);
  auto vec3 = [](const nlohmann::json& a) {
    return Eigen::Vector3d(a.at(0).get<double>(), a.at(1).get<double>(),
                           a.at(2).get<double>());
  };
  PartitionTree tree;
  tree.m_ = j.at("m").get<uint32_t>();
  tree.n_ = j.at("n").get<uint32_t>();
  tree.levels_.resize(tree.n_);
  const auto& levels = j.at("levels");
  for (uint32_t l = 0; l < tree.n_; ++l) {
    for (const auto& nj : levels.at(l)) {
      PartitionTree::Node node;
      node.centroid = vec3(nj.at("centroid"));
      const int64_t parent = nj.at("parent").get<int64_t>();
      node.parent =
          parent < 0 ? PartitionTree::kNoParent : uint32_t(parent);
      node.first_child = nj.at("first_child").get<uint32_t>();
      node.num_children = nj.at("num_children").get<uint32_t>();
      tree.levels_[l].push_back(node);
    }
  }
  for (const auto& mlist : j.at("leaf_members")) {
    std::vector<Eigen::Vector3d> pts;
    for (const auto& p : mlist) pts.push_back(vec3(p));
    tree.leaf_members_.push_back(std::move(pts));
  }
  for (const auto& clist : j.at("leaf_centers")) {
    std::vector<Eigen::Vector3d> pts;
    for (const auto& p : clist) pts.push_back(vec3(p));
    tree.leaf_centers_.push_back(std::move(pts));
  }
  return tree;
}

}  // namespace fewloc
