#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fewloc/geometry.hpp"

namespace fewloc {

// Reprojection contribution of a candidate behind the camera.
inline constexpr double kBehindCameraErrorPx = 1e6;

// A pixel matched to its set of candidate 3D points (the leaf cluster
// centers), the one-to-many unit the solver consumes.
struct Correspondence {
  Eigen::Vector2d pixel;
  std::vector<Eigen::Vector3d> candidates;
};

struct CorrespondenceSet {
  std::vector<Correspondence> entries;
  PinholeCamera camera;
};

struct RansacConfig {
  uint32_t hypotheses = 256;     // h
  double tau = 10.0;             // kernel threshold, pixels
  uint32_t max_refine_iters = 20;
  uint64_t seed = 0;
};

struct ScoredPose {
  Se3Pose pose;
  double score = 0.0;
  uint32_t inliers = 0;
};

// All geometrically valid perspective-three-point solutions (up to 4).
// Every returned pose reprojects the three points onto the three pixels
// within 1e-6 px with all points in front of the camera. Degenerate input
// (duplicate pixels, near-collinear points) yields an empty list.
std::vector<Se3Pose> p3p_solve(const std::array<Eigen::Vector2d, 3>& pixels,
                               const std::array<Eigen::Vector3d, 3>& points,
                               const PinholeCamera& camera);

struct MinimalMatch {
  Eigen::Vector2d pixel;
  Eigen::Vector3d point;
};

// P3P on the first three matches, disambiguated by the smallest reprojection
// error on the fourth. Absent when nothing survives cheirality or the
// fourth-point error exceeds 10 * tau.
std::optional<Se3Pose> solve_minimal(const std::array<MinimalMatch, 4>& sample,
                                     const PinholeCamera& camera,
                                     double tau = 10.0);

// Minimum over candidates of the pixel reprojection distance; candidates
// behind the camera contribute kBehindCameraErrorPx.
double reproj_error(const Se3Pose& pose, const Correspondence& entry,
                    const PinholeCamera& camera);

// Sum over entries of the sigmoid kernel 1/(1+exp(-0.5*(e_j - tau))).
// Lower is better.
double consensus_score(const Se3Pose& pose, const CorrespondenceSet& corr,
                       double tau);

// One-to-many PnP-RANSAC: h attempts, each sampling 4 distinct entries and
// one random candidate per entry; the surviving hypothesis with the lowest
// consensus score wins (ties: first generated). Deterministic given seed.
// Throws NoPoseError when no attempt yields a pose.
ScoredPose ransac(const CorrespondenceSet& corr, const RansacConfig& cfg);

struct RefineResult {
  ScoredPose scored;
  bool refined = false;      // false when fewer than 4 starting inliers
  uint32_t iterations = 0;
  // Total inlier squared-error cost after each accepted LM step;
  // non-increasing by construction.
  std::vector<double> cost_trace;
};

// Iterative refinement: per iteration re-picks the argmin candidate per
// entry, gates inliers at tau, and applies one damped Gauss-Newton step on
// the 6-dof pose tangent. Stops on a tiny update, a stable inlier set with
// negligible cost decrease, or after max_refine_iters.
RefineResult refine(const Se3Pose& start, const CorrespondenceSet& corr,
                    const RansacConfig& cfg);

// Debug/replay format: header "N q_max" then one entry per line,
// "u v k x1 y1 z1 ... xk yk zk".
void save_correspondences(const std::string& path,
                          const CorrespondenceSet& corr);
CorrespondenceSet load_correspondences(const std::string& path,
                                       const PinholeCamera& camera);

}  // namespace fewloc
