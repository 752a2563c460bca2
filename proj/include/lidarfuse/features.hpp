#pragma once

#include "lidarfuse/geom.hpp"
#include "lidarfuse/icp.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

namespace lidarfuse {

struct Keypoint {
  Vec3 position = Vec3::Zero();
  int source_index = -1;  // index into the cloud the detector ran on
  double scale = 0.0;
};

struct FpfhDescriptor {
  // 3 angular features x 11 bins; each 11-bin block sums to 100 when valid.
  std::array<double, 33> histogram{};
  bool valid = false;
};

struct Correspondence {
  int src_idx = -1;
  int tgt_idx = -1;
  double distance = 0.0;  // feature-space L2
};

/// DoG extrema of the per-point curvature field over a Gaussian scale
/// pyramid. One keypoint per point at most (strongest response wins).
std::vector<Keypoint> detect_sift_keypoints(const PointCloud& c, double min_scale, int octaves,
                                            int scales_per_octave, double min_contrast);

/// FPFH descriptors at the keypoints (two-pass SPFH weighting). Keypoints
/// without radius neighbors get a zeroed, invalid descriptor.
std::vector<FpfhDescriptor> compute_fpfh(const PointCloud& c,
                                         const std::vector<Keypoint>& keypoints, double radius);

/// Nearest target descriptor per source descriptor (L2, one-directional).
std::vector<Correspondence> match_correspondences(const std::vector<FpfhDescriptor>& src,
                                                  const std::vector<FpfhDescriptor>& tgt);

/// Least-squares rigid transform mapping pairs.first onto pairs.second
/// (Kabsch, det +1 enforced). Throws std::invalid_argument on degenerate
/// configurations.
RigidTransform estimate_transform_svd(const std::vector<std::pair<Vec3, Vec3>>& pairs);

/// 3-point RANSAC over keypoint correspondences. Returns the largest
/// consensus set and its refit transform; deterministic for a fixed seed.
std::pair<std::vector<Correspondence>, RigidTransform> ransac_filter(
    const std::vector<Correspondence>& corrs, const std::vector<Keypoint>& src_kp,
    const std::vector<Keypoint>& tgt_kp, double inlier_threshold, int max_iterations,
    std::uint64_t seed);

/// z-component of R*(0,0,1) must stay positive: rejects alignments that turn
/// the source cloud upside down.
bool check_up_vector(const RigidTransform& t);

/// Overlap-gated RMS distance between transformed source points and their
/// target nearest neighbors within r_c. Empty overlap -> nullopt.
std::optional<double> p2p_error(const PointCloud& src, const PointCloud& tgt,
                                const RigidTransform& t, double r_c);
std::optional<double> p2p_error(const PointCloud& src, const KdTree3& tgt_tree,
                                const RigidTransform& t, double r_c);

struct CoarseParams {
  double sift_min_scale = 0.2;
  int sift_octaves = 4;
  int sift_scales_per_octave = 5;
  double sift_min_contrast = 1e-3;
  double fpfh_radius = 1.5;
  double inlier_threshold = 2.0;  // 0.5 * octree max voxel size
  int ransac_max_iterations = 50000;
  std::uint64_t seed = 0;
  int max_outer_iterations = 2;
  double p2p_cutoff = 4.0;  // r_c, around the maximal downsampling voxel size
  GicpParams gicp;
};

struct CoarseCandidate {
  RigidTransform transform;
  std::optional<double> p2p;
  int inlier_count = 0;
  bool up_ok = false;
};

struct CoarseRegistrationResult {
  RigidTransform transform;
  std::optional<double> p2p_error;  // nullopt: no overlap under cutoff
  int inlier_count = 0;
  int iterations_used = 0;
  std::uint64_t seed = 0;
  std::vector<CoarseCandidate> candidates;
};

/// Full coarse pairwise registration of one cloud pair (keypoints ->
/// descriptors -> matching -> iterated {RANSAC, SVD, up-vector check, G-ICP
/// refinement, p2p scoring} with supporting correspondences removed between
/// iterations). Lowest p2p error wins.
CoarseRegistrationResult coarse_register_pair(const PointCloud& src, const PointCloud& tgt,
                                              const CoarseParams& params);

}  // namespace lidarfuse
