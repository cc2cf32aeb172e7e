#pragma once

// Image and geometry metrics: PSNR, SSIM, unit-cube normalization, uniform
// surface sampling, Chamfer distance, F-score and yaw alignment.

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "smesh/image.hpp"
#include "smesh/mesh.hpp"

namespace smesh {

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE) over rgb; kPsnrCap when MSE < 1e-10.
double psnr(const Eigen::MatrixX3d& a, const Eigen::MatrixX3d& b);
double psnr(const ImageBuffer& a, const ImageBuffer& b);

/// Mean local SSIM over an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, L = 1, per channel then averaged. Near borders the window is
/// truncated and renormalized.
double ssim(const ImageBuffer& a, const ImageBuffer& b);

/// Centers the bounding box at the origin and scales isotropically so the
/// largest extent is 2. Throws std::invalid_argument for empty or flat meshes.
Mesh normalize_unit_cube(const Mesh& mesh);

/// Rotation about +z by `degrees`, applied to vertices and normals.
Mesh rotate_yaw(const Mesh& mesh, double degrees);

struct PointCloud {
  Eigen::MatrixX3d points;
  std::uint64_t seed = 0;

  Eigen::Index size() const { return points.rows(); }
};

inline constexpr int kDefaultSurfaceSamples = 16384;

/// Area-weighted triangle choice, then a uniform point in the triangle.
PointCloud sample_surface(const Mesh& mesh, int n = kDefaultSurfaceSamples, std::uint64_t seed = 0);

/// Static 3-d tree for exact nearest-neighbor distances.
class KdTree {
 public:
  explicit KdTree(const Eigen::MatrixX3d& points);

  /// Euclidean distance from q to the closest point.
  double nearest_distance(const Eigen::Vector3d& q) const;
  Eigen::Index size() const { return points_.rows(); }

 private:
  struct Node {
    int point = -1;
    int axis = 0;
    int left = -1;
    int right = -1;
  };
  int build(std::vector<int>& ids, int begin, int end, int depth);
  void search(int node, const Eigen::Vector3d& q, double& best) const;

  Eigen::MatrixX3d points_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

/// d(a, B) for every row a of `from`.
Eigen::VectorXd nearest_distances(const Eigen::MatrixX3d& from, const Eigen::MatrixX3d& to);

/// mean_a d(a, B) + mean_b d(b, A) with non-squared distances.
double chamfer(const PointCloud& a, const PointCloud& b);

inline constexpr double kDefaultFscoreThreshold = 0.2;

/// Harmonic mean of precision (A within tau of B) and recall (B within tau of A).
double fscore(const PointCloud& a, const PointCloud& b, double tau = kDefaultFscoreThreshold);

struct CloudComparison {
  double chamfer = 0.0;
  double fscore = 0.0;
};
CloudComparison compare_clouds(const PointCloud& a, const PointCloud& b, double tau = kDefaultFscoreThreshold);

struct YawAlignment {
  double yaw_deg = 0.0;
  double chamfer = 0.0;
  Mesh mesh;
};

inline constexpr int kAlignSamples = 2048;

/// Rotates `pred` about z by the candidate k * 360 / steps that minimizes CD
/// against `gt` on kAlignSamples-point clouds. Ties go to the smallest k.
YawAlignment align_yaw(const Mesh& pred, const Mesh& gt, int steps = 72, std::uint64_t seed = 0);

}  // namespace smesh
