#include "smesh/meshmetrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "smesh/core3d.hpp"

namespace smesh {

namespace {

constexpr int kSsimRadius = 5;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

// Separable Gaussian blur with the window truncated and renormalized at borders.
Eigen::ArrayXXd blur(const Eigen::ArrayXXd& img) {
  std::array<double, 2 * kSsimRadius + 1> k{};
  for (int i = -kSsimRadius; i <= kSsimRadius; ++i) k[i + kSsimRadius] = std::exp(-(i * i) / (2 * kSsimSigma * kSsimSigma));
  const auto pass = [&](const Eigen::ArrayXXd& src) {
    // Blurs along rows (second index).
    Eigen::ArrayXXd dst(src.rows(), src.cols());
    for (Eigen::Index r = 0; r < src.rows(); ++r) {
      for (Eigen::Index c = 0; c < src.cols(); ++c) {
        double acc = 0.0, wsum = 0.0;
        for (int d = -kSsimRadius; d <= kSsimRadius; ++d) {
          const Eigen::Index cc = c + d;
          if (cc < 0 || cc >= src.cols()) continue;
          acc += k[d + kSsimRadius] * src(r, cc);
          wsum += k[d + kSsimRadius];
        }
        dst(r, c) = acc / wsum;
      }
    }
    return dst;
  };
  return pass(pass(img).transpose().eval()).transpose();
}

Eigen::ArrayXXd channel(const ImageBuffer& img, int ch) {
  Eigen::ArrayXXd out(img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) out(y, x) = img.rgb(img.index(x, y), ch);
  }
  return out;
}

void check_same_size(const ImageBuffer& a, const ImageBuffer& b, const char* what) {
  if (a.width != b.width || a.height != b.height) throw std::invalid_argument(std::string(what) + ": dimension mismatch");
}

}  // namespace

double psnr(const Eigen::MatrixX3d& a, const Eigen::MatrixX3d& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("psnr: dimension mismatch");
  if (a.rows() == 0) return kPsnrCap;
  const double mse = (a - b).squaredNorm() / static_cast<double>(a.size());
  if (mse < 1e-10) return kPsnrCap;
  return 10.0 * std::log10(1.0 / mse);
}

double psnr(const ImageBuffer& a, const ImageBuffer& b) {
  check_same_size(a, b, "psnr");
  return psnr(a.rgb, b.rgb);
}

double ssim(const ImageBuffer& a, const ImageBuffer& b) {
  check_same_size(a, b, "ssim");
  if (a.pixel_count() == 0) return 1.0;
  double total = 0.0;
  for (int ch = 0; ch < 3; ++ch) {
    const Eigen::ArrayXXd x = channel(a, ch), y = channel(b, ch);
    const Eigen::ArrayXXd mx = blur(x), my = blur(y);
    const Eigen::ArrayXXd sxx = blur(x * x) - mx * mx;
    const Eigen::ArrayXXd syy = blur(y * y) - my * my;
    const Eigen::ArrayXXd sxy = blur(x * y) - mx * my;
    const Eigen::ArrayXXd map = ((2.0 * mx * my + kSsimC1) * (2.0 * sxy + kSsimC2)) /
                                ((mx * mx + my * my + kSsimC1) * (sxx + syy + kSsimC2));
    total += map.mean();
  }
  return total / 3.0;
}

Mesh normalize_unit_cube(const Mesh& mesh) {
  if (mesh.vertex_count() == 0) throw std::invalid_argument("normalize_unit_cube: empty mesh");
  const Eigen::RowVector3d lo = mesh.vertices.colwise().minCoeff();
  const Eigen::RowVector3d hi = mesh.vertices.colwise().maxCoeff();
  const double extent = (hi - lo).maxCoeff();
  if (!(extent > 0.0)) throw std::invalid_argument("normalize_unit_cube: mesh has zero extent");
  const Eigen::RowVector3d center = 0.5 * (lo + hi);
  const double s = 2.0 / extent;
  Mesh out = mesh;
  out.vertices = (mesh.vertices.rowwise() - center) * s;
  return out;
}

Mesh rotate_yaw(const Mesh& mesh, double degrees) {
  Mat3 rot;
  const double c = cos_deg(degrees), s = sin_deg(degrees);
  rot << c, -s, 0, s, c, 0, 0, 0, 1;
  Mesh out = mesh;
  out.vertices = mesh.vertices * rot.transpose();
  if (mesh.normals.rows() > 0) out.normals = mesh.normals * rot.transpose();
  return out;
}

PointCloud sample_surface(const Mesh& mesh, int n, std::uint64_t seed) {
  if (n < 0) throw std::invalid_argument("sample_surface: negative sample count");
  std::vector<double> cumulative(static_cast<std::size_t>(mesh.triangle_count()));
  double total = 0.0;
  for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t) {
    total += triangle_area(mesh, t);
    cumulative[t] = total;
  }
  if (!(total > 0.0)) throw std::invalid_argument("sample_surface: mesh has zero surface area");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  PointCloud cloud;
  cloud.seed = seed;
  cloud.points.resize(n, 3);
  for (int i = 0; i < n; ++i) {
    const double pick = uniform(rng) * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
    if (it == cumulative.end()) --it;
    const Eigen::Index t = it - cumulative.begin();
    const double r1 = uniform(rng), r2 = uniform(rng);
    const double s = std::sqrt(r1);
    cloud.points.row(i) = (1.0 - s) * mesh.vertices.row(mesh.triangles(t, 0)) +
                          s * (1.0 - r2) * mesh.vertices.row(mesh.triangles(t, 1)) +
                          s * r2 * mesh.vertices.row(mesh.triangles(t, 2));
  }
  return cloud;
}

KdTree::KdTree(const Eigen::MatrixX3d& points) : points_(points) {
  std::vector<int> ids(static_cast<std::size_t>(points.rows()));
  std::iota(ids.begin(), ids.end(), 0);
  nodes_.reserve(ids.size());
  root_ = build(ids, 0, static_cast<int>(ids.size()), 0);
}

int KdTree::build(std::vector<int>& ids, int begin, int end, int depth) {
  if (begin >= end) return -1;
  const int axis = depth % 3;
  const int mid = begin + (end - begin) / 2;
  std::nth_element(ids.begin() + begin, ids.begin() + mid, ids.begin() + end,
                   [&](int a, int b) { return points_(a, axis) < points_(b, axis); });
  const int node = static_cast<int>(nodes_.size());
  nodes_.push_back({ids[mid], axis, -1, -1});
  const int left = build(ids, begin, mid, depth + 1);
  const int right = build(ids, mid + 1, end, depth + 1);
  nodes_[node].left = left;
  nodes_[node].right = right;
  return node;
}

void KdTree::search(int node, const Eigen::Vector3d& q, double& best) const {
  if (node < 0) return;
  const Node& n = nodes_[node];
  const Eigen::Vector3d p = points_.row(n.point).transpose();
  best = std::min(best, (q - p).squaredNorm());
  const double diff = q[n.axis] - p[n.axis];
  const int near = diff < 0.0 ? n.left : n.right;
  const int far = diff < 0.0 ? n.right : n.left;
  search(near, q, best);
  if (diff * diff <= best) search(far, q, best);
}

double KdTree::nearest_distance(const Eigen::Vector3d& q) const {
  if (root_ < 0) throw std::logic_error("KdTree: empty tree");
  double best = std::numeric_limits<double>::infinity();
  search(root_, q, best);
  return std::sqrt(best);
}

Eigen::VectorXd nearest_distances(const Eigen::MatrixX3d& from, const Eigen::MatrixX3d& to) {
  const KdTree tree(to);
  Eigen::VectorXd d(from.rows());
  for (Eigen::Index i = 0; i < from.rows(); ++i) d[i] = tree.nearest_distance(from.row(i).transpose());
  return d;
}

CloudComparison compare_clouds(const PointCloud& a, const PointCloud& b, double tau) {
  if (a.size() == 0 || b.size() == 0) throw std::invalid_argument("chamfer: empty point cloud");
  const Eigen::VectorXd dab = nearest_distances(a.points, b.points);
  const Eigen::VectorXd dba = nearest_distances(b.points, a.points);
  CloudComparison out;
  out.chamfer = dab.mean() + dba.mean();
  const double precision = static_cast<double>((dab.array() <= tau).count()) / static_cast<double>(a.size());
  const double recall = static_cast<double>((dba.array() <= tau).count()) / static_cast<double>(b.size());
  out.fscore = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  return out;
}

double chamfer(const PointCloud& a, const PointCloud& b) {
  if (a.size() == 0 || b.size() == 0) throw std::invalid_argument("chamfer: empty point cloud");
  return nearest_distances(a.points, b.points).mean() + nearest_distances(b.points, a.points).mean();
}

double fscore(const PointCloud& a, const PointCloud& b, double tau) { return compare_clouds(a, b, tau).fscore; }

YawAlignment align_yaw(const Mesh& pred, const Mesh& gt, int steps, std::uint64_t seed) {
  if (steps < 1) throw std::invalid_argument("align_yaw: steps must be >= 1");
  const PointCloud p = sample_surface(pred, kAlignSamples, seed);
  const PointCloud g = sample_surface(gt, kAlignSamples, seed);
  YawAlignment best;
  best.chamfer = std::numeric_limits<double>::infinity();
  for (int k = 0; k < steps; ++k) {
    const double yaw = 360.0 * k / steps;
    const double c = cos_deg(yaw), s = sin_deg(yaw);
    Mat3 rot;
    rot << c, -s, 0, s, c, 0, 0, 0, 1;
    PointCloud rotated{p.points * rot.transpose(), seed};
    const double cd = chamfer(rotated, g);
    if (cd < best.chamfer) {
      best.chamfer = cd;
      best.yaw_deg = yaw;
    }
  }
  best.mesh = rotate_yaw(pred, best.yaw_deg);
  return best;
}

}  // namespace smesh
