#pragma once

// Software rasterizer for indexed triangle meshes. One ray per pixel center,
// z-buffered with a strict test so the lower triangle index wins ties.
// Barycentrics come from the world-space ray/triangle hit, so attribute
// interpolation is perspective-correct. Normals are flat, in world space.
//
// The taped variant differentiates rgb, depth and normal with respect to
// vertex positions and colors. Visibility is frozen: the triangle covering
// each pixel is fixed and the mask carries no gradient.

#include <vector>

#include <Eigen/Core>

#include "smesh/autodiff.hpp"
#include "smesh/core3d.hpp"
#include "smesh/image.hpp"
#include "smesh/mesh.hpp"
#include "smesh/triplane.hpp"

namespace smesh {

/// Color used for meshes without vertex colors.
inline constexpr double kDefaultGray = 0.5;

/// Color head at every vertex (points outside the box are clamped).
Eigen::MatrixX3d shade_vertices(const TriplaneField& field, const Eigen::MatrixX3d& vertices);
Mesh shade_vertices(const TriplaneField& field, const Mesh& mesh);
ad::Var shade_vertices(const FieldGraph& graph, const ad::Var& vertices);

/// Moller-Trumbore hit of a ray with triangle (a, b, c): ray parameter t and
/// barycentric weights (u, v) of b and c. Returns false for parallel rays.
template <typename Scalar>
bool intersect_triangle(const Vec3T<Scalar>& origin, const Vec3T<Scalar>& dir, const Vec3T<Scalar>& a,
                        const Vec3T<Scalar>& b, const Vec3T<Scalar>& c, Scalar& t, Scalar& u, Scalar& v) {
  using std::abs;
  const Vec3T<Scalar> e1 = b - a;
  const Vec3T<Scalar> e2 = c - a;
  const Vec3T<Scalar> p = dir.cross(e2);
  const Scalar det = e1.dot(p);
  if (abs(det) < Scalar(1e-14)) return false;
  const Scalar inv = Scalar(1) / det;
  const Vec3T<Scalar> s = origin - a;
  u = s.dot(p) * inv;
  const Vec3T<Scalar> q = s.cross(e1);
  v = dir.dot(q) * inv;
  t = e2.dot(q) * inv;
  return true;
}

struct RasterOptions {
  /// Row bands rasterized in parallel; output does not depend on it.
  int threads = 1;
};

/// Which triangle covers each pixel (-1 for background) and where.
struct Coverage {
  int width = 0;
  int height = 0;
  Eigen::VectorXi triangle;
  Eigen::MatrixX2d barycentric;  // weights of the triangle's 2nd and 3rd vertex

  Eigen::Index covered() const { return (triangle.array() >= 0).count(); }
};

Coverage rasterize_coverage(const Eigen::MatrixX3d& vertices, const Eigen::MatrixX3i& triangles,
                            const CameraPose& camera, const RasterOptions& options = {});

/// Renders at the camera's own resolution.
ImageBuffer rasterize(const Mesh& mesh, const CameraPose& camera, const RasterOptions& options = {});
/// Renders at width x height, overriding the camera's resolution.
ImageBuffer rasterize(const Mesh& mesh, const CameraPose& camera, int width, int height,
                      const RasterOptions& options = {});

struct RasterGraph {
  ad::Var rgb;     // pixels x 3
  ad::Var depth;   // pixels x 1
  ad::Var normal;  // pixels x 3
  Eigen::VectorXd mask;
  Coverage coverage;
};

/// Differentiable render. `vertices` and `colors` are n x 3 tape nodes.
RasterGraph rasterize(const ad::Var& vertices, const ad::Var& colors, const Eigen::MatrixX3i& triangles,
                      const CameraPose& camera, const RasterOptions& options = {});

}  // namespace smesh
