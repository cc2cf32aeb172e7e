#pragma once

#include <Eigen/Core>

#include "smesh/core3d.hpp"

namespace smesh {

/// Indexed triangle mesh. `colors` and `normals` are per-vertex and empty
/// when absent.
struct Mesh {
  Eigen::MatrixX3d vertices;
  Eigen::MatrixX3i triangles;
  Eigen::MatrixX3d colors;
  Eigen::MatrixX3d normals;

  Eigen::Index vertex_count() const { return vertices.rows(); }
  Eigen::Index triangle_count() const { return triangles.rows(); }
  bool empty() const { return triangles.rows() == 0; }
  bool has_colors() const { return colors.rows() == vertices.rows() && colors.rows() > 0; }

  Vec3 vertex(Eigen::Index i) const { return vertices.row(i).transpose(); }
};

template <typename Scalar>
Scalar triangle_area(const Vec3T<Scalar>& a, const Vec3T<Scalar>& b, const Vec3T<Scalar>& c) {
  return Scalar(0.5) * (b - a).cross(c - a).norm();
}

inline double triangle_area(const Mesh& mesh, Eigen::Index t) {
  return triangle_area<double>(mesh.vertex(mesh.triangles(t, 0)), mesh.vertex(mesh.triangles(t, 1)),
                               mesh.vertex(mesh.triangles(t, 2)));
}

}  // namespace smesh
