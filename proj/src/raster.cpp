#include "smesh/raster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <unsupported/Eigen/AutoDiff>

#include "smesh/parallel.hpp"

namespace smesh {

namespace {

constexpr double kBaryTolerance = 1e-10;
constexpr int kRowsPerBand = 16;

struct Bounds {
  int x0, x1, y0, y1;  // inclusive pixel range; empty when x0 > x1
};

Bounds pixel_bounds(const CameraPose& camera, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Bounds all{0, camera.width - 1, 0, camera.height - 1};
  double umin = std::numeric_limits<double>::infinity(), umax = -umin;
  double vmin = umin, vmax = -umin;
  for (const Vec3* p : {&a, &b, &c}) {
    const Vec3 q = camera.project(*p);
    if (!(q.z() > 1e-9)) return all;  // behind or at the camera plane: test every pixel
    umin = std::min(umin, q.x());
    umax = std::max(umax, q.x());
    vmin = std::min(vmin, q.y());
    vmax = std::max(vmax, q.y());
  }
  // Pixel centers sit at +0.5; widen by one pixel for rounding at edges.
  Bounds out;
  out.x0 = std::max(0, static_cast<int>(std::floor(umin - 0.5)) - 1);
  out.x1 = std::min(camera.width - 1, static_cast<int>(std::ceil(umax - 0.5)) + 1);
  out.y0 = std::max(0, static_cast<int>(std::floor(vmin - 0.5)) - 1);
  out.y1 = std::min(camera.height - 1, static_cast<int>(std::ceil(vmax - 0.5)) + 1);
  return out;
}

Vec3 face_normal(const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 n = (b - a).cross(c - a);
  const double len = n.norm();
  return len > 0.0 ? Vec3(n / len) : Vec3::Zero();
}

}  // namespace

Eigen::MatrixX3d shade_vertices(const TriplaneField& field, const Eigen::MatrixX3d& vertices) {
  if (vertices.rows() == 0) return Eigen::MatrixX3d(0, 3);
  return query_head(field, HeadKind::color, vertices);
}

Mesh shade_vertices(const TriplaneField& field, const Mesh& mesh) {
  Mesh out = mesh;
  out.colors = shade_vertices(field, mesh.vertices);
  return out;
}

ad::Var shade_vertices(const FieldGraph& graph, const ad::Var& vertices) {
  return graph.color(graph.features(vertices));
}

Coverage rasterize_coverage(const Eigen::MatrixX3d& vertices, const Eigen::MatrixX3i& triangles,
                            const CameraPose& camera, const RasterOptions& options) {
  validate(camera);
  const int w = camera.width, h = camera.height;
  Coverage cov;
  cov.width = w;
  cov.height = h;
  cov.triangle = Eigen::VectorXi::Constant(static_cast<Eigen::Index>(w) * h, -1);
  cov.barycentric = Eigen::MatrixX2d::Zero(static_cast<Eigen::Index>(w) * h, 2);
  const Eigen::Index nt = triangles.rows();
  if (nt == 0) return cov;

  std::vector<Bounds> bounds(nt);
  for (Eigen::Index t = 0; t < nt; ++t) {
    bounds[t] = pixel_bounds(camera, vertices.row(triangles(t, 0)).transpose(),
                             vertices.row(triangles(t, 1)).transpose(), vertices.row(triangles(t, 2)).transpose());
  }
  const Vec3 origin = camera.position();
  const Vec3 forward = camera.forward();
  std::vector<Vec3> dirs(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      dirs[static_cast<std::size_t>(y) * w + x] = camera_ray(camera, x + 0.5, y + 0.5).direction;
    }
  }
  const int bands = (h + kRowsPerBand - 1) / kRowsPerBand;
  parallel_for(bands, options.threads, [&](int band) {
    const int y_begin = band * kRowsPerBand;
    const int y_end = std::min(h, y_begin + kRowsPerBand);
    std::vector<double> zbuf(static_cast<std::size_t>(y_end - y_begin) * w, std::numeric_limits<double>::infinity());
    for (Eigen::Index t = 0; t < nt; ++t) {
      const Bounds& bb = bounds[t];
      const int y0 = std::max(bb.y0, y_begin), y1 = std::min(bb.y1, y_end - 1);
      if (bb.x0 > bb.x1 || y0 > y1) continue;
      const Vec3 a = vertices.row(triangles(t, 0)).transpose();
      const Vec3 b = vertices.row(triangles(t, 1)).transpose();
      const Vec3 c = vertices.row(triangles(t, 2)).transpose();
      for (int y = y0; y <= y1; ++y) {
        for (int x = bb.x0; x <= bb.x1; ++x) {
          const Vec3& dir = dirs[static_cast<std::size_t>(y) * w + x];
          double tt, u, v;
          if (!intersect_triangle<double>(origin, dir, a, b, c, tt, u, v)) continue;
          if (tt <= 0.0 || u < -kBaryTolerance || v < -kBaryTolerance || u + v > 1.0 + kBaryTolerance) continue;
          const double depth = tt * dir.dot(forward);
          double& z = zbuf[static_cast<std::size_t>(y - y_begin) * w + x];
          if (!(depth < z)) continue;
          z = depth;
          const Eigen::Index p = static_cast<Eigen::Index>(y) * w + x;
          cov.triangle[p] = static_cast<int>(t);
          cov.barycentric.row(p) << u, v;
        }
      }
    }
  });
  return cov;
}

ImageBuffer rasterize(const Mesh& mesh, const CameraPose& camera, const RasterOptions& options) {
  ImageBuffer img = ImageBuffer::background(camera.width, camera.height);
  const Coverage cov = rasterize_coverage(mesh.vertices, mesh.triangles, camera, options);
  const bool colored = mesh.has_colors();
  const Vec3 origin = camera.position();
  const Vec3 forward = camera.forward();
  for (Eigen::Index p = 0; p < img.pixel_count(); ++p) {
    const int t = cov.triangle[p];
    if (t < 0) continue;
    const int i0 = mesh.triangles(t, 0), i1 = mesh.triangles(t, 1), i2 = mesh.triangles(t, 2);
    const Vec3 a = mesh.vertex(i0), b = mesh.vertex(i1), c = mesh.vertex(i2);
    const double u = cov.barycentric(p, 0), v = cov.barycentric(p, 1);
    const Vec3 hit = (1.0 - u - v) * a + u * b + v * c;
    img.depth[p] = (hit - origin).dot(forward);
    img.normal.row(p) = face_normal(a, b, c).transpose();
    img.mask[p] = 1.0;
    if (colored) {
      img.rgb.row(p) = (1.0 - u - v) * mesh.colors.row(i0) + u * mesh.colors.row(i1) + v * mesh.colors.row(i2);
    } else {
      img.rgb.row(p).setConstant(kDefaultGray);
    }
  }
  return img;
}

ImageBuffer rasterize(const Mesh& mesh, const CameraPose& camera, int width, int height,
                      const RasterOptions& options) {
  CameraPose sized = camera;
  sized.width = width;
  sized.height = height;
  return rasterize(mesh, sized, options);
}

RasterGraph rasterize(const ad::Var& vertices, const ad::Var& colors, const Eigen::MatrixX3i& triangles,
                      const CameraPose& camera, const RasterOptions& options) {
  const Eigen::MatrixXd& V = vertices.value();
  const Eigen::MatrixXd& C = colors.value();
  if (V.cols() != 3 || C.cols() != 3 || C.rows() != V.rows()) {
    throw std::invalid_argument("rasterize: vertices and colors must be matching n x 3 tensors");
  }
  RasterGraph out;
  out.coverage = rasterize_coverage(V, triangles, camera, options);
  const Eigen::Index n = static_cast<Eigen::Index>(camera.width) * camera.height;
  out.mask = Eigen::VectorXd::Zero(n);

  // columns: r, g, b, depth, nx, ny, nz
  Eigen::MatrixXd joint(n, 7);
  joint.leftCols(3).setOnes();
  joint.rightCols(4).setZero();
  const Vec3 origin = camera.position();
  const Vec3 forward = camera.forward();
  for (Eigen::Index p = 0; p < n; ++p) {
    const int t = out.coverage.triangle[p];
    if (t < 0) continue;
    const int i0 = triangles(t, 0), i1 = triangles(t, 1), i2 = triangles(t, 2);
    const Vec3 a = V.row(i0).transpose(), b = V.row(i1).transpose(), c = V.row(i2).transpose();
    const double u = out.coverage.barycentric(p, 0), v = out.coverage.barycentric(p, 1);
    joint.block<1, 3>(p, 0) = (1.0 - u - v) * C.row(i0) + u * C.row(i1) + v * C.row(i2);
    joint(p, 3) = ((1.0 - u - v) * a + u * b + v * c - origin).dot(forward);
    joint.block<1, 3>(p, 4) = face_normal(a, b, c).transpose();
    out.mask[p] = 1.0;
  }

  ad::Tape& tape = vertices.tape();
  const ad::Var node = tape.record(
      std::move(joint), {vertices, colors},
      [camera, triangles, cov = out.coverage](const Eigen::MatrixXd& g, ad::GradAccess& io) {
        using Deriv = Eigen::Matrix<double, 9, 1>;
        using AD = Eigen::AutoDiffScalar<Deriv>;
        const Eigen::MatrixXd& V = io.input(0);
        const Eigen::MatrixXd& C = io.input(1);
        Eigen::MatrixXd* gV = io.wants(0) ? &io.grad(0) : nullptr;
        Eigen::MatrixXd* gC = io.wants(1) ? &io.grad(1) : nullptr;
        const Vec3 origin = camera.position();
        const Vec3 forward = camera.forward();
        for (Eigen::Index p = 0; p < cov.triangle.size(); ++p) {
          const int t = cov.triangle[p];
          if (t < 0) continue;
          const Eigen::RowVectorXd gp = g.row(p);
          if (gp.isZero(0.0)) continue;
          const int idx[3] = {triangles(t, 0), triangles(t, 1), triangles(t, 2)};
          const double u = cov.barycentric(p, 0), v = cov.barycentric(p, 1);
          const Eigen::RowVector3d g_rgb = gp.segment<3>(0);
          if (gC) {
            gC->row(idx[0]) += (1.0 - u - v) * g_rgb;
            gC->row(idx[1]) += u * g_rgb;
            gC->row(idx[2]) += v * g_rgb;
          }
          if (!gV) continue;
          Vec3T<AD> corner[3];
          for (int k = 0; k < 3; ++k) {
            for (int d = 0; d < 3; ++d) corner[k][d] = AD(V(idx[k], d), 9, 3 * k + d);
          }
          const Vec3 dir = camera_ray(camera, (p % camera.width) + 0.5, (p / camera.width) + 0.5).direction;
          AD tt, uu, vv;
          if (!intersect_triangle<AD>(origin.cast<AD>(), dir.cast<AD>(), corner[0], corner[1], corner[2], tt, uu, vv)) {
            continue;
          }
          AD objective = gp[3] * tt * dir.dot(forward);
          for (int ch = 0; ch < 3; ++ch) {
            objective += g_rgb[ch] * ((AD(1.0) - uu - vv) * C(idx[0], ch) + uu * C(idx[1], ch) + vv * C(idx[2], ch));
          }
          const Vec3T<AD> nrm = (corner[1] - corner[0]).cross(corner[2] - corner[0]);
          const AD len = sqrt(nrm.squaredNorm());
          if (len.value() > 0.0) {
            for (int d = 0; d < 3; ++d) objective += gp[4 + d] * nrm[d] / len;
          }
          for (int k = 0; k < 3; ++k) gV->row(idx[k]) += objective.derivatives().segment<3>(3 * k).transpose();
        }
      });
  out.rgb = ad::cols(node, 0, 3);
  out.depth = ad::cols(node, 3, 1);
  out.normal = ad::cols(node, 4, 3);
  return out;
}

}  // namespace smesh
