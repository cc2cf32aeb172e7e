#pragma once

// Coordinate conventions shared by every module.
//
// World frame is right-handed with +z up. Azimuth is measured counter-clockwise
// from +x in the xy-plane, elevation above the xy-plane. Cameras always look at
// the origin. Camera space follows the x-right / y-down / z-forward convention,
// so the world-to-camera rotation is proper (det = +1).
//
// Depth is z-depth: distance along the camera forward axis.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <limits>
#include <utility>

#include "json.hpp"

namespace smesh {

template <typename Scalar>
using Vec3T = Eigen::Matrix<Scalar, 3, 1>;

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Scene box every field and renderer works in.
inline constexpr double kBoxMin = -1.0;
inline constexpr double kBoxMax = 1.0;

/// Default synthetic-scene camera distance and vertical field of view.
inline constexpr double kDefaultRadius = 2.5;
inline constexpr double kDefaultFovDeg = 50.0;

// Trig in degrees, exact at multiples of 90 so that canonical poses land on
// exact coordinates.
double sin_deg(double deg);
double cos_deg(double deg);

/// Wraps an angle into [0, 360).
double wrap_degrees(double deg);

struct CameraPose {
  double azimuth_deg = 0.0;
  double elevation_deg = 0.0;
  double radius = kDefaultRadius;
  double fov_deg = kDefaultFovDeg;
  int width = 64;
  int height = 64;

  Vec3 position() const;
  /// Unit vector from the camera toward the origin.
  Vec3 forward() const;
  /// World up reference used for the look-at frame: +z, or +x at the poles.
  Vec3 up_reference() const;
  Vec3 right() const;
  /// Image-down axis (camera +y) in world coordinates.
  Vec3 down() const;
  /// Rows are right, down, forward.
  Mat3 world_to_camera_rotation() const;
  Mat4 world_to_camera() const;
  Mat4 camera_to_world() const;
  /// Focal length in pixels derived from the vertical field of view.
  double focal_px() const;

  /// Projects a world point to continuous pixel coordinates; z is z-depth.
  Vec3 project(const Vec3& world) const;

  bool operator==(const CameraPose&) const = default;
};

/// Builds a validated pose. Throws std::invalid_argument on non-finite values,
/// radius <= 0, elevation outside [-90, 90], fov outside (0, 180) or
/// non-positive image size.
CameraPose camera_from_spherical(double azimuth_deg, double elevation_deg, double radius,
                                 double fov_deg, int width, int height);

void validate(const CameraPose& camera);

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  // Entry/exit against the scene box; t_near == t_far == 0 encodes a miss.
  double t_near = 0.0;
  double t_far = 0.0;

  bool hits_box() const { return t_far > t_near; }
  Vec3 at(double t) const { return origin + t * direction; }
};

/// Slab intersection of a ray with an axis-aligned box. Returns {0, 0} on a
/// miss. Entry is clamped to 0 when the origin is inside the box.
template <typename Scalar>
std::pair<Scalar, Scalar> intersect_box(const Vec3T<Scalar>& origin, const Vec3T<Scalar>& dir,
                                        Scalar lo = Scalar(kBoxMin), Scalar hi = Scalar(kBoxMax)) {
  Scalar t0 = Scalar(0);
  Scalar t1 = std::numeric_limits<Scalar>::infinity();
  for (int axis = 0; axis < 3; ++axis) {
    if (dir[axis] == Scalar(0)) {
      if (origin[axis] < lo || origin[axis] > hi) return {Scalar(0), Scalar(0)};
      continue;
    }
    const Scalar inv = Scalar(1) / dir[axis];
    Scalar ta = (lo - origin[axis]) * inv;
    Scalar tb = (hi - origin[axis]) * inv;
    if (ta > tb) std::swap(ta, tb);
    if (ta > t0) t0 = ta;
    if (tb < t1) t1 = tb;
    if (t0 >= t1) return {Scalar(0), Scalar(0)};
  }
  return {t0, t1};
}

/// Ray through continuous pixel coordinates (u, v); (0, 0) is the top-left corner.
Ray camera_ray(const CameraPose& camera, double u, double v);

/// Ray through the center of pixel (px, py).
Ray pixel_ray(const CameraPose& camera, int px, int py);

void to_json(nlohmann::json& j, const CameraPose& camera);
void from_json(const nlohmann::json& j, CameraPose& camera);

}  // namespace smesh
