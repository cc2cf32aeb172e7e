#include "smesh/core3d.hpp"

#include <numbers>
#include <stdexcept>
#include <string>

namespace smesh {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

}  // namespace

double wrap_degrees(double deg) {
  double r = std::fmod(deg, 360.0);
  if (r < 0.0) r += 360.0;
  if (r >= 360.0) r -= 360.0;
  return r;
}

double sin_deg(double deg) {
  const double r = wrap_degrees(deg);
  if (r == 0.0 || r == 180.0) return 0.0;
  if (r == 90.0) return 1.0;
  if (r == 270.0) return -1.0;
  return std::sin(r * kDegToRad);
}

double cos_deg(double deg) {
  const double r = wrap_degrees(deg);
  if (r == 90.0 || r == 270.0) return 0.0;
  if (r == 0.0) return 1.0;
  if (r == 180.0) return -1.0;
  return std::cos(r * kDegToRad);
}

void validate(const CameraPose& c) {
  auto fail = [](const std::string& what) { throw std::invalid_argument("camera: " + what); };
  if (!std::isfinite(c.azimuth_deg) || !std::isfinite(c.elevation_deg) || !std::isfinite(c.radius) ||
      !std::isfinite(c.fov_deg)) {
    fail("non-finite parameter");
  }
  if (c.radius <= 0.0) fail("radius must be positive");
  if (c.elevation_deg < -90.0 || c.elevation_deg > 90.0) fail("elevation outside [-90, 90]");
  if (c.fov_deg <= 0.0 || c.fov_deg >= 180.0) fail("fov outside (0, 180)");
  if (c.width <= 0 || c.height <= 0) fail("image size must be positive");
}

CameraPose camera_from_spherical(double azimuth_deg, double elevation_deg, double radius,
                                 double fov_deg, int width, int height) {
  CameraPose c{azimuth_deg, elevation_deg, radius, fov_deg, width, height};
  validate(c);
  return c;
}

Vec3 CameraPose::position() const {
  const double ce = cos_deg(elevation_deg);
  return radius * Vec3(ce * cos_deg(azimuth_deg), ce * sin_deg(azimuth_deg), sin_deg(elevation_deg));
}

Vec3 CameraPose::forward() const {
  const double ce = cos_deg(elevation_deg);
  return -Vec3(ce * cos_deg(azimuth_deg), ce * sin_deg(azimuth_deg), sin_deg(elevation_deg));
}

Vec3 CameraPose::up_reference() const {
  return std::abs(elevation_deg) == 90.0 ? Vec3::UnitX() : Vec3::UnitZ();
}

Vec3 CameraPose::right() const { return forward().cross(up_reference()).normalized(); }

Vec3 CameraPose::down() const { return forward().cross(right()); }

Mat3 CameraPose::world_to_camera_rotation() const {
  Mat3 r;
  r.row(0) = right().transpose();
  r.row(1) = down().transpose();
  r.row(2) = forward().transpose();
  return r;
}

Mat4 CameraPose::world_to_camera() const {
  const Mat3 r = world_to_camera_rotation();
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = r;
  m.topRightCorner<3, 1>() = -r * position();
  return m;
}

Mat4 CameraPose::camera_to_world() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = world_to_camera_rotation().transpose();
  m.topRightCorner<3, 1>() = position();
  return m;
}

double CameraPose::focal_px() const { return 0.5 * height / std::tan(0.5 * fov_deg * kDegToRad); }

Vec3 CameraPose::project(const Vec3& world) const {
  const Vec3 p = world_to_camera_rotation() * (world - position());
  const double f = focal_px();
  return {f * p.x() / p.z() + 0.5 * width, f * p.y() / p.z() + 0.5 * height, p.z()};
}

Ray camera_ray(const CameraPose& camera, double u, double v) {
  const double f = camera.focal_px();
  const Vec3 local((u - 0.5 * camera.width) / f, (v - 0.5 * camera.height) / f, 1.0);
  Ray ray;
  ray.origin = camera.position();
  ray.direction = (camera.world_to_camera_rotation().transpose() * local).normalized();
  std::tie(ray.t_near, ray.t_far) = intersect_box<double>(ray.origin, ray.direction);
  return ray;
}

Ray pixel_ray(const CameraPose& camera, int px, int py) { return camera_ray(camera, px + 0.5, py + 0.5); }

void to_json(nlohmann::json& j, const CameraPose& c) {
  j = nlohmann::json{{"azimuth_deg", c.azimuth_deg}, {"elevation_deg", c.elevation_deg},
                     {"radius", c.radius},           {"fov_deg", c.fov_deg},
                     {"width", c.width},             {"height", c.height}};
}

void from_json(const nlohmann::json& j, CameraPose& c) {
  c.azimuth_deg = j.at("azimuth_deg").get<double>();
  c.elevation_deg = j.at("elevation_deg").get<double>();
  c.radius = j.at("radius").get<double>();
  c.fov_deg = j.at("fov_deg").get<double>();
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  validate(c);
}

}  // namespace smesh
