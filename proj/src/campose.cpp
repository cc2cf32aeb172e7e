#include "smesh/campose.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

namespace smesh {

PoseSet zero123pp_targets(double query_azimuth_deg, double radius, double fov_deg, int width, int height) {
  if (!std::isfinite(query_azimuth_deg)) throw std::invalid_argument("zero123pp_targets: non-finite azimuth");
  PoseSet set;
  set.label = "zero123pp";
  for (int k = 0; k < 6; ++k) {
    const double azimuth = wrap_degrees(query_azimuth_deg + 30.0 + 60.0 * k);
    const double elevation = (k % 2 == 0) ? 20.0 : -10.0;
    set.poses.push_back(camera_from_spherical(azimuth, elevation, radius, fov_deg, width, height));
  }
  return set;
}

PoseSet orbit_eval_poses(int n, const std::vector<double>& elevation_cycle, double radius, double fov_deg,
                         int width, int height) {
  if (n < 1) throw std::invalid_argument("orbit_eval_poses: n must be >= 1");
  if (elevation_cycle.empty()) throw std::invalid_argument("orbit_eval_poses: empty elevation cycle");
  PoseSet set;
  set.label = "orbit";
  for (int k = 0; k < n; ++k) {
    const double azimuth = k * (360.0 / n);
    const double elevation = elevation_cycle[static_cast<std::size_t>(k) % elevation_cycle.size()];
    set.poses.push_back(camera_from_spherical(azimuth, elevation, radius, fov_deg, width, height));
  }
  return set;
}

PoseSet random_viewpoints(int n, std::uint64_t seed, const ViewpointRanges& ranges) {
  if (n < 1) throw std::invalid_argument("random_viewpoints: n must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> azimuth(0.0, 360.0);
  std::uniform_real_distribution<double> elevation(ranges.elevation_min_deg, ranges.elevation_max_deg);
  PoseSet set;
  set.label = "random";
  set.seed = seed;
  for (int k = 0; k < n; ++k) {
    const double a = azimuth(rng);
    const double e = elevation(rng);
    set.poses.push_back(camera_from_spherical(a, e, ranges.radius, ranges.fov_deg, ranges.width, ranges.height));
  }
  return set;
}

Augmentation draw_augmentation(std::uint64_t seed, double max_scale_delta) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> rotation(0.0, 360.0);
  Augmentation aug;
  aug.rotation_deg = rotation(rng);
  if (max_scale_delta > 0.0) {
    std::uniform_real_distribution<double> scale(1.0 - max_scale_delta, 1.0 + max_scale_delta);
    aug.scale = scale(rng);
  }
  return aug;
}

PoseSet apply_augmentation(const PoseSet& poses, const Augmentation& aug) {
  PoseSet out = poses;
  for (auto& p : out.poses) {
    p.azimuth_deg = wrap_degrees(p.azimuth_deg + aug.rotation_deg);
    p.radius *= aug.scale;
  }
  return out;
}

PoseSet augment_poses(const PoseSet& poses, std::uint64_t seed, double max_scale_delta) {
  if (poses.poses.empty()) throw std::invalid_argument("augment_poses: empty pose set");
  PoseSet out = apply_augmentation(poses, draw_augmentation(seed, max_scale_delta));
  out.seed = seed;
  return out;
}

PoseSet perturb_poses(const PoseSet& poses, std::uint64_t seed, double sigma_deg, double sigma_radius) {
  if (sigma_deg < 0.0 || sigma_radius < 0.0) throw std::invalid_argument("perturb_poses: negative sigma");
  PoseSet out = poses;
  out.seed = seed;
  if (sigma_deg == 0.0 && sigma_radius == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (auto& p : out.poses) {
    const double da = sigma_deg * unit(rng);
    const double de = sigma_deg * unit(rng);
    const double dr = sigma_radius * unit(rng);
    p.azimuth_deg = wrap_degrees(p.azimuth_deg + da);
    p.elevation_deg = std::clamp(p.elevation_deg + de, -90.0, 90.0);
    p.radius = std::max(p.radius + dr, 1e-6);
  }
  return out;
}

void to_json(nlohmann::json& j, const PoseSet& set) {
  j = nlohmann::json::array();
  for (const auto& p : set.poses) j.push_back(p);
}

void from_json(const nlohmann::json& j, PoseSet& set) {
  set = PoseSet{};
  const nlohmann::json* arr = &j;
  if (j.is_object()) {
    arr = &j.at("poses");
    if (j.contains("seed") && !j["seed"].is_null()) set.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("label")) set.label = j["label"].get<std::string>();
  }
  for (const auto& item : *arr) set.poses.push_back(item.get<CameraPose>());
}

}  // namespace smesh
