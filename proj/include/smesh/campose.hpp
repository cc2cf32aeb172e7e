#pragma once

// Camera-pose sets: multi-view diffusion target views, evaluation orbits,
// random training viewpoints, and shared-transform augmentation / per-pose
// perturbation. All randomness flows from explicit seeds.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "smesh/core3d.hpp"

namespace smesh {

struct PoseSet {
  std::vector<CameraPose> poses;
  std::optional<std::uint64_t> seed;
  std::string label;

  std::size_t size() const { return poses.size(); }
};

/// Six fixed target views around a query image: azimuths query + 30 + 60k,
/// elevations alternating 20 / -10 starting at 20.
PoseSet zero123pp_targets(double query_azimuth_deg, double radius = kDefaultRadius,
                          double fov_deg = kDefaultFovDeg, int width = 64, int height = 64);

/// Orbit with uniform azimuths k * 360 / n; elevation k cycles through
/// `elevation_cycle` in azimuth order. Defaults produce the 21-view set.
PoseSet orbit_eval_poses(int n = 21, const std::vector<double>& elevation_cycle = {30.0, 0.0, -30.0},
                         double radius = kDefaultRadius, double fov_deg = kDefaultFovDeg, int width = 64,
                         int height = 64);

struct ViewpointRanges {
  double elevation_min_deg = -30.0;
  double elevation_max_deg = 75.0;
  double radius = kDefaultRadius;
  double fov_deg = kDefaultFovDeg;
  int width = 64;
  int height = 64;
};

/// Azimuth ~ U[0, 360), elevation ~ U[min, max], fixed radius.
PoseSet random_viewpoints(int n, std::uint64_t seed, const ViewpointRanges& ranges = {});

/// One draw of the shared augmentation transform.
struct Augmentation {
  double rotation_deg = 0.0;
  double scale = 1.0;
};

Augmentation draw_augmentation(std::uint64_t seed, double max_scale_delta);

/// Applies one shared yaw rotation and one shared radius scale to every pose.
PoseSet apply_augmentation(const PoseSet& poses, const Augmentation& aug);

/// Draws the shared transform from `seed` and applies it (default delta 0.2).
PoseSet augment_poses(const PoseSet& poses, std::uint64_t seed, double max_scale_delta = 0.2);

/// Independent Gaussian noise on azimuth, elevation (sigma_deg) and radius
/// (sigma_radius). Elevation is clamped to [-90, 90], radius kept positive.
PoseSet perturb_poses(const PoseSet& poses, std::uint64_t seed, double sigma_deg = 1.0,
                      double sigma_radius = 0.02);

void to_json(nlohmann::json& j, const PoseSet& set);
void from_json(const nlohmann::json& j, PoseSet& set);

}  // namespace smesh
