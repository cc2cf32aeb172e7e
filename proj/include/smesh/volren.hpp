#pragma once

// Differentiable volume rendering of the triplane density / color field.

#include <cstdint>
#include <optional>
#include <vector>

#include "smesh/autodiff.hpp"
#include "smesh/core3d.hpp"
#include "smesh/image.hpp"
#include "smesh/triplane.hpp"

namespace smesh {

struct VolumeOptions {
  int n_samples = 96;
  /// Render only this rectangle; the whole image when absent.
  std::optional<Patch> patch;
  /// Stratified jitter seed. Samples sit at stratum midpoints when absent.
  std::optional<std::uint64_t> jitter_seed;
  /// Worker threads for gradient-free rendering; output does not depend on it.
  int threads = 1;
};

/// Sample layout of a batch of rays. Ray r owns samples
/// [offsets[r], offsets[r + 1]); rays that miss the box own none.
struct RaySamples {
  std::vector<Eigen::Index> offsets;
  Eigen::MatrixX3d points;
  Eigen::VectorXd delta;    // segment length used for alpha
  Eigen::VectorXd z_depth;  // depth of each sample along the camera axis

  Eigen::Index ray_count() const { return static_cast<Eigen::Index>(offsets.size()) - 1; }
};

RaySamples sample_rays(const CameraPose& camera, const Patch& region, int n_samples,
                       std::optional<std::uint64_t> jitter_seed);

struct Composite {
  ad::Var rgb;    // rays x 3
  ad::Var mask;   // rays x 1
  ad::Var depth;  // rays x 1
};

/// Front-to-back alpha compositing over a white background:
/// alpha_i = 1 - exp(-density_i * delta_i), w_i = alpha_i * prod_{j<i} (1 - alpha_j),
/// rgb = sum w_i c_i + (1 - sum w_i), mask = sum w_i,
/// depth = sum w_i z_i / max(mask, eps).
Composite composite(const ad::Var& density, const ad::Var& color, const RaySamples& samples);

/// Differentiable render of `options.patch` (or the whole image). Rows of the
/// outputs follow the patch in row-major order.
Composite render_volume(const FieldGraph& graph, const CameraPose& camera, const VolumeOptions& options);

/// Gradient-free render; returns a buffer the size of the patch (or image).
ImageBuffer render_volume(const TriplaneField& field, const CameraPose& camera, const VolumeOptions& options = {});

}  // namespace smesh
