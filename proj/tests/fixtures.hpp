#pragma once

#include <algorithm>
#include <cmath>

#include <random>

#include "smesh/campose.hpp"
#include "smesh/dataio.hpp"
#include "smesh/optfit.hpp"
#include "smesh/triplane.hpp"

namespace smesh::testing {

// Field whose single feature channel is |x|^2: the xy plane holds x^2 + y^2,
// the xz plane z^2 and the yz plane 0. Density is
// softplus(softplus(k (r^2 - |x|^2)) - 30), so it is ~0 outside the sphere
// and grows like k (r^2 - |x|^2) inside. Color is constant.
inline TriplaneField sphere_field(double radius, double sharpness, const Vec3& rgb, int resolution = 64) {
  FieldConfig cfg;
  cfg.resolution = resolution;
  cfg.channels = 1;
  cfg.hidden_width = 1;
  cfg.hidden_layers = 1;
  cfg.aux_hidden_width = 1;
  TriplaneField f = make_field(cfg);
  const double h = (kBoxMax - kBoxMin) / (resolution - 1);
  for (int v = 0; v < resolution; ++v) {
    for (int u = 0; u < resolution; ++u) {
      const double a = kBoxMin + u * h, b = kBoxMin + v * h;
      f.planes[0](v * resolution + u, 0) = a * a + b * b;
      f.planes[1](v * resolution + u, 0) = b * b;
      f.planes[2](v * resolution + u, 0) = 0.0;
    }
  }
  auto& d = f.head(HeadKind::density).layers;
  d[0].weight.setConstant(-sharpness);
  d[0].bias.setConstant(sharpness * radius * radius);
  d[1].weight.setConstant(1.0);
  d[1].bias.setConstant(-30.0);
  auto& c = f.head(HeadKind::color).layers;
  c[0].weight.setZero();
  c[0].bias.setZero();
  c[1].weight.setZero();
  for (int k = 0; k < 3; ++k) {
    const double p = std::clamp(rgb[k], 1e-12, 1.0 - 1e-12);
    c[1].bias(0, k) = std::log(p / (1.0 - p));
  }
  return f;
}

struct Stage2Problem {
  TriplaneField field;
  ViewSet views;
  FitConfig config;
};

// R = 8, C = 4 field with random weights, its raw density shifted so the
// N = 8 lattice straddles tau and its SDF head initialized from it;
// sphere_box ground truth at 16 x 16.
inline Stage2Problem tiny_stage2_problem(std::uint64_t seed = 1) {
  Stage2Problem p;
  p.config = FitConfig::desk();
  p.config.field.resolution = 8;
  p.config.field.channels = 4;
  p.config.field.hidden_width = 8;
  p.config.field.hidden_layers = 1;
  p.config.field.aux_hidden_width = 4;
  p.config.field.seed = seed;
  p.config.grid_resolution = 8;
  p.config.render_size_stage2 = 16;
  p.config.n_supervision_views = 2;
  p.field = make_field(p.config.field);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  for (Eigen::MatrixXd* m : p.field.parameters()) {
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = u(rng);
  }
  Eigen::MatrixX3d lattice(512, 3);
  for (int k = 0; k < 8; ++k) {
    for (int j = 0; j < 8; ++j) {
      for (int i = 0; i < 8; ++i) lattice.row((k * 8 + j) * 8 + i) << -1 + i * 2.0 / 7, -1 + j * 2.0 / 7, -1 + k * 2.0 / 7;
    }
  }
  Eigen::VectorXd d = query_head(p.field, HeadKind::density, lattice, true).col(0);
  std::nth_element(d.data(), d.data() + d.size() / 2, d.data() + d.size());
  p.field.head(HeadKind::density).layers.back().bias.array() += p.config.tau - d[d.size() / 2] + 1e-3;
  p.field = init_sdf_from_density(p.field, p.config.tau);

  const SceneSpec scene = sphere_box_scene();
  for (const CameraPose& cam : zero123pp_targets(0.0, kDefaultRadius, kDefaultFovDeg, 16, 16).poses) {
    p.views.cameras.push_back(cam);
    p.views.images.push_back(render_gt(scene, cam));
  }
  return p;
}

struct GradientCheck {
  int checked = 0;
  int skipped = 0;  // visibility or topology changed inside the step
  double worst = 0.0;
};

// Total stage-2 loss gradient against central differences at `count` random
// parameter entries. Entries where halving the step changes the difference
// quotient are discontinuities of the frozen-visibility loss and are redrawn.
inline GradientCheck stage2_gradient_check(Stage2Problem& p, int count, std::uint64_t seed) {
  const std::vector<int> chosen{0, 3};
  ad::ParamGrad grad(p.field.parameters().size());
  evaluate_stage2(p.field, p.views, chosen, p.config, &grad);
  const auto loss = [&] { return evaluate_stage2(p.field, p.views, chosen, p.config, nullptr).total; };
  const auto params = p.field.parameters();
  std::mt19937_64 rng(seed);
  GradientCheck out;
  while (out.checked < count && out.skipped < 10 * count) {
    const auto k = std::uniform_int_distribution<std::size_t>(0, params.size() - 1)(rng);
    const auto i = std::uniform_int_distribution<Eigen::Index>(0, params[k]->size() - 1)(rng);
    double& x = params[k]->data()[i];
    const double saved = x;
    const auto quotient = [&](double h) {
      x = saved + h;
      const double up = loss();
      x = saved - h;
      const double down = loss();
      x = saved;
      return (up - down) / (2 * h);
    };
    const double fd = quotient(1e-5), fd_half = quotient(5e-6);
    const double analytic = grad.touched(k) ? grad[k].data()[i] : 0.0;
    const double scale = std::max({std::abs(fd), std::abs(analytic), 1e-6});
    if (std::abs(fd - fd_half) > 1e-4 * scale) {
      ++out.skipped;
      continue;
    }
    out.worst = std::max(out.worst, std::abs(fd - analytic) / scale);
    ++out.checked;
  }
  return out;
}

}  // namespace smesh::testing
