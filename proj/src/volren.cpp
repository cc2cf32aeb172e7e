#include "smesh/volren.hpp"

#include <cmath>
#include <stdexcept>

#include "smesh/parallel.hpp"

namespace smesh {

namespace {

constexpr double kMaskEpsilon = 1e-10;
constexpr double kBackground = 1.0;
constexpr int kRowsPerChunk = 8;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

RaySamples sample_rays(const CameraPose& camera, const Patch& region, int n_samples,
                       std::optional<std::uint64_t> jitter_seed) {
  if (n_samples < 1) throw std::invalid_argument("render_volume: n_samples must be >= 1");
  RaySamples s;
  s.offsets.reserve(region.pixel_count() + 1);
  s.offsets.push_back(0);
  std::vector<Ray> rays;
  rays.reserve(region.pixel_count());
  Eigen::Index total = 0;
  for (int y = 0; y < region.height; ++y) {
    for (int x = 0; x < region.width; ++x) {
      rays.push_back(pixel_ray(camera, region.x0 + x, region.y0 + y));
      if (rays.back().hits_box()) total += n_samples;
      s.offsets.push_back(total);
    }
  }
  s.points.resize(total, 3);
  s.delta.resize(total);
  s.z_depth.resize(total);
  const Vec3 forward = camera.forward();
  for (std::size_t r = 0; r < rays.size(); ++r) {
    const Ray& ray = rays[r];
    if (!ray.hits_box()) continue;
    const int px = region.x0 + static_cast<int>(r) % region.width;
    const int py = region.y0 + static_cast<int>(r) / region.width;
    std::uint64_t state = 0;
    if (jitter_seed) {
      const std::uint64_t pixel = static_cast<std::uint64_t>(py) * camera.width + px;
      state = splitmix64(*jitter_seed ^ splitmix64(pixel));
    }
    const double step = (ray.t_far - ray.t_near) / n_samples;
    const double cos_axis = ray.direction.dot(forward);
    for (int k = 0; k < n_samples; ++k) {
      double u = 0.5;
      if (jitter_seed) {
        state = splitmix64(state);
        u = static_cast<double>(state >> 11) * 0x1.0p-53;
      }
      const double t = ray.t_near + (k + u) * step;
      const Eigen::Index i = s.offsets[r] + k;
      s.points.row(i) = ray.at(t).transpose();
      s.delta[i] = step;
      s.z_depth[i] = t * cos_axis;
    }
  }
  return s;
}

Composite composite(const ad::Var& density, const ad::Var& color, const RaySamples& samples) {
  const Eigen::Index rays = samples.ray_count();
  const Eigen::Index total = samples.offsets.back();
  if (density.rows() != total || density.cols() != 1 || color.rows() != total || color.cols() != 3) {
    throw std::invalid_argument("composite: sample tensor shape mismatch");
  }
  const Eigen::MatrixXd& sigma = density.value();
  const Eigen::MatrixXd& rgb = color.value();

  // columns: r, g, b, mask, depth
  Eigen::MatrixXd out(rays, 5);
  for (Eigen::Index r = 0; r < rays; ++r) {
    double trans = 1.0, mask = 0.0, num = 0.0;
    Eigen::RowVector3d acc = Eigen::RowVector3d::Zero();
    for (Eigen::Index i = samples.offsets[r]; i < samples.offsets[r + 1]; ++i) {
      const double alpha = 1.0 - std::exp(-sigma(i, 0) * samples.delta[i]);
      const double w = trans * alpha;
      acc += w * rgb.row(i);
      mask += w;
      num += w * samples.z_depth[i];
      trans *= 1.0 - alpha;
    }
    out.block<1, 3>(r, 0) = acc.array() + (1.0 - mask) * kBackground;
    out(r, 3) = mask;
    out(r, 4) = num / std::max(mask, kMaskEpsilon);
  }

  struct Layout {
    std::vector<Eigen::Index> offsets;
    Eigen::VectorXd delta, z_depth;
    Eigen::Index ray_count() const { return static_cast<Eigen::Index>(offsets.size()) - 1; }
  };
  ad::Tape& tape = density.tape();
  const ad::Var joint = tape.record(
      std::move(out), {density, color},
      [samples = Layout{samples.offsets, samples.delta, samples.z_depth}](const Eigen::MatrixXd& g,
                                                                         ad::GradAccess& io) {
        const Eigen::MatrixXd& sigma = io.input(0);
        const Eigen::MatrixXd& rgb = io.input(1);
        const Eigen::MatrixXd& result = io.output();
        Eigen::MatrixXd* g_sigma = io.wants(0) ? &io.grad(0) : nullptr;
        Eigen::MatrixXd* g_rgb = io.wants(1) ? &io.grad(1) : nullptr;
        std::vector<double> alpha, trans;
        for (Eigen::Index r = 0; r < samples.ray_count(); ++r) {
          const Eigen::Index begin = samples.offsets[r];
          const Eigen::Index end = samples.offsets[r + 1];
          if (begin == end) continue;
          const Eigen::RowVector3d g_color = g.block<1, 3>(r, 0);
          const double mask = result(r, 3);
          const double denom = std::max(mask, kMaskEpsilon);
          const double num = result(r, 4) * denom;
          const double g_num = g(r, 4) / denom;
          double g_mask = g(r, 3);
          if (mask > kMaskEpsilon) g_mask -= g(r, 4) * num / (denom * denom);

          alpha.resize(end - begin);
          trans.resize(end - begin);
          double t = 1.0;
          for (Eigen::Index i = begin; i < end; ++i) {
            alpha[i - begin] = 1.0 - std::exp(-sigma(i, 0) * samples.delta[i]);
            trans[i - begin] = t;
            t *= 1.0 - alpha[i - begin];
          }
          // q accumulates sum_{i>k} alpha_i prod_{k<j<i} (1 - alpha_j) f_i.
          double q = 0.0;
          for (Eigen::Index i = end - 1; i >= begin; --i) {
            const double a = alpha[i - begin];
            const double tr = trans[i - begin];
            const double f = g_color.dot(rgb.row(i) - Eigen::RowVector3d::Constant(kBackground)) +
                             g_mask + g_num * samples.z_depth[i];
            if (g_sigma) (*g_sigma)(i, 0) += tr * (f - q) * samples.delta[i] * (1.0 - a);
            if (g_rgb) g_rgb->row(i) += tr * a * g_color;
            q = a * f + (1.0 - a) * q;
          }
        }
      });
  return {ad::cols(joint, 0, 3), ad::cols(joint, 3, 1), ad::cols(joint, 4, 1)};
}

Composite render_volume(const FieldGraph& graph, const CameraPose& camera, const VolumeOptions& options) {
  validate(camera);
  const Patch region = options.patch.value_or(Patch{0, 0, camera.width, camera.height});
  if (region.x0 < 0 || region.y0 < 0 || region.width <= 0 || region.height <= 0 ||
      region.x0 + region.width > camera.width || region.y0 + region.height > camera.height) {
    throw std::out_of_range("render_volume: patch outside image");
  }
  ad::Tape& tape = graph.tape();
  const RaySamples samples = sample_rays(camera, region, options.n_samples, options.jitter_seed);
  const ad::Var points = tape.constant(samples.points);
  const ad::Var features = graph.features(points);
  const ad::Var density = graph.density(features);
  const ad::Var color = graph.color(features);
  return composite(density, color, samples);
}

ImageBuffer render_volume(const TriplaneField& field, const CameraPose& camera, const VolumeOptions& options) {
  validate(camera);
  const Patch region = options.patch.value_or(Patch{0, 0, camera.width, camera.height});
  ImageBuffer image = ImageBuffer::background(region.width, region.height);
  const int chunks = (region.height + kRowsPerChunk - 1) / kRowsPerChunk;
  parallel_for(chunks, options.threads, [&](int chunk) {
    const int y0 = chunk * kRowsPerChunk;
    const Patch rows{region.x0, region.y0 + y0, region.width, std::min(kRowsPerChunk, region.height - y0)};
    VolumeOptions local = options;
    local.patch = rows;
    ad::Tape tape;
    FieldGraph graph(tape, field);
    const Composite c = render_volume(graph, camera, local);
    const Eigen::Index offset = static_cast<Eigen::Index>(y0) * region.width;
    image.rgb.middleRows(offset, rows.pixel_count()) = c.rgb.value();
    image.mask.segment(offset, rows.pixel_count()) = c.mask.value().col(0);
    image.depth.segment(offset, rows.pixel_count()) = c.depth.value().col(0);
  });
  return image;
}

}  // namespace smesh
