#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "smesh/campose.hpp"
#include "smesh/volren.hpp"

using namespace smesh;
using doctest::Approx;

namespace {

FieldConfig tiny_config(std::uint64_t seed) {
  FieldConfig c;
  c.resolution = 6;
  c.channels = 3;
  c.hidden_width = 5;
  c.hidden_layers = 1;
  c.aux_hidden_width = 3;
  c.seed = seed;
  return c;
}

TriplaneField random_field(std::uint64_t seed) {
  TriplaneField f = make_field(tiny_config(seed));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  for (Eigen::MatrixXd* p : f.parameters()) {
    for (Eigen::Index i = 0; i < p->size(); ++i) p->data()[i] = u(rng);
  }
  return f;
}

RaySamples single_ray(const std::vector<double>& delta) {
  RaySamples s;
  const auto n = static_cast<Eigen::Index>(delta.size());
  s.offsets = {0, n};
  s.points = Eigen::MatrixX3d::Zero(n, 3);
  s.delta = Eigen::Map<const Eigen::VectorXd>(delta.data(), n);
  s.z_depth = Eigen::VectorXd::LinSpaced(n, 1.0, static_cast<double>(n));
  return s;
}

}  // namespace

TEST_CASE("zero density renders white with empty mask") {
  TriplaneField f = random_field(1);
  auto& last = f.head(HeadKind::density).layers.back();
  last.weight.setZero();
  last.bias.setConstant(-800.0);
  const ImageBuffer img = render_volume(f, camera_from_spherical(30, 10, 2.5, 50, 8, 8), {.n_samples = 16});
  CHECK((img.rgb.array() == 1.0).all());
  CHECK((img.mask.array() == 0.0).all());
}

TEST_CASE("two-sample compositing formula") {
  ad::Tape tape;
  const double d1 = 0.7, d2 = 1.9, dt = 0.5;
  const double a1 = 1 - std::exp(-d1 * dt), a2 = 1 - std::exp(-d2 * dt);
  Eigen::MatrixXd density(2, 1), color(2, 3);
  density << d1, d2;
  color << 0.2, 0.4, 0.9, 0.8, 0.1, 0.3;
  const RaySamples s = single_ray({dt, dt});
  const Composite c = composite(tape.constant(density), tape.constant(color), s);
  for (int k = 0; k < 3; ++k) {
    const double expected = a1 * color(0, k) + (1 - a1) * a2 * color(1, k) + (1 - a1) * (1 - a2);
    CHECK(c.rgb.value()(0, k) == Approx(expected).epsilon(1e-14));
  }
  const double mask = a1 + (1 - a1) * a2;
  CHECK(c.mask.value()(0, 0) == Approx(mask).epsilon(1e-14));
  CHECK(c.depth.value()(0, 0) == Approx((a1 * 1.0 + (1 - a1) * a2 * 2.0) / mask).epsilon(1e-14));
}

TEST_CASE("samples behind an opaque sample do not matter") {
  ad::Tape tape;
  Eigen::MatrixXd d2(2, 1), d4(4, 1), c2(2, 3), c4(4, 3);
  d2 << 0.3, 1e4;
  d4 << 0.3, 1e4, 5.0, 2.0;
  c2 << 0.1, 0.2, 0.3, 0.9, 0.8, 0.7;
  c4 << c2, Eigen::MatrixXd::Constant(2, 3, 0.05);
  const Composite a = composite(tape.constant(d2), tape.constant(c2), single_ray({0.1, 0.1}));
  const Composite b = composite(tape.constant(d4), tape.constant(c4), single_ray({0.1, 0.1, 0.1, 0.1}));
  CHECK((a.rgb.value() - b.rgb.value()).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("opaque red sphere") {
  // radius 1 sphere seen from 2.5: surface at z-depth 1.5 on the axis
  const TriplaneField f = testing::sphere_field(1.0, 2e4, Vec3(1, 0, 0));
  const CameraPose cam = camera_from_spherical(40, 15, 2.5, 50, 33, 33);
  const ImageBuffer img = render_volume(f, cam, {.n_samples = 512, .patch = Patch{16, 16, 1, 1}});
  CHECK((img.rgb.row(0) - Eigen::RowVector3d(1, 0, 0)).cwiseAbs().maxCoeff() <= 0.02);
  CHECK(std::abs(img.depth[0] - 1.5) <= 0.02);
  CHECK(img.mask[0] == Approx(1.0).epsilon(1e-6));
}

TEST_CASE("weights sum to at most one") {
  const TriplaneField f = random_field(2);
  const ImageBuffer img = render_volume(f, camera_from_spherical(0, 30, 2.0, 60, 12, 12), {.n_samples = 24});
  CHECK(img.mask.minCoeff() >= 0.0);
  CHECK(img.mask.maxCoeff() <= 1.0);
  CHECK(img.rgb.minCoeff() >= 0.0);
  CHECK(img.rgb.maxCoeff() <= 1.0);
}

TEST_CASE("full render equals stitched patches bit for bit") {
  const TriplaneField f = random_field(3);
  const CameraPose cam = camera_from_spherical(75, -5, 2.5, 50, 10, 9);
  const VolumeOptions base{.n_samples = 20, .jitter_seed = 99};
  const ImageBuffer full = render_volume(f, cam, base);
  ImageBuffer stitched = ImageBuffer::background(10, 9);
  for (const Patch p : {Patch{0, 0, 4, 9}, Patch{4, 0, 6, 5}, Patch{4, 5, 6, 4}}) {
    VolumeOptions o = base;
    o.patch = p;
    stitched.paste(render_volume(f, cam, o), p);
  }
  CHECK(stitched.rgb == full.rgb);
  CHECK(stitched.mask == full.mask);
  CHECK(stitched.depth == full.depth);
}

TEST_CASE("thread count does not change the image") {
  const TriplaneField f = random_field(4);
  const CameraPose cam = camera_from_spherical(10, 20, 2.5, 50, 16, 16);
  const ImageBuffer one = render_volume(f, cam, {.n_samples = 16, .jitter_seed = 5, .threads = 1});
  const ImageBuffer three = render_volume(f, cam, {.n_samples = 16, .jitter_seed = 5, .threads = 3});
  CHECK(one.rgb == three.rgb);
  CHECK(one.depth == three.depth);
}

TEST_CASE("jitter is seed controlled") {
  const TriplaneField f = random_field(5);
  const CameraPose cam = camera_from_spherical(10, 20, 2.5, 50, 6, 6);
  const auto render = [&](std::optional<std::uint64_t> seed) {
    return render_volume(f, cam, {.n_samples = 8, .jitter_seed = seed}).rgb;
  };
  CHECK(render(1) == render(1));
  CHECK_FALSE(render(1) == render(2));
  CHECK_FALSE(render(std::nullopt) == render(1));
}

TEST_CASE("bad arguments") {
  const TriplaneField f = random_field(6);
  const CameraPose cam = camera_from_spherical(0, 0, 2.5, 50, 8, 8);
  CHECK_THROWS_AS(render_volume(f, cam, {.n_samples = 0}), std::invalid_argument);
  CHECK_THROWS_AS(render_volume(f, cam, {.n_samples = 4, .patch = Patch{4, 4, 5, 1}}), std::out_of_range);
}

TEST_CASE("render gradient matches central differences") {
  // mean pixel value of an 8x8 render against plane and head parameters
  TriplaneField f = random_field(7);
  const CameraPose cam = camera_from_spherical(20, 25, 2.5, 50, 8, 8);
  const VolumeOptions opts{.n_samples = 12};
  const auto loss = [&](const TriplaneField& field) {
    const ImageBuffer img = render_volume(field, cam, opts);
    return img.rgb.mean() + img.mask.mean();
  };
  ad::Tape tape;
  FieldGraph graph(tape, f);
  const Composite c = render_volume(graph, cam, opts);
  ad::ParamGrad grad(f.parameters().size());
  tape.backward(ad::mean(c.rgb) + ad::mean(c.mask), grad);

  std::mt19937_64 rng(8);
  const auto params = f.parameters();
  int checked = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = std::uniform_int_distribution<std::size_t>(0, params.size() - 1)(rng);
    const auto i = std::uniform_int_distribution<Eigen::Index>(0, params[p]->size() - 1)(rng);
    const double analytic = grad.touched(p) ? grad[p].data()[i] : 0.0;
    constexpr double h = 1e-4;
    const double saved = params[p]->data()[i];
    params[p]->data()[i] = saved + h;
    const double up = loss(f);
    params[p]->data()[i] = saved - h;
    const double down = loss(f);
    params[p]->data()[i] = saved;
    const double fd = (up - down) / (2 * h);
    CAPTURE(p);
    CAPTURE(i);
    if (std::abs(fd) < 1e-8 && std::abs(analytic) < 1e-8) continue;
    CHECK(std::abs(fd - analytic) / std::max(std::abs(fd), std::abs(analytic)) <= 1e-3);
    ++checked;
  }
  CHECK(checked >= 10);
}

TEST_CASE("differentiable and gradient-free renders agree") {
  const TriplaneField f = random_field(9);
  const CameraPose cam = camera_from_spherical(200, -20, 2.5, 50, 7, 5);
  const VolumeOptions opts{.n_samples = 10, .jitter_seed = 3};
  ad::Tape tape;
  FieldGraph graph(tape, f);
  const Composite c = render_volume(graph, cam, opts);
  const ImageBuffer img = render_volume(f, cam, opts);
  CHECK((c.rgb.value() - Eigen::MatrixXd(img.rgb)).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK((c.mask.value().col(0) - img.mask).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("sample layout") {
  const CameraPose cam = camera_from_spherical(0, 0, 2.0, 50, 65, 65);
  const RaySamples s = sample_rays(cam, Patch{32, 32, 1, 1}, 4, std::nullopt);
  REQUIRE(s.ray_count() == 1);
  REQUIRE(s.points.rows() == 4);
  // box entry 1, exit 3 along the axis; midpoints of four strata
  for (int k = 0; k < 4; ++k) {
    CHECK(s.delta[k] == Approx(0.5));
    CHECK(s.z_depth[k] == Approx(1.25 + 0.5 * k));
  }
  const RaySamples miss = sample_rays(camera_from_spherical(0, 0, 10, 60, 64, 64), Patch{0, 0, 1, 1}, 4, std::nullopt);
  CHECK(miss.points.rows() == 0);
}
