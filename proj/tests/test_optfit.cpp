#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "smesh/optfit.hpp"

using namespace smesh;
using doctest::Approx;

namespace {

ImageBuffer random_view(int w, int h, std::uint64_t seed) {
  ImageBuffer img = ImageBuffer::background(w, h);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  for (Eigen::Index p = 0; p < img.pixel_count(); ++p) {
    img.rgb.row(p) << u(rng), u(rng), u(rng);
    img.mask[p] = u(rng) < 0.5 ? 1.0 : 0.0;
    img.depth[p] = img.mask[p] * (1 + u(rng));
    img.normal.row(p) = img.mask[p] * Vec3(u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5).normalized().transpose();
  }
  return img;
}

bool same_parameters(const TriplaneField& a, const TriplaneField& b) {
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (*pa[i] != *pb[i]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("stage-1 loss examples") {
  const ImageBuffer gt = random_view(8, 6, 1);
  CHECK(loss_stage1({gt, gt}, {gt, gt}).total == 0.0);

  ImageBuffer black = gt, grey = gt;
  black.rgb.setZero();
  grey.rgb.setConstant(0.5);
  const LossTerms t = loss_stage1({black}, {grey});
  CHECK(t.rgb == Approx(0.25).epsilon(1e-15));
  CHECK(t.mask == 0.0);
  CHECK(t.lpips == 0.0);

  ImageBuffer off = gt;
  off.mask = (1.0 - gt.mask.array()).matrix();
  LossWeights w;
  const double once = loss_stage1({off}, {gt}, w).total;
  w.mask *= 2;
  const LossTerms twice = loss_stage1({off}, {gt}, w);
  CHECK(twice.total == Approx(2 * once).epsilon(1e-15));
  CHECK(twice.mask == 1.0);
  CHECK_THROWS_AS(loss_stage1({gt}, {random_view(8, 7, 1)}), std::invalid_argument);
}

TEST_CASE("perceptual plugin enters with its weight") {
  const ImageBuffer a = random_view(4, 4, 2), b = random_view(4, 4, 3);
  const PerceptualLoss constant = [](const ad::Var& pred, const Eigen::MatrixX3d&, int, int) {
    return pred.tape().constant(ad::Tensor::Constant(1, 1, 0.125));
  };
  const LossTerms with = loss_stage1({a}, {b}, {}, constant);
  const LossTerms without = loss_stage1({a}, {b});
  CHECK(with.lpips == 0.125);
  CHECK(with.total == Approx(without.total + 2.0 * 0.125).epsilon(1e-15));
}

TEST_CASE("stage-2 loss examples") {
  const ExtractionGrid grid = grid_from_sdf(6, [](const Vec3& x) { return x.norm() - 0.5; });
  const Extraction ex = extract(grid);
  const ImageBuffer gt = random_view(9, 7, 4);
  CHECK(loss_stage2({gt}, {gt}, {}, grid, ex).total <= 1e-15);

  ImageBuffer empty_gt = gt;
  empty_gt.mask.setZero();
  const LossTerms masked = loss_stage2({random_view(9, 7, 5)}, {empty_gt}, {}, grid, ex);
  CHECK(masked.depth == 0.0);
  CHECK(masked.normal == 0.0);

  ImageBuffer flipped = gt;
  flipped.normal = -gt.normal;
  const LossTerms n = loss_stage2({flipped, flipped}, {gt, gt}, {}, grid, ex);
  CHECK(n.normal == Approx(4.0).epsilon(1e-14));
  CHECK(n.total == Approx(0.2 * 4.0).epsilon(1e-14));

  ImageBuffer no_depth = gt;
  no_depth.depth.resize(0);
  CHECK_THROWS_AS(loss_stage2({gt}, {no_depth}, {}, grid, ex), std::invalid_argument);
}

TEST_CASE("losses are invariant to view order and non-negative") {
  const ExtractionGrid grid = grid_from_sdf(6, [](const Vec3& x) { return x.norm() - 0.5; });
  const Extraction ex = extract(grid);
  std::vector<ImageBuffer> pred, gt;
  for (std::uint64_t s = 0; s < 4; ++s) {
    pred.push_back(random_view(6, 6, 10 + s));
    gt.push_back(random_view(6, 6, 20 + s));
  }
  const double forward = loss_stage2(pred, gt, {}, grid, ex).total;
  std::reverse(pred.begin(), pred.end());
  std::reverse(gt.begin(), gt.end());
  CHECK(loss_stage2(pred, gt, {}, grid, ex).total == Approx(forward).epsilon(1e-15));
  CHECK(forward > 0.0);
  CHECK(loss_stage1(pred, gt).total > 0.0);
}

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(0, 2000, 4e-4, 4e-5) == Approx(4e-4).epsilon(1e-15));
  CHECK(cosine_lr(2000, 2000, 4e-4, 4e-5) == Approx(4e-5).epsilon(1e-15));
  CHECK(cosine_lr(1000, 2000, 4e-4, 4e-5) == Approx(2.2e-4).epsilon(1e-14));
  CHECK(cosine_lr(1000, 1000, 4e-5, 0.0) == Approx(0.0).scale(1e-20));
  double last = 1;
  for (int s = 0; s <= 100; ++s) {
    const double lr = cosine_lr(s, 100, 1.0, 0.1);
    CHECK(lr <= last);
    last = lr;
  }
  CHECK_THROWS_AS(cosine_lr(101, 100, 1.0, 0.0), std::out_of_range);
}

TEST_CASE("adam first step moves by the learning rate") {
  Eigen::MatrixXd p(1, 3);
  p << 1.0, -2.0, 0.5;
  const Eigen::MatrixXd start = p;
  std::vector<Eigen::MatrixXd*> params{&p};
  ad::ParamGrad g(1);
  ad::Tensor grad(1, 3);
  grad << 3.0, -0.01, 0.0;
  g.accumulate(0, grad);
  AdamState state;
  adam_step(params, g, state, 0.1);
  CHECK(p(0, 0) - start(0, 0) == Approx(-0.1).epsilon(1e-6));
  CHECK(p(0, 1) - start(0, 1) == Approx(0.1).epsilon(1e-5));
  CHECK(p(0, 2) == start(0, 2));
  CHECK(state.step == 1);
}

TEST_CASE("adam with zero gradient leaves parameters and decays moments") {
  Eigen::MatrixXd p = Eigen::MatrixXd::Constant(2, 2, 1.5);
  std::vector<Eigen::MatrixXd*> params{&p};
  AdamState state;
  ad::ParamGrad g(1);
  g.accumulate(0, ad::Tensor::Ones(2, 2));
  adam_step(params, g, state, 0.01);
  const Eigen::MatrixXd after_one = p;
  const Eigen::MatrixXd m = state.m[0], v = state.v[0];
  ad::ParamGrad zero(1);
  adam_step(params, zero, state, 0.0);
  CHECK(p == after_one);
  CHECK(state.m[0].isApprox(0.9 * m));
  CHECK(state.v[0].isApprox(0.999 * v));
}

TEST_CASE("adam descends a quadratic bowl") {
  Eigen::MatrixXd p = Eigen::MatrixXd::Ones(1, 1);
  std::vector<Eigen::MatrixXd*> params{&p};
  AdamState state;
  for (int s = 0; s < 500; ++s) {
    ad::ParamGrad g(1);
    g.accumulate(0, p);
    adam_step(params, g, state, 0.1);
  }
  CHECK(std::abs(p(0, 0)) < 1e-3);
}

TEST_CASE("adam rejects non-finite gradients without side effects") {
  Eigen::MatrixXd a = Eigen::MatrixXd::Ones(1, 2), b = Eigen::MatrixXd::Ones(1, 1);
  std::vector<Eigen::MatrixXd*> params{&a, &b};
  AdamState state;
  ad::ParamGrad g(2);
  g.accumulate(0, ad::Tensor::Ones(1, 2));
  g.accumulate(1, ad::Tensor::Constant(1, 1, std::numeric_limits<double>::infinity()));
  CHECK_THROWS_AS(adam_step(params, g, state, 0.1), std::runtime_error);
  CHECK(a == Eigen::MatrixXd::Ones(1, 2));
  CHECK(state.step == 0);
}

TEST_CASE("preset hyperparameters") {
  const FitConfig base = FitConfig::base();
  CHECK(base.field.resolution == 64);
  CHECK(base.field.channels == 40);
  CHECK(base.n_samples == 96);
  CHECK(base.grid_resolution == 128);
  CHECK(base.input_size == 320);
  CHECK(base.render_size_stage1 == 192);
  CHECK(base.render_size_stage2 == 512);
  CHECK(base.n_input_views == 6);
  CHECK(base.n_supervision_views == 4);
  CHECK(base.stage1_steps == 2000);
  CHECK(base.stage2_steps == 1000);
  CHECK(base.tau == 10.0);
  CHECK(base.weights.lpips == 2.0);
  CHECK(base.weights.mask == 1.0);
  CHECK(base.weights.depth == 0.5);
  CHECK(base.weights.normal == 0.2);
  CHECK(base.weights.reg == 0.01);
  const FitConfig large = FitConfig::large();
  CHECK(large.field.channels == 80);
  CHECK(large.n_samples == 128);
  CHECK(large.field.resolution == 64);
  for (const FitConfig& c : {base, large}) {
    CHECK(cosine_lr(0, c.stage1_steps, c.stage1_lr_start, c.stage1_lr_end) == 4.0e-4);
    CHECK(cosine_lr(c.stage1_steps, c.stage1_steps, c.stage1_lr_start, c.stage1_lr_end) == Approx(4.0e-5));
    CHECK(cosine_lr(0, c.stage2_steps, c.stage2_lr_start, c.stage2_lr_end) == 4.0e-5);
    CHECK(cosine_lr(c.stage2_steps, c.stage2_steps, c.stage2_lr_start, c.stage2_lr_end) == 0.0);
  }
  CHECK_NOTHROW(validate(FitConfig::desk()));
}

TEST_CASE("config json round trip and validation") {
  FitConfig c = FitConfig::desk();
  c.seed = 42;
  c.weights.depth = 0.75;
  nlohmann::json j = c;
  FitConfig back = FitConfig::base();
  from_json(j, back);
  CHECK(nlohmann::json(back) == j);

  FitConfig partial = FitConfig::base();
  from_json(nlohmann::json{{"n_samples", 7}}, partial);
  CHECK(partial.n_samples == 7);
  CHECK(partial.grid_resolution == 128);
  CHECK_THROWS_AS(from_json(nlohmann::json{{"bogus", 1}}, partial), std::invalid_argument);

  FitConfig bad = FitConfig::base();
  bad.stage1_lr_end = 1.0;
  CHECK_THROWS_AS(validate(bad), std::invalid_argument);
  bad = FitConfig::base();
  bad.grid_resolution = 1;
  CHECK_THROWS_AS(validate(bad), std::invalid_argument);
}

TEST_CASE("zero steps leave the field unchanged") {
  testing::Stage2Problem p = testing::tiny_stage2_problem(2);
  p.config.stage1_steps = 0;
  CHECK(same_parameters(fit_stage1(p.field, p.views, p.config), p.field));
  p.config.stage2_steps = 0;
  const Stage2Result r = fit_stage2(p.field, p.views, p.config);
  const Mesh handoff = extract_field_mesh(init_sdf_from_density(p.field, p.config.tau), p.config.grid_resolution);
  CHECK(r.mesh.vertices == handoff.vertices);
  CHECK(r.mesh.triangles == handoff.triangles);
}

TEST_CASE("fitting is deterministic under a fixed seed") {
  testing::Stage2Problem p = testing::tiny_stage2_problem(3);
  p.config.stage1_steps = 3;
  p.config.n_samples = 8;
  std::vector<TraceRow> trace;
  FitHooks hooks;
  hooks.trace = [&](const TraceRow& r) { trace.push_back(r); };
  const TriplaneField a = fit_stage1(p.field, p.views, p.config, hooks);
  const TriplaneField b = fit_stage1(p.field, p.views, p.config);
  CHECK(same_parameters(a, b));
  CHECK_FALSE(same_parameters(a, p.field));
  REQUIRE(trace.size() == 3);
  CHECK(trace[0].lr == Approx(p.config.stage1_lr_start).epsilon(1e-15));
  CHECK(trace[2].stage == 1);
}

TEST_CASE("stage-1 gradient matches central differences") {
  testing::Stage2Problem p = testing::tiny_stage2_problem(4);
  p.config.n_samples = 8;
  const std::vector<int> chosen{1, 4};
  const std::vector<Patch> crops{Patch{2, 3, 10, 9}, Patch{0, 0, 16, 16}};
  ad::ParamGrad grad(p.field.parameters().size());
  evaluate_stage1(p.field, p.views, chosen, crops, p.config, 7, &grad);
  const auto params = p.field.parameters();
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto k = std::uniform_int_distribution<std::size_t>(0, params.size() - 1)(rng);
    const auto i = std::uniform_int_distribution<Eigen::Index>(0, params[k]->size() - 1)(rng);
    double& x = params[k]->data()[i];
    const double saved = x, h = 1e-5;
    x = saved + h;
    const double up = evaluate_stage1(p.field, p.views, chosen, crops, p.config, 7, nullptr).total;
    x = saved - h;
    const double down = evaluate_stage1(p.field, p.views, chosen, crops, p.config, 7, nullptr).total;
    x = saved;
    const double fd = (up - down) / (2 * h);
    const double an = grad.touched(k) ? grad[k].data()[i] : 0.0;
    CHECK(std::abs(fd - an) <= 1e-3 * std::max({std::abs(fd), std::abs(an), 1e-6}));
  }
}

TEST_CASE("stage-2 gradient matches central differences") {
  testing::Stage2Problem p = testing::tiny_stage2_problem(1);
  const testing::GradientCheck check = testing::stage2_gradient_check(p, 20, 9);
  CHECK(check.checked == 20);
  CHECK(check.worst <= 1e-3);
}

TEST_CASE("vanished iso-surface aborts stage 2") {
  testing::Stage2Problem p = testing::tiny_stage2_problem(5);
  p.config.stage2_steps = 1;
  p.config.tau = 1e6;  // no density reaches it
  CHECK_THROWS_WITH_AS(fit_stage2(p.field, p.views, p.config), doctest::Contains("iso-surface vanished"),
                       std::runtime_error);
}
