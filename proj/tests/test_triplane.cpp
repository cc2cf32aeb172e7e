#include <random>
#include <sstream>

#include "doctest.h"
#include "smesh/triplane.hpp"

using namespace smesh;
using doctest::Approx;

namespace {

FieldConfig small_config(std::uint64_t seed = 1) {
  FieldConfig c;
  c.resolution = 8;
  c.channels = 4;
  c.hidden_width = 6;
  c.hidden_layers = 2;
  c.aux_hidden_width = 5;
  c.seed = seed;
  return c;
}

// Random weights everywhere, so no head sits at its special initial value.
TriplaneField random_field(std::uint64_t seed) {
  TriplaneField f = make_field(small_config(seed));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  for (Eigen::MatrixXd* p : f.parameters()) {
    for (Eigen::Index i = 0; i < p->size(); ++i) p->data()[i] = u(rng);
  }
  return f;
}

void zero_heads(TriplaneField& f) {
  for (auto& head : f.heads) {
    for (auto& layer : head.layers) {
      layer.weight.setZero();
      layer.bias.setZero();
    }
  }
}

Vec3 random_point(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  return {u(rng), u(rng), u(rng)};
}

}  // namespace

TEST_CASE("make_field shapes") {
  const TriplaneField f = make_field(small_config());
  CHECK(f.resolution == 8);
  CHECK(f.channels == 4);
  for (const auto& p : f.planes) {
    CHECK(p.rows() == 64);
    CHECK(p.cols() == 4);
  }
  CHECK(f.head(HeadKind::density).widths() == std::vector<int>{4, 6, 6, 1});
  CHECK(f.head(HeadKind::color).out_dim() == 3);
  CHECK(f.head(HeadKind::deformation).widths() == std::vector<int>{4, 5, 5, 3});
  CHECK(f.head(HeadKind::weights).out_dim() == 1 + kCellEdges);
  CHECK(make_field(FieldConfig::large()).channels == 80);
  CHECK(make_field(FieldConfig::base()).channels == 40);
}

TEST_CASE("initial deformation is zero and initial weights are one") {
  const TriplaneField f = make_field(small_config());
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    const Vec3 x = random_point(rng);
    CHECK(query_deformation(f, x).isZero(0.0));
    CHECK((query_weights(f, x).array() - 1.0).abs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("constant planes give three times the constant") {
  TriplaneField f = make_field(small_config());
  for (auto& p : f.planes) p.setConstant(0.25);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 10; ++i) {
    const Eigen::VectorXd feat = sample_triplane(f, random_point(rng));
    CHECK((feat.array() - 0.75).abs().maxCoeff() <= 1e-15);
  }
}

TEST_CASE("bilinear sampling at nodes and midpoints") {
  TriplaneField f = random_field(4);
  const int r = f.resolution;
  const double h = 2.0 / (r - 1);
  // node (u, v) of plane p lives in row v * r + u
  const int i = 2, j = 5, k = 3;
  const Vec3 node(-1 + i * h, -1 + j * h, -1 + k * h);
  const Eigen::VectorXd expected = (f.planes[0].row(j * r + i) + f.planes[1].row(k * r + i) +
                                    f.planes[2].row(k * r + j)).transpose();
  CHECK((sample_triplane(f, node) - expected).cwiseAbs().maxCoeff() <= 1e-14);

  const Vec3 mid = node + Vec3(0.5 * h, 0, 0);
  const Eigen::VectorXd expected_mid =
      (0.5 * (f.planes[0].row(j * r + i) + f.planes[0].row(j * r + i + 1)) +
       0.5 * (f.planes[1].row(k * r + i) + f.planes[1].row(k * r + i + 1)) + f.planes[2].row(k * r + j))
          .transpose();
  CHECK((sample_triplane(f, mid) - expected_mid).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("points outside the box are clamped") {
  const TriplaneField f = random_field(5);
  CHECK((sample_triplane(f, Vec3(3, -0.2, 0.4)) - sample_triplane(f, Vec3(1, -0.2, 0.4))).isZero(0.0));
}

TEST_CASE("zero heads give the closed-form activations") {
  TriplaneField f = random_field(6);
  zero_heads(f);
  const Vec3 x(0.1, -0.3, 0.7);
  CHECK(query_color(f, x).isApprox(Vec3::Constant(0.5), 1e-15));
  CHECK(query_deformation(f, x).isZero(0.0));
  CHECK(query_density(f, x) == Approx(0.6931471805599453).epsilon(1e-15));
  CHECK(query_sdf(f, x) == 0.0);
  CHECK((query_weights(f, x).array() - (std::log(2.0) + kWeightEpsilon)).abs().maxCoeff() <= 1e-15);
}

TEST_CASE("head activations stay in range") {
  const TriplaneField f = random_field(7);
  std::mt19937_64 rng(8);
  for (int i = 0; i < 200; ++i) {
    const Vec3 x = random_point(rng);
    CHECK(query_density(f, x) >= 0.0);
    const Vec3 c = query_color(f, x);
    CHECK(c.minCoeff() >= 0.0);
    CHECK(c.maxCoeff() <= 1.0);
    CHECK(query_deformation(f, x).cwiseAbs().maxCoeff() < 0.5);
    CHECK(query_weights(f, x).minCoeff() > 0.0);
  }
}

TEST_CASE("sdf init from the documented last layer") {
  TriplaneField f = make_field(small_config());
  for (HeadKind k : {HeadKind::density, HeadKind::sdf}) {
    MlpHead& h = f.head(k);
    h.layers.resize(2);
    h.layers[0].weight = Eigen::MatrixXd::Constant(4, 2, 0.3);
    h.layers[0].bias = Eigen::MatrixXd::Zero(1, 2);
    h.layers[1].weight = Eigen::MatrixXd::Zero(2, 1);
    h.layers[1].bias = Eigen::MatrixXd::Zero(1, 1);
  }
  f.head(HeadKind::density).layers[1].weight << 0.5, -1.0;
  f.head(HeadKind::density).layers[1].bias << 0.2;
  const TriplaneField g = init_sdf_from_density(f, 10.0);
  const Linear& last = g.head(HeadKind::sdf).layers[1];
  CHECK(last.weight(0, 0) == -0.5);
  CHECK(last.weight(1, 0) == 1.0);
  CHECK(last.bias(0, 0) == 9.8);
  CHECK(g.head(HeadKind::sdf).layers[0].weight == f.head(HeadKind::density).layers[0].weight);
}

TEST_CASE("sdf init with zero density head and tau zero") {
  TriplaneField f = random_field(9);
  auto& last = f.head(HeadKind::density).layers.back();
  last.weight.setZero();
  last.bias.setZero();
  const TriplaneField g = init_sdf_from_density(f, 0.0);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 10; ++i) CHECK(query_sdf(g, random_point(rng)) == 0.0);
}

TEST_CASE("sdf init identity at random points") {
  const TriplaneField f = random_field(10);
  const TriplaneField g = init_sdf_from_density(f, kDefaultTau);
  std::mt19937_64 rng(11);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const Vec3 x = random_point(rng);
    worst = std::max(worst, std::abs(query_sdf(g, x) + (query_density_raw(f, x) - kDefaultTau)));
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("sdf init is zero where raw density hits tau") {
  const TriplaneField f = random_field(12);
  const Vec3 x(0.2, 0.1, -0.4);
  const double tau = query_density_raw(f, x);
  CHECK(std::abs(query_sdf(init_sdf_from_density(f, tau), x)) <= 1e-12);
}

TEST_CASE("sdf init rejects mismatched heads") {
  TriplaneField f = random_field(13);
  f.head(HeadKind::sdf).layers.pop_back();
  f.head(HeadKind::sdf).layers.back().weight.conservativeResize(Eigen::NoChange, 1);
  f.head(HeadKind::sdf).layers.back().bias.conservativeResize(Eigen::NoChange, 1);
  CHECK_THROWS_AS(init_sdf_from_density(f), std::invalid_argument);
}

TEST_CASE("triplane point gradient matches directional differences") {
  const TriplaneField f = random_field(14);
  std::mt19937_64 rng(15);
  const double cell = 2.0 / (f.resolution - 1);
  int checked = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Vec3 x = 0.9 * random_point(rng);
    const Vec3 dir = random_point(rng).normalized();
    constexpr double h = 1e-6;
    // skip points whose FD stencil crosses a cell boundary
    bool interior = true;
    for (int a = 0; a < 3; ++a) {
      const double g = (x[a] + 1) / cell;
      const double frac = g - std::floor(g);
      if (frac < 1e-4 || frac > 1 - 1e-4) interior = false;
    }
    if (!interior) continue;
    ad::Tape tape;
    FieldGraph graph(tape, f);
    const ad::Var p = tape.variable(Eigen::MatrixXd(x.transpose()));
    ad::ParamGrad pg(f.parameters().size());
    tape.backward(ad::sum(graph.features(p)), pg);
    const double analytic = tape.grad(p).row(0).dot(dir.transpose());
    const double fd = (sample_triplane(f, Vec3(x + h * dir)).sum() - sample_triplane(f, Vec3(x - h * dir)).sum()) / (2 * h);
    CHECK(std::abs(analytic - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));
    ++checked;
  }
  CHECK(checked > 20);
}

TEST_CASE("graph queries agree with batch queries") {
  const TriplaneField f = random_field(16);
  std::mt19937_64 rng(17);
  Eigen::MatrixX3d pts(25, 3);
  for (int i = 0; i < 25; ++i) pts.row(i) = random_point(rng).transpose();
  ad::Tape tape;
  FieldGraph graph(tape, f);
  const ad::Var feat = graph.features(tape.constant(pts));
  CHECK(graph.density(feat).value() == query_head(f, HeadKind::density, pts));
  CHECK(graph.weights(feat).value() == query_head(f, HeadKind::weights, pts));
  CHECK(graph.raw(HeadKind::density, feat).value() == query_head(f, HeadKind::density, pts, true));
}

TEST_CASE("lattice evaluation matches pointwise evaluation") {
  const TriplaneField f = random_field(18);
  const int n = 7;
  const double h = 2.0 / (n - 1);
  ad::Tape tape;
  FieldGraph graph(tape, f);
  const auto planes = graph.lattice_planes(n);
  for (HeadKind kind : {HeadKind::sdf, HeadKind::deformation, HeadKind::weights}) {
    const Eigen::MatrixXd lat = graph.lattice_raw(kind, planes, n, 2, 5).value();
    REQUIRE(lat.rows() == 3 * n * n);
    Eigen::MatrixX3d pts(lat.rows(), 3);
    for (int k = 2; k < 5; ++k) {
      for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) pts.row(((k - 2) * n + j) * n + i) << -1 + i * h, -1 + j * h, -1 + k * h;
      }
    }
    CHECK((lat - query_head(f, kind, pts, true)).cwiseAbs().maxCoeff() <= 1e-12);
  }
  CHECK_THROWS_AS(graph.lattice_raw(HeadKind::sdf, planes, n, 3, 3), std::invalid_argument);
}

TEST_CASE("lattice gradient matches pointwise gradient") {
  const TriplaneField f = random_field(19);
  const int n = 5;
  const double h = 2.0 / (n - 1);
  Eigen::MatrixX3d pts(n * n * n, 3);
  for (int k = 0; k < n; ++k) {
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) pts.row((k * n + j) * n + i) << -1 + i * h, -1 + j * h, -1 + k * h;
    }
  }
  const std::size_t np = f.parameters().size();
  ad::ParamGrad a(np), b(np);
  {
    ad::Tape tape;
    FieldGraph graph(tape, f);
    tape.backward(ad::sum(ad::square(graph.lattice_raw(HeadKind::deformation, graph.lattice_planes(n), n, 0, n))), a);
  }
  {
    ad::Tape tape;
    FieldGraph graph(tape, f);
    tape.backward(ad::sum(ad::square(graph.raw(HeadKind::deformation, graph.features(tape.constant(pts))))), b);
  }
  for (std::size_t p = 0; p < np; ++p) {
    CAPTURE(p);
    REQUIRE(a.touched(p) == b.touched(p));
    if (a.touched(p)) CHECK((a[p] - b[p]).cwiseAbs().maxCoeff() <= 1e-10 * std::max(1.0, b[p].cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  const TriplaneField f = random_field(20);
  const std::string bytes = serialize_field(f);
  CHECK(bytes.substr(0, 4) == "TPF1");
  const TriplaneField g = deserialize_field(bytes);
  CHECK(serialize_field(g) == bytes);
  CHECK(g.resolution == f.resolution);
  for (std::size_t i = 0; i < f.parameters().size(); ++i) CHECK(*g.parameters()[i] == *f.parameters()[i]);

  const auto path = std::filesystem::temp_directory_path() / "smesh_test_field.tpf";
  save_checkpoint(f, path);
  CHECK(serialize_field(load_checkpoint(path)) == bytes);
  std::filesystem::remove(path);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const std::string bytes = serialize_field(random_field(21));
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS(deserialize_field(bad));
  CHECK_THROWS(deserialize_field(bytes.substr(0, bytes.size() - 3)));
  CHECK_THROWS(deserialize_field(bytes + "extra"));
  CHECK_THROWS(load_checkpoint("/nonexistent/field.tpf"));
}
