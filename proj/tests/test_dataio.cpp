#include <filesystem>
#include <random>

#include "doctest.h"
#include "smesh/dataio.hpp"
#include "smesh/flexigrid.hpp"
#include "smesh/raster.hpp"

using namespace smesh;
using doctest::Approx;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("smesh_dataio_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

Mesh random_mesh(std::mt19937_64& rng, bool colors) {
  std::uniform_real_distribution<double> u(-3, 3), c(0, 1);
  std::uniform_int_distribution<int> nv(3, 40);
  Mesh m;
  const int n = nv(rng);
  m.vertices.resize(n, 3);
  for (Eigen::Index i = 0; i < m.vertices.size(); ++i) m.vertices.data()[i] = u(rng);
  if (colors) {
    m.colors.resize(n, 3);
    for (Eigen::Index i = 0; i < m.colors.size(); ++i) m.colors.data()[i] = c(rng);
  }
  const int nt = nv(rng);
  m.triangles.resize(nt, 3);
  std::uniform_int_distribution<int> vi(0, n - 1);
  for (Eigen::Index i = 0; i < m.triangles.size(); ++i) m.triangles.data()[i] = vi(rng);
  return m;
}

ManifestEntry clean_entry(const std::string& id) {
  ManifestEntry e;
  e.id = id;
  e.has_texture = true;
  e.caption = "a chair";
  e.tags = {"furniture", "wood"};
  e.n_components = 1;
  e.coverage = std::vector<double>{0.3, 0.5, 0.1};
  return e;
}

}  // namespace

TEST_CASE("empty scene renders background") {
  const ImageBuffer img = render_gt(SceneSpec{}, camera_from_spherical(0, 0, 2.5, 50, 8, 8));
  CHECK((img.rgb.array() == 1.0).all());
  CHECK((img.mask.array() == 0.0).all());
  CHECK((img.depth.array() == 0.0).all());
}

TEST_CASE("sphere oracle depth and normals") {
  const SceneSpec scene = parse_scene("sphere:0.6");
  const CameraPose cam = camera_from_spherical(25, 10, 2.5, 50, 33, 33);
  const ImageBuffer img = render_gt(scene, cam);
  CHECK(img.depth[img.index(16, 16)] == Approx(1.9).epsilon(1e-4 / 1.9));
  int hits = 0;
  for (int y = 0; y < 33; ++y) {
    for (int x = 0; x < 33; ++x) {
      const Eigen::Index p = img.index(x, y);
      if (img.mask[p] == 0.0) continue;
      const Ray r = pixel_ray(cam, x, y);
      const Vec3 hit = r.origin + r.direction * (img.depth[p] / r.direction.dot(cam.forward()));
      CHECK((img.normal.row(p).transpose() - hit.normalized()).norm() <= 1e-4);
      CHECK((img.rgb.row(p).array() == 0.8).all());
      ++hits;
    }
  }
  CHECK(hits > 100);
}

TEST_CASE("oracle and rasterized scene mesh agree on depth") {
  const SceneSpec scene = sphere_box_scene();
  const int n = 128;
  const Mesh mesh = scene_mesh(scene, n);
  const double cell = 2.0 / (n - 1);
  for (const double az : {0.0, 130.0, 250.0}) {
    const CameraPose cam = camera_from_spherical(az, 20, 2.5, 50, 48, 48);
    const ImageBuffer gt = render_gt(scene, cam), rast = rasterize(mesh, cam);
    for (Eigen::Index p = 0; p < gt.pixel_count(); ++p) {
      if (gt.mask[p] == 0.0 || rast.mask[p] == 0.0) continue;
      CHECK(std::abs(gt.depth[p] - rast.depth[p]) <= 2 * cell);
    }
    CHECK((gt.mask - rast.mask).cwiseAbs().sum() <= 0.02 * gt.mask.size());
  }
  // colours follow the closest primitive
  CHECK(mesh.has_colors());
  const Vec3 red(1, 0, 0), blue(0, 0, 1);
  for (Eigen::Index v = 0; v < mesh.vertex_count(); v += 97) {
    const Vec3 expected = scene.albedo(mesh.vertex(v));
    CHECK((mesh.colors.row(v).transpose() - expected).norm() <= 1e-12);
    CHECK((expected == red || expected == blue));
  }
}

TEST_CASE("scene strings") {
  const SceneSpec s = parse_scene("sphere:0.5#ff0000+box:0.25@0.5,0,0#0000ff");
  REQUIRE(s.primitives.size() == 2);
  CHECK(s.primitives[1].kind == PrimitiveKind::box);
  CHECK(s.primitives[1].params == Vec3(0.25, 0.25, 0.25));
  CHECK(s.primitives[1].center == Vec3(0.5, 0, 0));
  CHECK(s.primitives[1].albedo == Vec3(0, 0, 1));
  const SceneSpec preset = parse_scene("sphere_box");
  CHECK(format_scene(preset) == format_scene(s));
  CHECK(format_scene(parse_scene(format_scene(s))) == format_scene(s));
  const SceneSpec torus = parse_scene("torus:0.5,0.15");
  CHECK(torus.sdf(Vec3(0.5, 0, 0)) == Approx(-0.15));
  CHECK_THROWS_AS(parse_scene("sphere:1.5"), std::invalid_argument);
  CHECK_THROWS_AS(parse_scene("cone:0.3"), std::invalid_argument);
  CHECK_THROWS_AS(parse_scene("sphere:0.3#zz0000"), std::invalid_argument);
  nlohmann::json j = s;
  SceneSpec back;
  from_json(j, back);
  CHECK(format_scene(back) == format_scene(s));
}

TEST_CASE("primitive sdfs are exact") {
  Primitive box;
  box.kind = PrimitiveKind::box;
  box.params = Vec3(0.2, 0.3, 0.4);
  CHECK(box.sdf(Vec3(0.5, 0, 0)) == Approx(0.3));
  CHECK(box.sdf(Vec3(0.5, 0.7, 0)) == Approx(std::hypot(0.3, 0.4)));
  CHECK(box.sdf(Vec3(0, 0, 0)) == Approx(-0.2));
  Primitive sphere;
  sphere.params = Vec3(0.5, 0, 0);
  sphere.center = Vec3(0.1, 0, 0);
  CHECK(sphere.sdf(Vec3(0.1, 0, 0.9)) == Approx(0.4));
  CHECK(sphere.normal(Vec3(0.1, 0, 0.9)).isApprox(Vec3(0, 0, 1)));
}

TEST_CASE("OBJ round trips") {
  std::mt19937_64 rng(1);
  const auto dir = scratch_dir("obj");
  for (int i = 0; i < 100; ++i) {
    const Mesh m = random_mesh(rng, i % 2 == 0);
    const Mesh back = parse_obj(format_obj(m));
    REQUIRE(back.vertex_count() == m.vertex_count());
    CHECK((back.vertices - m.vertices).cwiseAbs().maxCoeff() <= 1e-6 * 3);
    CHECK(back.triangles == m.triangles);
    CHECK(back.has_colors() == m.has_colors());
    if (m.has_colors()) CHECK((back.colors - m.colors).cwiseAbs().maxCoeff() <= 1e-6);
  }
  const Mesh m = random_mesh(rng, true);
  write_obj(m, dir / "m.obj");
  CHECK(read_obj(dir / "m.obj").triangles == m.triangles);
}

TEST_CASE("OBJ text layout") {
  Mesh m;
  m.vertices.resize(3, 3);
  m.vertices << 0.123456789012, 1, 2, 3, 4, 5, 6, 7, 8;
  m.triangles.resize(1, 3);
  m.triangles << 0, 1, 2;
  const std::string text = format_obj(m);
  CHECK(text.find("v 0.123456789 1 2\n") != std::string::npos);
  CHECK(text.find("f 1 2 3\n") != std::string::npos);
  // quads are fanned, slashes and negative indices accepted
  const Mesh q = parse_obj("# c\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 -1//1\n");
  CHECK(q.triangle_count() == 2);
  CHECK(q.triangles.row(1) == Eigen::RowVector3i(0, 2, 3));
}

TEST_CASE("malformed OBJ names the line") {
  CHECK_THROWS_WITH_AS(parse_obj("v 0 0 0\nv 1 x 0\n"), doctest::Contains("line 2"), ParseError);
  CHECK_THROWS_WITH_AS(parse_obj("v 0 0 0\nf 1 2 3\n"), doctest::Contains("line 2"), ParseError);
  CHECK_THROWS_AS(read_obj("/nonexistent/mesh.obj"), std::runtime_error);
}

TEST_CASE("PFM round trips bit for bit") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int i = 0; i < 100; ++i) {
    FloatImage img;
    img.width = 1 + static_cast<int>(rng() % 9);
    img.height = 1 + static_cast<int>(rng() % 7);
    img.data.resize(static_cast<Eigen::Index>(img.width) * img.height, i % 2 ? 3 : 1);
    for (Eigen::Index k = 0; k < img.data.size(); ++k) img.data.data()[k] = static_cast<float>(u(rng));
    const std::string bytes = format_pfm(img);
    CHECK(bytes.substr(0, 2) == (i % 2 ? "PF" : "Pf"));
    const FloatImage back = parse_pfm(bytes);
    CHECK(back.width == img.width);
    CHECK(back.height == img.height);
    CHECK(back.data == img.data);
  }
}

TEST_CASE("PFM header and rejection") {
  FloatImage img;
  img.width = 2;
  img.height = 1;
  img.data = Eigen::MatrixXd::Constant(2, 1, 1.0);
  const std::string bytes = format_pfm(img);
  CHECK(bytes.rfind("Pf\n2 1\n-1.0\n", 0) == 0);
  CHECK(bytes.size() == std::string("Pf\n2 1\n-1.0\n").size() + 8);
  CHECK_THROWS_AS(parse_pfm("P6\n2 1\n255\n"), ParseError);
  CHECK_THROWS_AS(parse_pfm(bytes.substr(0, bytes.size() - 1)), ParseError);
}

TEST_CASE("PPM encoding") {
  const Eigen::MatrixX3d white = Eigen::MatrixX3d::Ones(6, 3);
  const std::string bytes = format_ppm(white, 3, 2);
  const std::string header = "P6\n3 2\n255\n";
  REQUIRE(bytes.rfind(header, 0) == 0);
  REQUIRE(bytes.size() == header.size() + 18);
  for (std::size_t i = header.size(); i < bytes.size(); ++i) CHECK(static_cast<unsigned char>(bytes[i]) == 255);

  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    Eigen::MatrixX3d rgb(12, 3);
    for (Eigen::Index k = 0; k < rgb.size(); ++k) rgb.data()[k] = static_cast<double>(rng() % 256) / 255.0;
    CHECK((parse_ppm(format_ppm(rgb, 4, 3)).data - Eigen::MatrixXd(rgb)).cwiseAbs().maxCoeff() <= 1e-15);
  }
  Eigen::MatrixX3d clamp(1, 3);
  clamp << -0.5, 2.0, 0.5;
  const FloatImage c = parse_ppm(format_ppm(clamp, 1, 1));
  CHECK(c.data(0, 0) == 0.0);
  CHECK(c.data(0, 1) == 1.0);
  CHECK(c.data(0, 2) == 128.0 / 255.0);
}

TEST_CASE("dataset round trip") {
  const auto dir = scratch_dir("dataset");
  Dataset ds;
  ds.scene = sphere_box_scene();
  ds.poses = zero123pp_targets(0.0, 2.5, 50, 12, 10);
  ds.views = render_gt(*ds.scene, ds.poses, 12, 10);
  write_dataset(ds, dir);
  CHECK(std::filesystem::exists(dir / "cameras.json"));
  CHECK(std::filesystem::exists(dir / "view_005_normal.pfm"));
  const Dataset back = read_dataset(dir);
  REQUIRE(back.views.size() == 6);
  CHECK(back.poses.poses == ds.poses.poses);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK((back.views[i].rgb - ds.views[i].rgb).cwiseAbs().maxCoeff() <= 0.5 / 255 + 1e-12);
    CHECK((back.views[i].depth - ds.views[i].depth).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(back.views[i].mask == ds.views[i].mask);
  }
  CHECK(back.scene.has_value());
}

TEST_CASE("tag normalization") {
  CHECK(normalize_tag("Low-Poly") == "lowpoly");
  CHECK(normalize_tag("low_poly ") == "lowpoly");
  CHECK(is_low_quality_tag("LOWPOLY"));
  CHECK(is_low_quality_tag("low poly"));
  CHECK_FALSE(is_low_quality_tag("polygon"));
}

TEST_CASE("manifest rules") {
  CHECK(rejection_reason(clean_entry("a")).empty());
  ManifestEntry e = clean_entry("b");
  e.tags.push_back("low_poly");
  CHECK(rejection_reason(e) == "rule-v");
  e = clean_entry("c");
  e.coverage = std::vector<double>{0.5, 0.05};
  CHECK(rejection_reason(e) == "rule-ii");
  e = clean_entry("d");
  e.has_texture = false;
  e.caption.reset();
  CHECK(rejection_reason(e) == "rule-i");
  e = clean_entry("e");
  e.n_components = 3;
  CHECK(rejection_reason(e) == "rule-iii");
  e = clean_entry("f");
  e.caption = "";
  CHECK(rejection_reason(e) == "rule-iv");
}

TEST_CASE("manifest json and filter order independence") {
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < 12; ++i) {
    ManifestEntry e = clean_entry("id" + std::to_string(i));
    if (i % 4 == 1) e.tags.push_back("Low-Poly");
    if (i % 5 == 2) e.n_components = 2;
    entries.push_back(e);
  }
  const nlohmann::json j = entries;
  const auto back = j.get<std::vector<ManifestEntry>>();
  CHECK(nlohmann::json(back) == j);

  const auto kept_ids = [](const std::vector<ManifestEntry>& es) {
    std::vector<std::string> ids;
    for (const auto& e : filter_manifest(es).kept) ids.push_back(e.id);
    std::sort(ids.begin(), ids.end());
    return ids;
  };
  auto shuffled = entries;
  std::shuffle(shuffled.begin(), shuffled.end(), std::mt19937_64(4));
  CHECK(kept_ids(entries) == kept_ids(shuffled));
  const FilterResult r = filter_manifest(entries);
  CHECK(r.kept.size() + r.rejected.size() == entries.size());
}
