#include "smesh/dataio.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "smesh/flexigrid.hpp"
#include "smesh/parallel.hpp"

namespace smesh {

namespace {

constexpr double kSceneBound = 1.0;

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, const std::string& context) {
  double v = 0.0;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw std::invalid_argument(context + ": bad number '" + s + "'");
  }
  return v;
}

std::vector<double> parse_list(const std::string& s, const std::string& context) {
  std::vector<double> out;
  for (const auto& part : split(s, ',')) out.push_back(parse_double(part, context));
  return out;
}

Vec3 parse_hex_color(const std::string& hex, const std::string& context) {
  if (hex.size() != 6 || !std::all_of(hex.begin(), hex.end(), [](char c) { return std::isxdigit(static_cast<unsigned char>(c)); })) {
    throw std::invalid_argument(context + ": color must be #rrggbb");
  }
  Vec3 c;
  for (int k = 0; k < 3; ++k) c[k] = std::stoi(hex.substr(2 * k, 2), nullptr, 16) / 255.0;
  return c;
}

const char* kind_name(PrimitiveKind kind) {
  switch (kind) {
    case PrimitiveKind::sphere: return "sphere";
    case PrimitiveKind::box: return "box";
    case PrimitiveKind::torus: return "torus";
  }
  return "?";
}

PrimitiveKind kind_from_name(const std::string& name) {
  if (name == "sphere") return PrimitiveKind::sphere;
  if (name == "box") return PrimitiveKind::box;
  if (name == "torus") return PrimitiveKind::torus;
  throw std::invalid_argument("scene: unknown primitive '" + name + "'");
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

// --- scenes -----------------------------------------------------------------

double Primitive::sdf(const Vec3& p) const {
  const Vec3 d = p - center;
  switch (kind) {
    case PrimitiveKind::sphere: return d.norm() - params[0];
    case PrimitiveKind::box: {
      const Vec3 q = d.cwiseAbs() - params;
      return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
    }
    case PrimitiveKind::torus: {
      const double ring = std::hypot(d.x(), d.y()) - params[0];
      return std::hypot(ring, d.z()) - params[1];
    }
  }
  return 0.0;
}

Vec3 Primitive::normal(const Vec3& p) const {
  const Vec3 d = p - center;
  switch (kind) {
    case PrimitiveKind::sphere: {
      const double n = d.norm();
      return n > 0.0 ? Vec3(d / n) : Vec3::UnitZ();
    }
    case PrimitiveKind::box: {
      const Vec3 q = d.cwiseAbs() - params;
      Vec3 sign;
      for (int k = 0; k < 3; ++k) sign[k] = d[k] < 0.0 ? -1.0 : 1.0;
      if (q.maxCoeff() > 0.0) {
        const Vec3 out = q.cwiseMax(0.0);
        return sign.cwiseProduct(out) / out.norm();
      }
      Eigen::Index axis = 0;
      q.maxCoeff(&axis);
      Vec3 n = Vec3::Zero();
      n[axis] = sign[axis];
      return n;
    }
    case PrimitiveKind::torus: {
      const double rho = std::hypot(d.x(), d.y());
      if (rho == 0.0) return Vec3::UnitZ();
      const double ring = rho - params[0];
      const double len = std::hypot(ring, d.z());
      if (len == 0.0) return Vec3::UnitZ();
      return Vec3(d.x() / rho * ring / len, d.y() / rho * ring / len, d.z() / len);
    }
  }
  return Vec3::UnitZ();
}

double Primitive::bounding_radius() const {
  switch (kind) {
    case PrimitiveKind::sphere: return center.norm() + params[0];
    case PrimitiveKind::box: return center.norm() + params.norm();
    case PrimitiveKind::torus: return center.norm() + params[0] + params[1];
  }
  return 0.0;
}

double SceneSpec::sdf(const Vec3& p) const {
  double s = std::numeric_limits<double>::infinity();
  for (const auto& prim : primitives) s = std::min(s, prim.sdf(p));
  return s;
}

int SceneSpec::closest(const Vec3& p) const {
  int best = -1;
  double s = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < primitives.size(); ++i) {
    const double v = primitives[i].sdf(p);
    if (v < s) {
      s = v;
      best = static_cast<int>(i);
    }
  }
  return best;
}

Vec3 SceneSpec::normal(const Vec3& p) const {
  const int i = closest(p);
  return i < 0 ? Vec3::Zero() : primitives[i].normal(p);
}

Vec3 SceneSpec::albedo(const Vec3& p) const {
  const int i = closest(p);
  return i < 0 ? Vec3::Ones() : primitives[i].albedo;
}

void validate(const SceneSpec& scene) {
  for (const auto& prim : scene.primitives) {
    const std::string name = kind_name(prim.kind);
    if (!prim.params.allFinite() || !prim.center.allFinite() || !prim.albedo.allFinite()) {
      throw std::invalid_argument("scene: non-finite " + name + " parameters");
    }
    const bool ok = prim.kind == PrimitiveKind::sphere ? prim.params[0] > 0.0
                    : prim.kind == PrimitiveKind::box  ? (prim.params.array() > 0.0).all()
                                                       : prim.params[0] > prim.params[1] && prim.params[1] > 0.0;
    if (!ok) throw std::invalid_argument("scene: invalid " + name + " size");
    if (prim.bounding_radius() > kSceneBound + 1e-12) {
      throw std::invalid_argument("scene: " + name + " reaches outside the unit sphere");
    }
    if ((prim.albedo.array() < 0.0).any() || (prim.albedo.array() > 1.0).any()) {
      throw std::invalid_argument("scene: albedo outside [0, 1]");
    }
  }
}

SceneSpec sphere_box_scene() {
  SceneSpec s;
  s.primitives.push_back({PrimitiveKind::sphere, Vec3(0.5, 0, 0), Vec3::Zero(), Vec3(1, 0, 0)});
  s.primitives.push_back({PrimitiveKind::box, Vec3::Constant(0.25), Vec3(0.5, 0, 0), Vec3(0, 0, 1)});
  return s;
}

SceneSpec parse_scene(const std::string& text) {
  if (text == "sphere_box") return sphere_box_scene();
  if (text == "empty") return {};
  SceneSpec scene;
  for (const auto& term : split(text, '+')) {
    const std::string context = "scene term '" + term + "'";
    std::string body = term;
    Primitive prim;
    if (const auto hash = body.find('#'); hash != std::string::npos) {
      prim.albedo = parse_hex_color(body.substr(hash + 1), context);
      body = body.substr(0, hash);
    }
    if (const auto at = body.find('@'); at != std::string::npos) {
      const auto c = parse_list(body.substr(at + 1), context);
      if (c.size() != 3) throw std::invalid_argument(context + ": center needs 3 values");
      prim.center = Vec3(c[0], c[1], c[2]);
      body = body.substr(0, at);
    }
    const auto colon = body.find(':');
    if (colon == std::string::npos) throw std::invalid_argument(context + ": expected kind:params");
    prim.kind = kind_from_name(body.substr(0, colon));
    const auto p = parse_list(body.substr(colon + 1), context);
    switch (prim.kind) {
      case PrimitiveKind::sphere:
        if (p.size() != 1) throw std::invalid_argument(context + ": sphere takes r");
        prim.params = Vec3(p[0], 0, 0);
        break;
      case PrimitiveKind::box:
        if (p.size() == 1) {
          prim.params = Vec3::Constant(p[0]);
        } else if (p.size() == 3) {
          prim.params = Vec3(p[0], p[1], p[2]);
        } else {
          throw std::invalid_argument(context + ": box takes h or hx,hy,hz");
        }
        break;
      case PrimitiveKind::torus:
        if (p.size() != 2) throw std::invalid_argument(context + ": torus takes R,r");
        prim.params = Vec3(p[0], p[1], 0);
        break;
    }
    scene.primitives.push_back(prim);
  }
  validate(scene);
  return scene;
}

std::string format_scene(const SceneSpec& scene) {
  std::string out;
  for (const auto& prim : scene.primitives) {
    if (!out.empty()) out += '+';
    out += kind_name(prim.kind);
    out += ':';
    const int n = prim.kind == PrimitiveKind::sphere ? 1 : prim.kind == PrimitiveKind::torus ? 2 : 3;
    for (int k = 0; k < n; ++k) out += (k ? "," : "") + format_number(prim.params[k]);
    if (!prim.center.isZero(0.0)) {
      out += '@' + format_number(prim.center.x()) + ',' + format_number(prim.center.y()) + ',' +
             format_number(prim.center.z());
    }
    char hex[8];
    std::snprintf(hex, sizeof hex, "#%02x%02x%02x", static_cast<int>(std::lround(prim.albedo[0] * 255)),
                  static_cast<int>(std::lround(prim.albedo[1] * 255)), static_cast<int>(std::lround(prim.albedo[2] * 255)));
    out += hex;
  }
  return out;
}

void to_json(nlohmann::json& j, const SceneSpec& scene) {
  j = nlohmann::json::array();
  for (const auto& prim : scene.primitives) {
    j.push_back({{"kind", kind_name(prim.kind)},
                 {"params", {prim.params[0], prim.params[1], prim.params[2]}},
                 {"center", {prim.center[0], prim.center[1], prim.center[2]}},
                 {"albedo", {prim.albedo[0], prim.albedo[1], prim.albedo[2]}}});
  }
}

void from_json(const nlohmann::json& j, SceneSpec& scene) {
  scene.primitives.clear();
  const auto vec = [](const nlohmann::json& a) {
    if (!a.is_array() || a.size() != 3) throw std::invalid_argument("scene json: expected 3-vector");
    return Vec3(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
  };
  for (const auto& item : j) {
    Primitive prim;
    prim.kind = kind_from_name(item.at("kind").get<std::string>());
    prim.params = vec(item.at("params"));
    if (item.contains("center")) prim.center = vec(item.at("center"));
    if (item.contains("albedo")) prim.albedo = vec(item.at("albedo"));
    scene.primitives.push_back(prim);
  }
  validate(scene);
}

std::optional<double> trace_scene(const SceneSpec& scene, const Ray& ray) {
  if (scene.primitives.empty() || !ray.hits_box()) return std::nullopt;
  double t = ray.t_near;
  for (int step = 0; step < kTraceMaxSteps; ++step) {
    const double s = scene.sdf(ray.at(t));
    if (std::abs(s) < kTraceEpsilon) return t;
    t += s;
    if (t > ray.t_far || t < 0.0) return std::nullopt;
  }
  return std::nullopt;
}

ImageBuffer render_gt(const SceneSpec& scene, const CameraPose& camera, int threads) {
  validate(camera);
  ImageBuffer img = ImageBuffer::background(camera.width, camera.height);
  const Vec3 forward = camera.forward();
  parallel_for(camera.height, threads, [&](int y) {
    for (int x = 0; x < camera.width; ++x) {
      const Ray ray = pixel_ray(camera, x, y);
      const auto t = trace_scene(scene, ray);
      if (!t) continue;
      const Vec3 hit = ray.at(*t);
      const Eigen::Index p = img.index(x, y);
      img.rgb.row(p) = scene.albedo(hit).transpose();
      img.depth[p] = *t * ray.direction.dot(forward);
      img.normal.row(p) = scene.normal(hit).transpose();
      img.mask[p] = 1.0;
    }
  });
  return img;
}

std::vector<ImageBuffer> render_gt(const SceneSpec& scene, const PoseSet& poses, int width, int height,
                                   int threads) {
  std::vector<ImageBuffer> out;
  out.reserve(poses.size());
  for (CameraPose cam : poses.poses) {
    cam.width = width;
    cam.height = height;
    out.push_back(render_gt(scene, cam, threads));
  }
  return out;
}

Mesh scene_mesh(const SceneSpec& scene, int resolution) {
  if (scene.primitives.empty()) return {};
  Mesh mesh = extract_mesh(grid_from_sdf(resolution, [&](const Vec3& p) { return scene.sdf(p); }));
  mesh.colors.resize(mesh.vertex_count(), 3);
  for (Eigen::Index v = 0; v < mesh.vertex_count(); ++v) mesh.colors.row(v) = scene.albedo(mesh.vertex(v)).transpose();
  return mesh;
}

// --- file formats -------------------------------------------------------------

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string format_obj(const Mesh& mesh) {
  std::string out;
  char buf[160];
  const bool colored = mesh.has_colors();
  for (Eigen::Index v = 0; v < mesh.vertex_count(); ++v) {
    if (colored) {
      std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g %.9g %.9g %.9g\n", mesh.vertices(v, 0), mesh.vertices(v, 1),
                    mesh.vertices(v, 2), mesh.colors(v, 0), mesh.colors(v, 1), mesh.colors(v, 2));
    } else {
      std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g\n", mesh.vertices(v, 0), mesh.vertices(v, 1), mesh.vertices(v, 2));
    }
    out += buf;
  }
  for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t) {
    std::snprintf(buf, sizeof buf, "f %d %d %d\n", mesh.triangles(t, 0) + 1, mesh.triangles(t, 1) + 1,
                  mesh.triangles(t, 2) + 1);
    out += buf;
  }
  return out;
}

Mesh parse_obj(const std::string& text) {
  std::vector<std::array<double, 6>> verts;
  std::vector<Eigen::Vector3i> faces;
  int colored = -1;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  const auto fail = [&](const std::string& msg) { throw ParseError("obj line " + std::to_string(lineno) + ": " + msg); };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tag == "v") {
      if (tok.size() != 3 && tok.size() != 6) fail("vertex needs 3 or 6 values");
      const int has = tok.size() == 6;
      if (colored >= 0 && colored != has) fail("vertex colors present on some vertices only");
      colored = has;
      std::array<double, 6> v{};
      for (std::size_t k = 0; k < tok.size(); ++k) {
        try {
          v[k] = parse_double(tok[k], "value");
        } catch (const std::invalid_argument& e) {
          fail(e.what());
        }
      }
      verts.push_back(v);
    } else if (tag == "f") {
      if (tok.size() < 3) fail("face needs at least 3 vertices");
      std::vector<int> idx;
      for (const auto& t : tok) {
        const std::string head = t.substr(0, t.find('/'));
        int i = 0;
        const auto [ptr, ec] = std::from_chars(head.data(), head.data() + head.size(), i);
        if (ec != std::errc() || ptr != head.data() + head.size() || i == 0) fail("bad face index '" + t + "'");
        i = i > 0 ? i - 1 : static_cast<int>(verts.size()) + i;
        if (i < 0 || i >= static_cast<int>(verts.size())) fail("face index out of range");
        idx.push_back(i);
      }
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) faces.emplace_back(idx[0], idx[k], idx[k + 1]);
    }
  }
  Mesh mesh;
  mesh.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  if (colored == 1) mesh.colors.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (std::size_t v = 0; v < verts.size(); ++v) {
    mesh.vertices.row(v) << verts[v][0], verts[v][1], verts[v][2];
    if (colored == 1) mesh.colors.row(v) << verts[v][3], verts[v][4], verts[v][5];
  }
  for (const auto& f : faces) {
    if (f.maxCoeff() >= static_cast<int>(verts.size())) throw ParseError("obj: face index out of range");
  }
  mesh.triangles.resize(static_cast<Eigen::Index>(faces.size()), 3);
  for (std::size_t t = 0; t < faces.size(); ++t) mesh.triangles.row(t) = faces[t].transpose();
  return mesh;
}

void write_obj(const Mesh& mesh, const std::filesystem::path& path) { write_file(path, format_obj(mesh)); }
Mesh read_obj(const std::filesystem::path& path) { return parse_obj(read_file(path)); }

namespace {

// Reads whitespace-separated header tokens of a netpbm-style file and leaves
// `pos` on the first data byte (after exactly one whitespace character).
std::vector<std::string> read_header(const std::string& bytes, std::size_t count, std::size_t& pos, const char* fmt) {
  std::vector<std::string> tokens;
  pos = 0;
  while (tokens.size() < count) {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (pos < bytes.size() && bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      continue;
    }
    if (pos >= bytes.size()) throw ParseError(std::string(fmt) + ": truncated header at byte " + std::to_string(pos));
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    tokens.push_back(bytes.substr(start, pos - start));
  }
  if (pos >= bytes.size()) throw ParseError(std::string(fmt) + ": missing data at byte " + std::to_string(pos));
  ++pos;
  return tokens;
}

int parse_dimension(const std::string& s, const char* fmt) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || v <= 0) {
    throw ParseError(std::string(fmt) + ": bad dimension '" + s + "'");
  }
  return v;
}

}  // namespace

std::string format_pfm(const FloatImage& image) {
  const int ch = image.channels();
  if (ch != 1 && ch != 3) throw std::invalid_argument("pfm: 1 or 3 channels required");
  if (image.data.rows() != static_cast<Eigen::Index>(image.width) * image.height) {
    throw std::invalid_argument("pfm: data size does not match dimensions");
  }
  std::string out = (ch == 1 ? "Pf\n" : "PF\n") + std::to_string(image.width) + " " + std::to_string(image.height) + "\n-1.0\n";
  const std::size_t header = out.size();
  out.resize(header + static_cast<std::size_t>(image.data.size()) * 4);
  char* dst = out.data() + header;
  for (int y = image.height - 1; y >= 0; --y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < ch; ++c) {
        const float f = static_cast<float>(image.data(static_cast<Eigen::Index>(y) * image.width + x, c));
        std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
        for (int b = 0; b < 4; ++b) *dst++ = static_cast<char>((bits >> (8 * b)) & 0xff);
      }
    }
  }
  return out;
}

FloatImage parse_pfm(const std::string& bytes) {
  std::size_t pos = 0;
  const auto h = read_header(bytes, 4, pos, "pfm");
  int ch = 0;
  if (h[0] == "Pf") {
    ch = 1;
  } else if (h[0] == "PF") {
    ch = 3;
  } else {
    throw ParseError("pfm: bad magic '" + h[0] + "' at byte 0");
  }
  FloatImage img;
  img.width = parse_dimension(h[1], "pfm");
  img.height = parse_dimension(h[2], "pfm");
  double scale = 0.0;
  try {
    scale = parse_double(h[3], "pfm");
  } catch (const std::invalid_argument&) {
    throw ParseError("pfm: bad scale '" + h[3] + "'");
  }
  if (scale == 0.0) throw ParseError("pfm: zero scale");
  const bool little = scale < 0.0;
  const std::size_t need = static_cast<std::size_t>(img.width) * img.height * ch * 4;
  if (bytes.size() - pos < need) {
    throw ParseError("pfm: truncated data at byte " + std::to_string(bytes.size()) + ", expected " +
                     std::to_string(pos + need));
  }
  img.data.resize(static_cast<Eigen::Index>(img.width) * img.height, ch);
  const auto* src = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  for (int y = img.height - 1; y >= 0; --y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < ch; ++c) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(src[little ? b : 3 - b]) << (8 * b);
        src += 4;
        img.data(static_cast<Eigen::Index>(y) * img.width + x, c) = std::bit_cast<float>(bits);
      }
    }
  }
  return img;
}

void write_pfm(const FloatImage& image, const std::filesystem::path& path) { write_file(path, format_pfm(image)); }
FloatImage read_pfm(const std::filesystem::path& path) { return parse_pfm(read_file(path)); }

std::string format_ppm(const Eigen::MatrixX3d& rgb, int width, int height) {
  if (rgb.rows() != static_cast<Eigen::Index>(width) * height) throw std::invalid_argument("ppm: size mismatch");
  std::string out = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.reserve(out.size() + static_cast<std::size_t>(rgb.size()));
  for (Eigen::Index p = 0; p < rgb.rows(); ++p) {
    for (int c = 0; c < 3; ++c) {
      out += static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * std::clamp(rgb(p, c), 0.0, 1.0))));
    }
  }
  return out;
}

FloatImage parse_ppm(const std::string& bytes) {
  std::size_t pos = 0;
  const auto h = read_header(bytes, 4, pos, "ppm");
  if (h[0] != "P6") throw ParseError("ppm: bad magic '" + h[0] + "' at byte 0");
  FloatImage img;
  img.width = parse_dimension(h[1], "ppm");
  img.height = parse_dimension(h[2], "ppm");
  if (h[3] != "255") throw ParseError("ppm: only maxval 255 is supported");
  const std::size_t need = static_cast<std::size_t>(img.width) * img.height * 3;
  if (bytes.size() - pos < need) {
    throw ParseError("ppm: truncated data at byte " + std::to_string(bytes.size()) + ", expected " +
                     std::to_string(pos + need));
  }
  img.data.resize(static_cast<Eigen::Index>(img.width) * img.height, 3);
  for (Eigen::Index p = 0; p < img.data.rows(); ++p) {
    for (int c = 0; c < 3; ++c) img.data(p, c) = static_cast<unsigned char>(bytes[pos++]) / 255.0;
  }
  return img;
}

void write_ppm(const Eigen::MatrixX3d& rgb, int width, int height, const std::filesystem::path& path) {
  write_file(path, format_ppm(rgb, width, height));
}
FloatImage read_ppm(const std::filesystem::path& path) { return parse_ppm(read_file(path)); }

// --- datasets -----------------------------------------------------------------

namespace {

std::string view_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "view_%03zu_", i);
  return buf;
}

}  // namespace

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  if (dataset.views.size() != dataset.poses.size()) throw std::invalid_argument("write_dataset: views != poses");
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < dataset.views.size(); ++i) {
    const ImageBuffer& v = dataset.views[i];
    const std::string stem = view_stem(i);
    write_ppm(v.rgb, v.width, v.height, dir / (stem + "rgb.ppm"));
    write_pfm({v.width, v.height, v.depth}, dir / (stem + "depth.pfm"));
    write_pfm({v.width, v.height, v.mask}, dir / (stem + "mask.pfm"));
    write_pfm({v.width, v.height, v.normal}, dir / (stem + "normal.pfm"));
  }
  nlohmann::json cams = dataset.poses;
  write_file(dir / "cameras.json", cams.dump(2) + "\n");
  if (dataset.scene) {
    nlohmann::json scene = *dataset.scene;
    write_file(dir / "scene.json", scene.dump(2) + "\n");
  }
}

Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.poses = nlohmann::json::parse(read_file(dir / "cameras.json")).get<PoseSet>();
  for (std::size_t i = 0; i < ds.poses.size(); ++i) {
    const std::string stem = view_stem(i);
    const FloatImage rgb = read_ppm(dir / (stem + "rgb.ppm"));
    ImageBuffer v = ImageBuffer::background(rgb.width, rgb.height);
    v.rgb = rgb.data;
    const auto load = [&](const std::string& name, int ch) {
      const std::filesystem::path p = dir / (stem + name);
      if (!std::filesystem::exists(p)) return Eigen::MatrixXd(Eigen::MatrixXd::Zero(v.pixel_count(), ch));
      const FloatImage img = read_pfm(p);
      if (img.width != v.width || img.height != v.height || img.channels() != ch) {
        throw ParseError(p.string() + ": dimensions do not match the rgb view");
      }
      return img.data;
    };
    v.depth = load("depth.pfm", 1).col(0);
    v.mask = load("mask.pfm", 1).col(0);
    v.normal = load("normal.pfm", 3);
    ds.poses.poses[i].width = v.width;
    ds.poses.poses[i].height = v.height;
    ds.views.push_back(std::move(v));
  }
  if (std::filesystem::exists(dir / "scene.json")) {
    ds.scene = nlohmann::json::parse(read_file(dir / "scene.json")).get<SceneSpec>();
  }
  return ds;
}

// --- manifest -----------------------------------------------------------------

void to_json(nlohmann::json& j, const ManifestEntry& e) {
  j = {{"id", e.id}, {"has_texture", e.has_texture}, {"tags", e.tags}, {"n_components", e.n_components}};
  j["caption"] = e.caption ? nlohmann::json(*e.caption) : nlohmann::json(nullptr);
  if (e.coverage) j["coverage"] = *e.coverage;
}

void from_json(const nlohmann::json& j, ManifestEntry& e) {
  e.id = j.at("id").get<std::string>();
  e.has_texture = j.value("has_texture", false);
  e.caption.reset();
  if (j.contains("caption") && !j.at("caption").is_null()) e.caption = j.at("caption").get<std::string>();
  e.tags = j.value("tags", std::vector<std::string>{});
  e.n_components = j.value("n_components", 1);
  e.coverage.reset();
  if (j.contains("coverage") && !j.at("coverage").is_null()) {
    e.coverage = j.at("coverage").get<std::vector<double>>();
    if (e.coverage->empty()) throw std::invalid_argument("manifest entry " + e.id + ": empty coverage list");
  }
}

std::string normalize_tag(const std::string& tag) {
  std::string out;
  for (unsigned char c : tag) {
    if (std::isalnum(c)) out += static_cast<char>(std::tolower(c));
  }
  return out;
}

bool is_low_quality_tag(const std::string& tag) { return normalize_tag(tag).find("lowpoly") != std::string::npos; }

std::string rejection_reason(const ManifestEntry& e) {
  if (!e.has_texture) return "rule-i";
  if (e.coverage && std::any_of(e.coverage->begin(), e.coverage->end(), [](double c) { return c < kMinViewCoverage; })) {
    return "rule-ii";
  }
  if (e.n_components > 1) return "rule-iii";
  const bool captioned = e.caption && std::any_of(e.caption->begin(), e.caption->end(),
                                                  [](unsigned char c) { return !std::isspace(c); });
  if (!captioned) return "rule-iv";
  if (std::any_of(e.tags.begin(), e.tags.end(), is_low_quality_tag)) return "rule-v";
  return {};
}

FilterResult filter_manifest(const std::vector<ManifestEntry>& entries) {
  FilterResult r;
  for (const auto& e : entries) {
    std::string reason = rejection_reason(e);
    if (reason.empty()) {
      r.kept.push_back(e);
    } else {
      r.rejected.push_back({e, std::move(reason)});
    }
  }
  return r;
}

}  // namespace smesh
