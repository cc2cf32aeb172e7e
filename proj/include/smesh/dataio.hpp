#pragma once

// Synthetic analytic-SDF scenes and their ground-truth renderer, file formats
// (OBJ, PFM, PPM), on-disk view datasets and the asset manifest filter.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "smesh/campose.hpp"
#include "smesh/core3d.hpp"
#include "smesh/image.hpp"
#include "smesh/mesh.hpp"

namespace smesh {

// --- scenes -----------------------------------------------------------------

enum class PrimitiveKind { sphere, box, torus };

/// `params`: sphere (r, -, -), box (hx, hy, hz), torus (R, r, -) around +z.
struct Primitive {
  PrimitiveKind kind = PrimitiveKind::sphere;
  Vec3 params = Vec3(0.5, 0.0, 0.0);
  Vec3 center = Vec3::Zero();
  Vec3 albedo = Vec3::Constant(0.8);

  double sdf(const Vec3& p) const;
  /// Unit gradient of sdf at p.
  Vec3 normal(const Vec3& p) const;
  /// Radius of a ball around the origin containing the primitive.
  double bounding_radius() const;
};

/// Union of primitives; empty means nothing to render.
struct SceneSpec {
  std::vector<Primitive> primitives;

  double sdf(const Vec3& p) const;
  /// Index of the primitive closest to p (lowest index on ties).
  int closest(const Vec3& p) const;
  Vec3 normal(const Vec3& p) const;
  Vec3 albedo(const Vec3& p) const;
};

/// Parses "kind:params[@cx,cy,cz][#rrggbb]" terms joined by '+', e.g.
/// "sphere:0.5#ff0000+box:0.25@0.5,0,0#0000ff", or a preset name
/// ("sphere_box"). Throws std::invalid_argument on malformed input or a
/// primitive reaching outside the unit sphere.
SceneSpec parse_scene(const std::string& text);
std::string format_scene(const SceneSpec& scene);
void validate(const SceneSpec& scene);

/// Red sphere r = 0.5 at the origin united with a blue cube of half-extent
/// 0.25 centered at (0.5, 0, 0).
SceneSpec sphere_box_scene();

void to_json(nlohmann::json& j, const SceneSpec& scene);
void from_json(const nlohmann::json& j, SceneSpec& scene);

inline constexpr double kTraceEpsilon = 1e-6;
inline constexpr int kTraceMaxSteps = 256;

/// Sphere-traces one ray; returns the hit ray parameter.
std::optional<double> trace_scene(const SceneSpec& scene, const Ray& ray);

/// Unlit albedo, z-depth, analytic world normals and a binary mask.
ImageBuffer render_gt(const SceneSpec& scene, const CameraPose& camera, int threads = 1);
std::vector<ImageBuffer> render_gt(const SceneSpec& scene, const PoseSet& poses, int width, int height,
                                   int threads = 1);

/// Dual extraction of the analytic SDF with per-vertex albedo.
Mesh scene_mesh(const SceneSpec& scene, int resolution = 128);

// --- file formats -------------------------------------------------------------

/// Raised for malformed files; `what()` names the line or byte offset.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_obj(const Mesh& mesh, const std::filesystem::path& path);
Mesh read_obj(const std::filesystem::path& path);
std::string format_obj(const Mesh& mesh);
Mesh parse_obj(const std::string& text);

/// Float image with 1 ("Pf") or 3 ("PF") channels; rows are pixels in
/// top-to-bottom, left-to-right order.
struct FloatImage {
  int width = 0;
  int height = 0;
  Eigen::MatrixXd data;  // pixels x channels

  int channels() const { return static_cast<int>(data.cols()); }
};

std::string format_pfm(const FloatImage& image);
FloatImage parse_pfm(const std::string& bytes);
void write_pfm(const FloatImage& image, const std::filesystem::path& path);
FloatImage read_pfm(const std::filesystem::path& path);

/// 8-bit binary P6; values are round(255 * clamp(v, 0, 1)).
std::string format_ppm(const Eigen::MatrixX3d& rgb, int width, int height);
FloatImage parse_ppm(const std::string& bytes);
void write_ppm(const Eigen::MatrixX3d& rgb, int width, int height, const std::filesystem::path& path);
FloatImage read_ppm(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

// --- datasets -----------------------------------------------------------------

/// Ground-truth views on disk: view_NNN_{rgb.ppm,depth.pfm,mask.pfm,normal.pfm}
/// plus cameras.json (a pose array).
struct Dataset {
  PoseSet poses;
  std::vector<ImageBuffer> views;
  std::optional<SceneSpec> scene;
};

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

// --- manifest -----------------------------------------------------------------

struct ManifestEntry {
  std::string id;
  bool has_texture = false;
  std::optional<std::string> caption;
  std::vector<std::string> tags;
  int n_components = 1;
  std::optional<std::vector<double>> coverage;
};

void to_json(nlohmann::json& j, const ManifestEntry& entry);
void from_json(const nlohmann::json& j, ManifestEntry& entry);

inline constexpr double kMinViewCoverage = 0.1;

/// Lowercase with non-alphanumerics removed.
std::string normalize_tag(const std::string& tag);
bool is_low_quality_tag(const std::string& tag);

/// First failing rule ("rule-i" .. "rule-v"), or empty when the entry passes:
/// i no texture, ii a view covered below 10%, iii several components,
/// iv no caption, v a low-quality tag.
std::string rejection_reason(const ManifestEntry& entry);

struct Rejection {
  ManifestEntry entry;
  std::string reason;
};

struct FilterResult {
  std::vector<ManifestEntry> kept;
  std::vector<Rejection> rejected;
};

FilterResult filter_manifest(const std::vector<ManifestEntry>& entries);

}  // namespace smesh
