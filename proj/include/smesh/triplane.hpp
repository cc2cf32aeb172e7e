#pragma once

// Triplane implicit field: three axis-aligned feature planes over [-1, 1]^3,
// summed bilinear samples, and five MLP heads (density, color, sdf,
// deformation, weights).

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "smesh/autodiff.hpp"
#include "smesh/core3d.hpp"

namespace smesh {

enum class HeadKind : int { density = 0, color = 1, sdf = 2, deformation = 3, weights = 4 };
inline constexpr int kHeadCount = 5;

/// Output width of each head. The weights head emits one vertex weight
/// (alpha) followed by one blend weight (beta) per cell edge.
inline constexpr int kCellEdges = 12;
int head_output_dim(HeadKind kind);
const char* head_name(HeadKind kind);

/// Lower bound added to softplus weight outputs so they stay strictly positive.
inline constexpr double kWeightEpsilon = 1e-4;
/// Default density iso-level used for the density -> SDF handoff.
inline constexpr double kDefaultTau = 10.0;

struct FieldConfig {
  int resolution = 64;
  int channels = 40;
  int hidden_width = 64;
  int hidden_layers = 2;
  /// Width of the deformation and weights heads' hidden layers.
  int aux_hidden_width = 64;
  double plane_init = 0.1;
  std::uint64_t seed = 0;

  static FieldConfig base() { return {}; }
  static FieldConfig large() {
    FieldConfig c;
    c.channels = 80;
    return c;
  }
};

struct Linear {
  Eigen::MatrixXd weight;  // in x out
  Eigen::MatrixXd bias;    // 1 x out
};

struct MlpHead {
  std::vector<Linear> layers;

  int in_dim() const { return static_cast<int>(layers.front().weight.rows()); }
  int out_dim() const { return static_cast<int>(layers.back().weight.cols()); }
  /// in, hidden..., out
  std::vector<int> widths() const;
};

struct TriplaneField {
  int resolution = 0;
  int channels = 0;
  /// xy, xz, yz planes; node (u, v) lives in row v * resolution + u.
  std::array<Eigen::MatrixXd, 3> planes;
  std::array<MlpHead, kHeadCount> heads;

  MlpHead& head(HeadKind k) { return heads[static_cast<int>(k)]; }
  const MlpHead& head(HeadKind k) const { return heads[static_cast<int>(k)]; }

  /// Every parameter tensor in declared order: planes, then each head's
  /// (weight, bias) pairs in HeadKind order.
  std::vector<Eigen::MatrixXd*> parameters();
  std::vector<const Eigen::MatrixXd*> parameters() const;
  std::size_t scalar_count() const;
};

/// Random planes in [-plane_init, plane_init]; head layers uniform in
/// +-1/sqrt(fan_in). Deformation output layer starts at zero and the weights
/// output layer starts at the neutral value 1.
TriplaneField make_field(const FieldConfig& config);

/// Field parameters bound to a tape, so every query is differentiable.
class FieldGraph {
 public:
  FieldGraph(ad::Tape& tape, const TriplaneField& field);

  ad::Tape& tape() const { return *tape_; }
  const TriplaneField& field() const { return *field_; }
  /// ParamId of field.parameters()[i] is i.
  ad::Var param(int index) const { return params_.at(index); }

  /// Summed bilinear plane samples, n x C. Points are clamped to the box;
  /// gradients flow to plane entries and to unclamped point coordinates.
  ad::Var features(const ad::Var& points) const;
  /// Output of the last hidden layer (input to the output layer).
  ad::Var trunk(HeadKind kind, const ad::Var& features) const;
  /// Pre-activation head output.
  ad::Var raw(HeadKind kind, const ad::Var& features) const;

  ad::Var density(const ad::Var& features) const;
  ad::Var color(const ad::Var& features) const;
  ad::Var sdf(const ad::Var& features) const;
  ad::Var deformation(const ad::Var& features) const;
  ad::Var weights(const ad::Var& features) const;
  ad::Var activate(HeadKind kind, const ad::Var& raw) const;

  /// Plane features at the nodes of the n^3 lattice spanning the box, node i
  /// at kBoxMin + i * (kBoxMax - kBoxMin) / (n - 1). Rows: xy j*n+i, xz k*n+i,
  /// yz k*n+j.
  std::array<ad::Var, 3> lattice_planes(int n) const;
  /// raw(kind, features(p)) for lattice vertices with k0 <= k < k1, row
  /// ((k - k0) * n + j) * n + i. Features are a sum of per-plane terms, so
  /// the first layer is applied per plane and broadcast.
  ad::Var lattice_raw(HeadKind kind, const std::array<ad::Var, 3>& planes, int n, int k0, int k1) const;

 private:
  ad::Tape* tape_;
  const TriplaneField* field_;
  std::vector<ad::Var> params_;
  std::array<int, kHeadCount> head_offset_{};
};

// Gradient-free batch queries (rows are points).
Eigen::MatrixXd sample_triplane(const TriplaneField& field, const Eigen::MatrixX3d& points);
Eigen::VectorXd sample_triplane(const TriplaneField& field, const Vec3& point);
/// Head output at each point, activated unless `raw` is set.
Eigen::MatrixXd query_head(const TriplaneField& field, HeadKind kind, const Eigen::MatrixX3d& points,
                           bool raw = false);

double query_density(const TriplaneField& field, const Vec3& x);
double query_density_raw(const TriplaneField& field, const Vec3& x);
Vec3 query_color(const TriplaneField& field, const Vec3& x);
double query_sdf(const TriplaneField& field, const Vec3& x);
Vec3 query_deformation(const TriplaneField& field, const Vec3& x);
Eigen::VectorXd query_weights(const TriplaneField& field, const Vec3& x);

/// Rewrites the SDF head from the density head: hidden layers are copied and
/// the output layer becomes w = -w_d, b = tau - b_d, so s(x) = -(d_raw(x) - tau).
/// Throws std::invalid_argument when the two heads differ in architecture.
TriplaneField init_sdf_from_density(const TriplaneField& field, double tau = kDefaultTau);

// Checkpoint: "TPF1", u32 resolution, u32 channels, u32 head count, per head
// u32 width count + u32 widths, then every parameter as f64 in declared order
// (matrices row-major). All little-endian.
std::string serialize_field(const TriplaneField& field);
TriplaneField deserialize_field(const std::string& bytes);
void save_checkpoint(const TriplaneField& field, const std::filesystem::path& path);
TriplaneField load_checkpoint(const std::filesystem::path& path);

}  // namespace smesh
