#pragma once

// Differentiable dual iso-surface extraction with learnable edge weights
// (alpha), dual-vertex blend weights (beta) and bounded vertex deformations.
//
// The lattice has `resolution` vertices per axis spanning [-1, 1]^3, so there
// are resolution - 1 cells per axis. Inside is s < 0.
//
// Per crossing edge (a, b) the crossing point is
//   u = (alpha_a s_b p_a - alpha_b s_a p_b) / (alpha_a s_b - alpha_b s_a),
// each active cell gets one dual vertex sum(beta_e u_e) / sum(beta_e), and
// each interior crossing edge emits a quad over its four neighbouring cells,
// wound so normals point from inside to outside.

#include <functional>
#include <vector>

#include <Eigen/Core>

#include "smesh/autodiff.hpp"
#include "smesh/core3d.hpp"
#include "smesh/mesh.hpp"
#include "smesh/triplane.hpp"

namespace smesh {

using BetaMatrix = Eigen::Matrix<double, Eigen::Dynamic, kCellEdges, Eigen::RowMajor>;

struct ExtractionGrid {
  int resolution = 0;
  Eigen::VectorXd sdf;
  Eigen::MatrixX3d deformation;  // cell units, |delta| < 1/2
  Eigen::VectorXd alpha;
  /// Row of `beta` holding a cell's edge blend weights, or -1 (all ones).
  Eigen::VectorXi beta_row;
  BetaMatrix beta;

  /// sdf 0, no deformation, alpha = beta = 1.
  static ExtractionGrid neutral(int resolution);

  int cells_per_axis() const { return resolution - 1; }
  Eigen::Index vertex_count() const;
  Eigen::Index cell_count() const;
  Eigen::Index vertex_index(int i, int j, int k) const {
    return (static_cast<Eigen::Index>(k) * resolution + j) * resolution + i;
  }
  Eigen::Index cell_index(int i, int j, int k) const {
    return (static_cast<Eigen::Index>(k) * cells_per_axis() + j) * cells_per_axis() + i;
  }
  double cell_size() const { return (kBoxMax - kBoxMin) / (resolution - 1); }
  Vec3 lattice_point(Eigen::Index v) const;
  Vec3 deformed_point(Eigen::Index v) const;
  Vec3 cell_center(Eigen::Index c) const;
  double beta_at(Eigen::Index cell, int local_edge) const;
};

/// Analytic SDF sampled at lattice vertices; other quantities neutral.
ExtractionGrid grid_from_sdf(int resolution, const std::function<double(const Vec3&)>& sdf);

struct GridOptions {
  /// Evaluate alpha at every vertex. When false, alpha is only evaluated at
  /// endpoints of crossing edges (the only place extraction reads it) and is
  /// left at 1 elsewhere.
  bool dense_alpha = true;
};

/// Queries the field's sdf / deformation / weights heads at lattice vertices
/// and the weights head at the centers of cells that contain a crossing.
ExtractionGrid build_grid(const TriplaneField& field, int resolution, const GridOptions& options = {});

/// A grid whose lattice deformation stays recorded on a tape, so the backward
/// pass reuses the forward evaluation.
struct GridGraph {
  struct Slab {
    int k0 = 0, k1 = 0;  // lattice k range
    ad::Var deformation;
  };
  const TriplaneField* field = nullptr;
  ExtractionGrid grid;
  std::vector<Slab> slabs;
};

GridGraph build_grid(const FieldGraph& graph, int resolution, const GridOptions& options = {});

struct CrossingEdge {
  Eigen::Index a = 0;  // lower lattice vertex
  Eigen::Index b = 0;  // a + one step along `axis`
  int axis = 0;
};

/// Mesh plus everything needed to differentiate it.
struct Extraction {
  Mesh mesh;
  std::vector<CrossingEdge> edges;
  Eigen::MatrixX3d edge_points;
  /// Cells with at least one crossing, ascending.
  std::vector<Eigen::Index> active_cells;
  /// Crossings of active cell slot c: [cell_offsets[c], cell_offsets[c + 1])
  /// into cell_edges / cell_local.
  std::vector<int> cell_offsets;
  std::vector<int> cell_edges;
  std::vector<int> cell_local;
  /// Dual vertex position of every active cell.
  Eigen::MatrixX3d dual_points;
  /// Active cell slot behind each mesh vertex.
  std::vector<int> vertex_slot;
};

Extraction extract(const ExtractionGrid& grid);
Mesh extract_mesh(const ExtractionGrid& grid);

/// Gradient with respect to grid quantities. `beta` rows align with grid.beta.
struct GridGradient {
  Eigen::VectorXd sdf;
  Eigen::MatrixX3d deformation;
  Eigen::VectorXd alpha;
  BetaMatrix beta;

  static GridGradient zeros(const ExtractionGrid& grid);
};

/// Chains d(loss)/d(mesh vertices) back to the grid quantities.
void backprop_extraction(const ExtractionGrid& grid, const Extraction& extraction,
                         const Eigen::MatrixX3d& vertex_grad, GridGradient& out);

struct RegTerms {
  double alpha = 0.0;        // mean over crossing edges of (alpha_a-1)^2 + (alpha_b-1)^2
  double beta = 0.0;         // mean over active cells of sum (beta_e-1)^2
  double deformation = 0.0;  // mean over lattice vertices of |delta|^2

  double total() const { return alpha + beta + deformation; }
};

RegTerms reg_terms(const ExtractionGrid& grid, const Extraction& extraction);
double reg_loss(const ExtractionGrid& grid, const Extraction& extraction);
/// Adds weight * d(reg_loss)/d(grid) into `out`.
void reg_loss_gradient(const ExtractionGrid& grid, const Extraction& extraction, double weight, GridGradient& out);

/// Chains a grid gradient into the field parameters that produced the grid.
void backprop_grid(const TriplaneField& field, const ExtractionGrid& grid, const GridGradient& grad,
                   ad::ParamGrad& out);
/// Same, backpropagating the deformation through the recorded tape.
void backprop_grid(const GridGraph& graph, const GridGradient& grad, ad::ParamGrad& out);

}  // namespace smesh
