#include "smesh/flexigrid.hpp"

#include <array>
#include <stdexcept>

namespace smesh {

namespace {

constexpr double kMinTriangleArea = 1e-12;
constexpr Eigen::Index kChunk = 16384;

// The two axes other than `axis`, ascending; they index a cell's local edges:
// local = 4 * axis + o_first + 2 * o_second.
constexpr std::array<std::array<int, 2>, 3> kOtherAxes{{{1, 2}, {0, 2}, {0, 1}}};

bool inside(double s) { return s < 0.0; }

std::array<int, 3> unravel(Eigen::Index index, int n) {
  const int i = static_cast<int>(index % n);
  const int j = static_cast<int>((index / n) % n);
  const int k = static_cast<int>(index / (static_cast<Eigen::Index>(n) * n));
  return {i, j, k};
}

Eigen::MatrixX3d lattice_points(const ExtractionGrid& grid, const std::vector<Eigen::Index>& ids) {
  Eigen::MatrixX3d pts(static_cast<Eigen::Index>(ids.size()), 3);
  for (std::size_t r = 0; r < ids.size(); ++r) pts.row(r) = grid.lattice_point(ids[r]).transpose();
  return pts;
}

Eigen::MatrixX3d cell_centers(const ExtractionGrid& grid, const std::vector<Eigen::Index>& ids) {
  Eigen::MatrixX3d pts(static_cast<Eigen::Index>(ids.size()), 3);
  for (std::size_t r = 0; r < ids.size(); ++r) pts.row(r) = grid.cell_center(ids[r]).transpose();
  return pts;
}

// Edge `local` of cell (ci, cj, ck) as (lower vertex coords, axis).
std::pair<std::array<int, 3>, int> cell_edge(const std::array<int, 3>& cell, int local) {
  const int axis = local / 4;
  const int o = local % 4;
  std::array<int, 3> v = cell;
  v[kOtherAxes[axis][0]] += o & 1;
  v[kOtherAxes[axis][1]] += o >> 1;
  return {v, axis};
}

bool is_crossing(const ExtractionGrid& g, const std::array<int, 3>& v, int axis) {
  std::array<int, 3> w = v;
  w[axis] += 1;
  if (w[axis] >= g.resolution) return false;
  return inside(g.sdf[g.vertex_index(v[0], v[1], v[2])]) != inside(g.sdf[g.vertex_index(w[0], w[1], w[2])]);
}

// Cells whose corners do not all share a side; exactly the cells with at
// least one crossing edge.
std::vector<char> mixed_cells(const ExtractionGrid& g) {
  const int n = g.resolution;
  const int nc = g.cells_per_axis();
  std::vector<unsigned char> in(static_cast<std::size_t>(g.vertex_count()));
  for (Eigen::Index v = 0; v < g.vertex_count(); ++v) in[v] = inside(g.sdf[v]) ? 1 : 0;
  const Eigen::Index dj = n, dk = static_cast<Eigen::Index>(n) * n;
  std::vector<char> mixed(static_cast<std::size_t>(g.cell_count()), 0);
  for (int k = 0; k < nc; ++k) {
    for (int j = 0; j < nc; ++j) {
      const Eigen::Index row = g.vertex_index(0, j, k);
      const Eigen::Index cell_row = g.cell_index(0, j, k);
      for (int i = 0; i < nc; ++i) {
        const Eigen::Index v = row + i;
        const int count = in[v] + in[v + 1] + in[v + dj] + in[v + dj + 1] + in[v + dk] + in[v + dk + 1] +
                          in[v + dk + dj] + in[v + dk + dj + 1];
        mixed[cell_row + i] = count != 0 && count != 8;
      }
    }
  }
  return mixed;
}

}  // namespace

// --- grid ---------------------------------------------------------------------

Eigen::Index ExtractionGrid::vertex_count() const {
  return static_cast<Eigen::Index>(resolution) * resolution * resolution;
}

Eigen::Index ExtractionGrid::cell_count() const {
  const Eigen::Index c = cells_per_axis();
  return c * c * c;
}

Vec3 ExtractionGrid::lattice_point(Eigen::Index v) const {
  const auto [i, j, k] = unravel(v, resolution);
  const double h = cell_size();
  return {kBoxMin + i * h, kBoxMin + j * h, kBoxMin + k * h};
}

Vec3 ExtractionGrid::deformed_point(Eigen::Index v) const {
  return lattice_point(v) + cell_size() * deformation.row(v).transpose();
}

Vec3 ExtractionGrid::cell_center(Eigen::Index c) const {
  const auto [i, j, k] = unravel(c, cells_per_axis());
  const double h = cell_size();
  return {kBoxMin + (i + 0.5) * h, kBoxMin + (j + 0.5) * h, kBoxMin + (k + 0.5) * h};
}

double ExtractionGrid::beta_at(Eigen::Index cell, int local_edge) const {
  const int row = beta_row.size() ? beta_row[cell] : -1;
  return row < 0 ? 1.0 : beta(row, local_edge);
}

ExtractionGrid ExtractionGrid::neutral(int resolution) {
  if (resolution < 2) throw std::invalid_argument("ExtractionGrid: resolution must be >= 2");
  ExtractionGrid g;
  g.resolution = resolution;
  g.sdf = Eigen::VectorXd::Zero(g.vertex_count());
  g.deformation = Eigen::MatrixX3d::Zero(g.vertex_count(), 3);
  g.alpha = Eigen::VectorXd::Ones(g.vertex_count());
  g.beta_row = Eigen::VectorXi::Constant(g.cell_count(), -1);
  return g;
}

ExtractionGrid grid_from_sdf(int resolution, const std::function<double(const Vec3&)>& sdf) {
  ExtractionGrid g = ExtractionGrid::neutral(resolution);
  for (Eigen::Index v = 0; v < g.vertex_count(); ++v) g.sdf[v] = sdf(g.lattice_point(v));
  return g;
}

namespace {

int slab_depth(int resolution) {
  const Eigen::Index slab = static_cast<Eigen::Index>(resolution) * resolution;
  return static_cast<int>(std::max<Eigen::Index>(1, kChunk / slab));
}

// Lattice sdf / deformation / optional alpha, then alpha at crossing
// endpoints and beta at active cells. `record` (may be null) keeps each
// slab's deformation on its tape.
ExtractionGrid fill_grid(const TriplaneField& field, int resolution, const GridOptions& options,
                         const FieldGraph* record, std::vector<GridGraph::Slab>* slabs) {
  ExtractionGrid g = ExtractionGrid::neutral(resolution);
  const Eigen::Index nv = g.vertex_count();
  const Eigen::Index slab = static_cast<Eigen::Index>(resolution) * resolution;
  const int depth = slab_depth(resolution);
  for (int k0 = 0; k0 < resolution; k0 += depth) {
    const int k1 = std::min(resolution, k0 + depth);
    const Eigen::Index start = k0 * slab, count = (k1 - k0) * slab;
    ad::Tape tape;
    FieldGraph graph(tape, field);
    const auto planes = graph.lattice_planes(resolution);
    g.sdf.segment(start, count) = graph.lattice_raw(HeadKind::sdf, planes, resolution, k0, k1).value().col(0);
    if (options.dense_alpha) {
      g.alpha.segment(start, count) =
          graph.activate(HeadKind::weights, graph.lattice_raw(HeadKind::weights, planes, resolution, k0, k1))
              .value()
              .col(0);
    }
    if (record) {
      const ad::Var d = record->activate(
          HeadKind::deformation,
          record->lattice_raw(HeadKind::deformation, record->lattice_planes(resolution), resolution, k0, k1));
      g.deformation.middleRows(start, count) = d.value();
      slabs->push_back({k0, k1, d});
    } else {
      g.deformation.middleRows(start, count) =
          graph.activate(HeadKind::deformation, graph.lattice_raw(HeadKind::deformation, planes, resolution, k0, k1))
              .value();
    }
  }

  std::vector<char> endpoint(options.dense_alpha ? 0 : nv, 0);
  std::vector<Eigen::Index> active;
  const int nc = g.cells_per_axis();
  const std::vector<char> mixed = mixed_cells(g);
  for (int k = 0; k < nc; ++k) {
    for (int j = 0; j < nc; ++j) {
      for (int i = 0; i < nc; ++i) {
        if (!mixed[g.cell_index(i, j, k)]) continue;
        for (int local = 0; local < kCellEdges; ++local) {
          const auto [v, axis] = cell_edge({i, j, k}, local);
          if (options.dense_alpha || !is_crossing(g, v, axis)) continue;
          std::array<int, 3> w = v;
          w[axis] += 1;
          endpoint[g.vertex_index(v[0], v[1], v[2])] = 1;
          endpoint[g.vertex_index(w[0], w[1], w[2])] = 1;
        }
        active.push_back(g.cell_index(i, j, k));
      }
    }
  }
  if (!options.dense_alpha) {
    std::vector<Eigen::Index> ids;
    for (Eigen::Index v = 0; v < nv; ++v) {
      if (endpoint[v]) ids.push_back(v);
    }
    const Eigen::MatrixXd w = query_head(field, HeadKind::weights, lattice_points(g, ids));
    for (std::size_t r = 0; r < ids.size(); ++r) g.alpha[ids[r]] = w(r, 0);
  }
  const Eigen::MatrixXd cw = query_head(field, HeadKind::weights, cell_centers(g, active));
  g.beta.resize(static_cast<Eigen::Index>(active.size()), kCellEdges);
  for (std::size_t r = 0; r < active.size(); ++r) {
    g.beta_row[active[r]] = static_cast<int>(r);
    g.beta.row(r) = cw.row(r).segment(1, kCellEdges);
  }
  return g;
}

}  // namespace

ExtractionGrid build_grid(const TriplaneField& field, int resolution, const GridOptions& options) {
  return fill_grid(field, resolution, options, nullptr, nullptr);
}

GridGraph build_grid(const FieldGraph& graph, int resolution, const GridOptions& options) {
  GridGraph out;
  out.field = &graph.field();
  out.grid = fill_grid(graph.field(), resolution, options, &graph, &out.slabs);
  return out;
}

// --- extraction -----------------------------------------------------------------

Extraction extract(const ExtractionGrid& g) {
  Extraction ex;
  const int n = g.resolution;
  const int nc = g.cells_per_axis();
  const Eigen::Index nv = g.vertex_count();

  std::vector<int> edge_id(static_cast<std::size_t>(nv) * 3, -1);
  std::vector<Vec3> points;
  for (int k = 0; k < n; ++k) {
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) {
        for (int axis = 0; axis < 3; ++axis) {
          const std::array<int, 3> v{i, j, k};
          if (!is_crossing(g, v, axis)) continue;
          std::array<int, 3> w = v;
          w[axis] += 1;
          CrossingEdge e{g.vertex_index(i, j, k), g.vertex_index(w[0], w[1], w[2]), axis};
          const double sa = g.sdf[e.a], sb = g.sdf[e.b];
          const double A = g.alpha[e.a] * sb;
          const double B = g.alpha[e.b] * sa;
          points.push_back((A * g.deformed_point(e.a) - B * g.deformed_point(e.b)) / (A - B));
          edge_id[e.a * 3 + axis] = static_cast<int>(ex.edges.size());
          ex.edges.push_back(e);
        }
      }
    }
  }
  ex.edge_points.resize(static_cast<Eigen::Index>(points.size()), 3);
  for (std::size_t e = 0; e < points.size(); ++e) ex.edge_points.row(e) = points[e].transpose();

  std::vector<int> cell_slot(static_cast<std::size_t>(g.cell_count()), -1);
  const std::vector<char> mixed = mixed_cells(g);
  ex.cell_offsets.push_back(0);
  for (int k = 0; k < nc; ++k) {
    for (int j = 0; j < nc; ++j) {
      for (int i = 0; i < nc; ++i) {
        if (!mixed[g.cell_index(i, j, k)]) continue;
        const std::size_t before = ex.cell_edges.size();
        for (int local = 0; local < kCellEdges; ++local) {
          const auto [v, axis] = cell_edge({i, j, k}, local);
          const int id = edge_id[g.vertex_index(v[0], v[1], v[2]) * 3 + axis];
          if (id < 0) continue;
          ex.cell_edges.push_back(id);
          ex.cell_local.push_back(local);
        }
        if (ex.cell_edges.size() == before) continue;
        const Eigen::Index cell = g.cell_index(i, j, k);
        cell_slot[cell] = static_cast<int>(ex.active_cells.size());
        ex.active_cells.push_back(cell);
        ex.cell_offsets.push_back(static_cast<int>(ex.cell_edges.size()));
      }
    }
  }

  const auto slots = static_cast<Eigen::Index>(ex.active_cells.size());
  ex.dual_points.resize(slots, 3);
  for (Eigen::Index c = 0; c < slots; ++c) {
    Vec3 acc = Vec3::Zero();
    double wsum = 0.0;
    for (int q = ex.cell_offsets[c]; q < ex.cell_offsets[c + 1]; ++q) {
      const double beta = g.beta_at(ex.active_cells[c], ex.cell_local[q]);
      acc += beta * ex.edge_points.row(ex.cell_edges[q]).transpose();
      wsum += beta;
    }
    ex.dual_points.row(c) = (acc / wsum).transpose();
  }

  // One quad per interior crossing edge, split along its first diagonal.
  std::vector<Eigen::Vector3i> tris;
  for (const CrossingEdge& e : ex.edges) {
    const auto lo = unravel(e.a, n);
    const int b = (e.axis + 1) % 3;
    const int c = (e.axis + 2) % 3;
    if (lo[b] < 1 || lo[b] > nc - 1 || lo[c] < 1 || lo[c] > nc - 1) continue;
    static constexpr std::array<std::array<int, 2>, 4> kRing{{{-1, -1}, {0, -1}, {0, 0}, {-1, 0}}};
    std::array<int, 4> quad{};
    for (int q = 0; q < 4; ++q) {
      std::array<int, 3> cell = lo;
      cell[b] += kRing[q][0];
      cell[c] += kRing[q][1];
      quad[q] = cell_slot[g.cell_index(cell[0], cell[1], cell[2])];
    }
    if (!inside(g.sdf[e.a])) std::swap(quad[1], quad[3]);
    tris.emplace_back(quad[0], quad[1], quad[2]);
    tris.emplace_back(quad[0], quad[2], quad[3]);
  }

  // Drop degenerate triangles and compact to referenced dual vertices.
  std::vector<int> remap(static_cast<std::size_t>(slots), -1);
  std::vector<Eigen::Vector3i> kept;
  for (const auto& t : tris) {
    const double area = triangle_area<double>(ex.dual_points.row(t[0]).transpose(),
                                              ex.dual_points.row(t[1]).transpose(),
                                              ex.dual_points.row(t[2]).transpose());
    if (area <= kMinTriangleArea) continue;
    Eigen::Vector3i mapped;
    for (int q = 0; q < 3; ++q) {
      int& m = remap[t[q]];
      if (m < 0) {
        m = static_cast<int>(ex.vertex_slot.size());
        ex.vertex_slot.push_back(t[q]);
      }
      mapped[q] = m;
    }
    kept.push_back(mapped);
  }
  ex.mesh.vertices.resize(static_cast<Eigen::Index>(ex.vertex_slot.size()), 3);
  for (std::size_t m = 0; m < ex.vertex_slot.size(); ++m) ex.mesh.vertices.row(m) = ex.dual_points.row(ex.vertex_slot[m]);
  ex.mesh.triangles.resize(static_cast<Eigen::Index>(kept.size()), 3);
  for (std::size_t t = 0; t < kept.size(); ++t) ex.mesh.triangles.row(t) = kept[t].transpose();
  return ex;
}

Mesh extract_mesh(const ExtractionGrid& grid) { return extract(grid).mesh; }

// --- gradients --------------------------------------------------------------------

GridGradient GridGradient::zeros(const ExtractionGrid& grid) {
  GridGradient g;
  g.sdf = Eigen::VectorXd::Zero(grid.vertex_count());
  g.deformation = Eigen::MatrixX3d::Zero(grid.vertex_count(), 3);
  g.alpha = Eigen::VectorXd::Zero(grid.vertex_count());
  g.beta = BetaMatrix::Zero(grid.beta.rows(), kCellEdges);
  return g;
}

void backprop_extraction(const ExtractionGrid& g, const Extraction& ex, const Eigen::MatrixX3d& vertex_grad,
                         GridGradient& out) {
  if (vertex_grad.rows() != ex.mesh.vertex_count()) {
    throw std::invalid_argument("backprop_extraction: gradient rows != mesh vertices");
  }
  Eigen::MatrixX3d g_edge = Eigen::MatrixX3d::Zero(ex.edge_points.rows(), 3);
  for (std::size_t m = 0; m < ex.vertex_slot.size(); ++m) {
    const int slot = ex.vertex_slot[m];
    const Eigen::Index cell = ex.active_cells[slot];
    const int row = g.beta_row[cell];
    const Eigen::RowVector3d gv = vertex_grad.row(m);
    const Eigen::RowVector3d v = ex.dual_points.row(slot);
    double wsum = 0.0;
    for (int q = ex.cell_offsets[slot]; q < ex.cell_offsets[slot + 1]; ++q) wsum += g.beta_at(cell, ex.cell_local[q]);
    for (int q = ex.cell_offsets[slot]; q < ex.cell_offsets[slot + 1]; ++q) {
      const int e = ex.cell_edges[q];
      const double beta = g.beta_at(cell, ex.cell_local[q]);
      g_edge.row(e) += gv * (beta / wsum);
      if (row >= 0) out.beta(row, ex.cell_local[q]) += gv.dot(ex.edge_points.row(e) - v) / wsum;
    }
  }
  const double h = g.cell_size();
  for (std::size_t id = 0; id < ex.edges.size(); ++id) {
    const Eigen::RowVector3d gu = g_edge.row(id);
    if (gu.isZero(0.0)) continue;
    const CrossingEdge& e = ex.edges[id];
    const double sa = g.sdf[e.a], sb = g.sdf[e.b];
    const double A = g.alpha[e.a] * sb;
    const double B = g.alpha[e.b] * sa;
    const double D = A - B;
    const Eigen::RowVector3d pa = g.deformed_point(e.a).transpose();
    const Eigen::RowVector3d pb = g.deformed_point(e.b).transpose();
    const double gA = gu.dot(pb - pa) * B / (D * D);
    const double gB = gu.dot(pa - pb) * A / (D * D);
    out.alpha[e.a] += gA * sb;
    out.sdf[e.b] += gA * g.alpha[e.a];
    out.alpha[e.b] += gB * sa;
    out.sdf[e.a] += gB * g.alpha[e.b];
    out.deformation.row(e.a) += gu * (A / D) * h;
    out.deformation.row(e.b) -= gu * (B / D) * h;
  }
}

RegTerms reg_terms(const ExtractionGrid& g, const Extraction& ex) {
  RegTerms r;
  if (!ex.edges.empty()) {
    double acc = 0.0;
    for (const auto& e : ex.edges) acc += (g.alpha[e.a] - 1.0) * (g.alpha[e.a] - 1.0) + (g.alpha[e.b] - 1.0) * (g.alpha[e.b] - 1.0);
    r.alpha = acc / static_cast<double>(ex.edges.size());
  }
  if (!ex.active_cells.empty()) {
    double acc = 0.0;
    for (std::size_t c = 0; c < ex.active_cells.size(); ++c) {
      for (int q = ex.cell_offsets[c]; q < ex.cell_offsets[c + 1]; ++q) {
        const double d = g.beta_at(ex.active_cells[c], ex.cell_local[q]) - 1.0;
        acc += d * d;
      }
    }
    r.beta = acc / static_cast<double>(ex.active_cells.size());
  }
  r.deformation = g.deformation.squaredNorm() / static_cast<double>(g.vertex_count());
  return r;
}

double reg_loss(const ExtractionGrid& grid, const Extraction& extraction) {
  return reg_terms(grid, extraction).total();
}

void reg_loss_gradient(const ExtractionGrid& g, const Extraction& ex, double weight, GridGradient& out) {
  if (!ex.edges.empty()) {
    const double s = 2.0 * weight / static_cast<double>(ex.edges.size());
    for (const auto& e : ex.edges) {
      out.alpha[e.a] += s * (g.alpha[e.a] - 1.0);
      out.alpha[e.b] += s * (g.alpha[e.b] - 1.0);
    }
  }
  if (!ex.active_cells.empty()) {
    const double s = 2.0 * weight / static_cast<double>(ex.active_cells.size());
    for (std::size_t c = 0; c < ex.active_cells.size(); ++c) {
      const int row = g.beta_row[ex.active_cells[c]];
      if (row < 0) continue;
      for (int q = ex.cell_offsets[c]; q < ex.cell_offsets[c + 1]; ++q) {
        out.beta(row, ex.cell_local[q]) += s * (g.beta(row, ex.cell_local[q]) - 1.0);
      }
    }
  }
  out.deformation += (2.0 * weight / static_cast<double>(g.vertex_count())) * g.deformation;
}

namespace {

// sdf and alpha at touched vertices, beta at touched cells.
void backprop_sparse(const TriplaneField& field, const ExtractionGrid& grid, const GridGradient& grad,
                     ad::ParamGrad& out) {
  std::vector<Eigen::Index> vertices;
  for (Eigen::Index v = 0; v < grid.vertex_count(); ++v) {
    if (grad.sdf[v] != 0.0 || grad.alpha[v] != 0.0) vertices.push_back(v);
  }
  for (std::size_t start = 0; start < vertices.size(); start += kChunk) {
    const std::size_t count = std::min<std::size_t>(kChunk, vertices.size() - start);
    const std::vector<Eigen::Index> ids(vertices.begin() + start, vertices.begin() + start + count);
    const auto n = static_cast<Eigen::Index>(count);
    Eigen::MatrixXd g_sdf(n, 1), g_w = Eigen::MatrixXd::Zero(n, 1 + kCellEdges);
    for (Eigen::Index r = 0; r < n; ++r) {
      g_sdf(r, 0) = grad.sdf[ids[r]];
      g_w(r, 0) = grad.alpha[ids[r]];
    }
    ad::Tape tape;
    FieldGraph graph(tape, field);
    const ad::Var feat = graph.features(tape.constant(lattice_points(grid, ids)));
    std::vector<std::pair<ad::Var, ad::Tensor>> seeds;
    if (!g_sdf.isZero(0.0)) seeds.emplace_back(graph.sdf(feat), g_sdf);
    if (!g_w.isZero(0.0)) seeds.emplace_back(graph.weights(feat), g_w);
    tape.backward(seeds, out);
  }

  std::vector<Eigen::Index> cells;
  std::vector<int> rows;
  for (Eigen::Index c = 0; c < grid.cell_count(); ++c) {
    const int row = grid.beta_row[c];
    if (row >= 0 && !grad.beta.row(row).isZero(0.0)) {
      cells.push_back(c);
      rows.push_back(row);
    }
  }
  for (std::size_t start = 0; start < cells.size(); start += kChunk) {
    const std::size_t count = std::min<std::size_t>(kChunk, cells.size() - start);
    const std::vector<Eigen::Index> ids(cells.begin() + start, cells.begin() + start + count);
    const auto n = static_cast<Eigen::Index>(count);
    Eigen::MatrixXd g_w = Eigen::MatrixXd::Zero(n, 1 + kCellEdges);
    for (Eigen::Index r = 0; r < n; ++r) g_w.row(r).tail(kCellEdges) = grad.beta.row(rows[start + r]);
    ad::Tape tape;
    FieldGraph graph(tape, field);
    const ad::Var feat = graph.features(tape.constant(cell_centers(grid, ids)));
    const std::pair<ad::Var, ad::Tensor> seed{graph.weights(feat), g_w};
    tape.backward(std::span(&seed, 1), out);
  }
}

}  // namespace

void backprop_grid(const TriplaneField& field, const ExtractionGrid& grid, const GridGradient& grad,
                   ad::ParamGrad& out) {
  const int n = grid.resolution;
  const Eigen::Index slab = static_cast<Eigen::Index>(n) * n;
  const int depth = slab_depth(n);
  for (int k0 = 0; k0 < n; k0 += depth) {
    const int k1 = std::min(n, k0 + depth);
    const Eigen::MatrixXd g_def = grad.deformation.middleRows(k0 * slab, (k1 - k0) * slab);
    if (g_def.isZero(0.0)) continue;
    ad::Tape tape;
    FieldGraph graph(tape, field);
    const std::pair<ad::Var, ad::Tensor> seed{
        graph.activate(HeadKind::deformation,
                       graph.lattice_raw(HeadKind::deformation, graph.lattice_planes(n), n, k0, k1)),
        g_def};
    tape.backward(std::span(&seed, 1), out);
  }
  backprop_sparse(field, grid, grad, out);
}

void backprop_grid(const GridGraph& graph, const GridGradient& grad, ad::ParamGrad& out) {
  const Eigen::Index slab = static_cast<Eigen::Index>(graph.grid.resolution) * graph.grid.resolution;
  std::vector<std::pair<ad::Var, ad::Tensor>> seeds;
  for (const auto& s : graph.slabs) {
    Eigen::MatrixXd g_def = grad.deformation.middleRows(s.k0 * slab, (s.k1 - s.k0) * slab);
    if (!g_def.isZero(0.0)) seeds.emplace_back(s.deformation, std::move(g_def));
  }
  if (!seeds.empty()) graph.slabs.front().deformation.tape().backward(seeds, out);
  backprop_sparse(*graph.field, graph.grid, grad, out);
}

}  // namespace smesh
