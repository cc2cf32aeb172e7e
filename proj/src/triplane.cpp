#include "smesh/triplane.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace smesh {

int head_output_dim(HeadKind kind) {
  switch (kind) {
    case HeadKind::density: return 1;
    case HeadKind::color: return 3;
    case HeadKind::sdf: return 1;
    case HeadKind::deformation: return 3;
    case HeadKind::weights: return 1 + kCellEdges;
  }
  return 0;
}

const char* head_name(HeadKind kind) {
  switch (kind) {
    case HeadKind::density: return "density";
    case HeadKind::color: return "color";
    case HeadKind::sdf: return "sdf";
    case HeadKind::deformation: return "deformation";
    case HeadKind::weights: return "weights";
  }
  return "?";
}

std::vector<int> MlpHead::widths() const {
  std::vector<int> w;
  if (layers.empty()) return w;
  w.push_back(in_dim());
  for (const auto& l : layers) w.push_back(static_cast<int>(l.weight.cols()));
  return w;
}

std::vector<Eigen::MatrixXd*> TriplaneField::parameters() {
  std::vector<Eigen::MatrixXd*> out;
  for (auto& p : planes) out.push_back(&p);
  for (auto& h : heads) {
    for (auto& l : h.layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
  }
  return out;
}

std::vector<const Eigen::MatrixXd*> TriplaneField::parameters() const {
  std::vector<const Eigen::MatrixXd*> out;
  for (const auto& p : planes) out.push_back(&p);
  for (const auto& h : heads) {
    for (const auto& l : h.layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
  }
  return out;
}

std::size_t TriplaneField::scalar_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += static_cast<std::size_t>(p->size());
  return n;
}

namespace {

Eigen::MatrixXd uniform(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  }
  return m;
}

MlpHead make_head(std::mt19937_64& rng, int in, int hidden, int layers, int out) {
  MlpHead head;
  int fan_in = in;
  for (int l = 0; l <= layers; ++l) {
    const int fan_out = (l == layers) ? out : hidden;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    head.layers.push_back({uniform(rng, fan_in, fan_out, bound), uniform(rng, 1, fan_out, bound)});
    fan_in = fan_out;
  }
  return head;
}

}  // namespace

TriplaneField make_field(const FieldConfig& config) {
  if (config.resolution < 2 || config.channels < 1 || config.hidden_width < 1 || config.hidden_layers < 0 ||
      config.aux_hidden_width < 1) {
    throw std::invalid_argument("make_field: invalid field configuration");
  }
  std::mt19937_64 rng(config.seed);
  TriplaneField f;
  f.resolution = config.resolution;
  f.channels = config.channels;
  const Eigen::Index nodes = static_cast<Eigen::Index>(config.resolution) * config.resolution;
  for (auto& p : f.planes) p = uniform(rng, nodes, config.channels, config.plane_init);
  for (int k = 0; k < kHeadCount; ++k) {
    const auto kind = static_cast<HeadKind>(k);
    const bool aux = kind == HeadKind::deformation || kind == HeadKind::weights;
    f.heads[k] = make_head(rng, config.channels, aux ? config.aux_hidden_width : config.hidden_width,
                           config.hidden_layers, head_output_dim(kind));
  }
  auto& deform = f.head(HeadKind::deformation).layers.back();
  deform.weight.setZero();
  deform.bias.setZero();
  auto& weights = f.head(HeadKind::weights).layers.back();
  weights.weight.setZero();
  weights.bias.setConstant(std::log(std::expm1(1.0 - kWeightEpsilon)));
  return f;
}

// --- differentiable evaluation ----------------------------------------------

namespace {

struct PlaneTap {
  int base;         // row of node (u0, v0)
  double fu, fv;    // fractional offsets
  bool inside_u, inside_v;
};

// Plane p samples coordinates (axis_u[p], axis_v[p]).
constexpr std::array<int, 3> kAxisU{0, 0, 1};
constexpr std::array<int, 3> kAxisV{1, 2, 2};

void locate(double x, int resolution, int& i0, double& frac, bool& inside) {
  inside = x > kBoxMin && x < kBoxMax;
  const double xc = std::clamp(x, kBoxMin, kBoxMax);
  const double g = (xc - kBoxMin) / (kBoxMax - kBoxMin) * (resolution - 1);
  i0 = std::clamp(static_cast<int>(std::floor(g)), 0, resolution - 2);
  frac = g - i0;
}

ad::Var triplane_op(const std::array<ad::Var, 3>& planes, const ad::Var& points, int resolution) {
  const Eigen::MatrixXd& pts = points.value();
  if (pts.cols() != 3) throw std::invalid_argument("triplane: points must be n x 3");
  const Eigen::Index n = pts.rows();
  const Eigen::Index channels = planes[0].cols();
  const int r = resolution;

  std::vector<PlaneTap> taps(static_cast<std::size_t>(n) * 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int p = 0; p < 3; ++p) {
      int u0, v0;
      PlaneTap& t = taps[i * 3 + p];
      locate(pts(i, kAxisU[p]), r, u0, t.fu, t.inside_u);
      locate(pts(i, kAxisV[p]), r, v0, t.fv, t.inside_v);
      t.base = v0 * r + u0;
    }
  }

  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, channels);
  for (int p = 0; p < 3; ++p) {
    const Eigen::MatrixXd& plane = planes[p].value();
    for (Eigen::Index c = 0; c < channels; ++c) {
      const double* col = plane.col(c).data();
      double* dst = out.col(c).data();
      for (Eigen::Index i = 0; i < n; ++i) {
        const PlaneTap& t = taps[i * 3 + p];
        const double a = col[t.base], b = col[t.base + 1], cc = col[t.base + r], d = col[t.base + r + 1];
        dst[i] += (1.0 - t.fv) * ((1.0 - t.fu) * a + t.fu * b) + t.fv * ((1.0 - t.fu) * cc + t.fu * d);
      }
    }
  }

  const double dgdx = (r - 1) / (kBoxMax - kBoxMin);
  return points.tape().record(
      std::move(out), {planes[0], planes[1], planes[2], points},
      [taps = std::move(taps), n, channels, r, dgdx](const Eigen::MatrixXd& g, ad::GradAccess& io) {
        for (int p = 0; p < 3; ++p) {
          if (!io.wants(p)) continue;
          Eigen::MatrixXd& gp = io.grad(p);
          for (Eigen::Index c = 0; c < channels; ++c) {
            double* dst = gp.col(c).data();
            const double* src = g.col(c).data();
            for (Eigen::Index i = 0; i < n; ++i) {
              const PlaneTap& t = taps[i * 3 + p];
              const double gi = src[i];
              dst[t.base] += gi * (1.0 - t.fu) * (1.0 - t.fv);
              dst[t.base + 1] += gi * t.fu * (1.0 - t.fv);
              dst[t.base + r] += gi * (1.0 - t.fu) * t.fv;
              dst[t.base + r + 1] += gi * t.fu * t.fv;
            }
          }
        }
        if (!io.wants(3)) return;
        Eigen::MatrixXd& gx = io.grad(3);
        for (int p = 0; p < 3; ++p) {
          const Eigen::MatrixXd& plane = io.input(p);
          for (Eigen::Index c = 0; c < channels; ++c) {
            const double* col = plane.col(c).data();
            const double* src = g.col(c).data();
            for (Eigen::Index i = 0; i < n; ++i) {
              const PlaneTap& t = taps[i * 3 + p];
              const double a = col[t.base], b = col[t.base + 1], cc = col[t.base + r], d = col[t.base + r + 1];
              if (t.inside_u) gx(i, kAxisU[p]) += src[i] * dgdx * ((1.0 - t.fv) * (b - a) + t.fv * (d - cc));
              if (t.inside_v) gx(i, kAxisV[p]) += src[i] * dgdx * ((1.0 - t.fu) * (cc - a) + t.fu * (d - b));
            }
          }
        }
      });
}

// Interpolation matrix from the plane's node axis to n lattice coordinates.
Eigen::MatrixXd lattice_interp(int n, int resolution) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, resolution);
  const double h = (kBoxMax - kBoxMin) / (n - 1);
  for (int i = 0; i < n; ++i) {
    int i0;
    double frac;
    bool inside;
    locate(kBoxMin + i * h, resolution, i0, frac, inside);
    m(i, i0) += 1.0 - frac;
    m(i, i0 + 1) += frac;
  }
  return m;
}

// Samples one plane at the n x n lattice: per channel L * P * L^T.
ad::Var plane_lattice_op(const ad::Var& plane, int n, int resolution) {
  const Eigen::MatrixXd l = lattice_interp(n, resolution);
  const Eigen::Index channels = plane.cols();
  const Eigen::Index r = resolution;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n) * n, channels);
  for (Eigen::Index c = 0; c < channels; ++c) {
    Eigen::Map<const Eigen::MatrixXd> p(plane.value().col(c).data(), r, r);
    Eigen::Map<Eigen::MatrixXd>(out.col(c).data(), n, n).noalias() = l * p * l.transpose();
  }
  return plane.tape().record(std::move(out), {plane}, [l, channels, r, n](const Eigen::MatrixXd& g, ad::GradAccess& io) {
    Eigen::MatrixXd& gp = io.grad(0);
    for (Eigen::Index c = 0; c < channels; ++c) {
      Eigen::Map<const Eigen::MatrixXd> gc(g.col(c).data(), n, n);
      Eigen::Map<Eigen::MatrixXd>(gp.col(c).data(), r, r).noalias() += l.transpose() * gc * l;
    }
  });
}

// out[((k - k0) * n + j) * n + i] = xy[j*n+i] + xz[k*n+i] + yz[k*n+j]
ad::Var lattice_sum_op(const std::array<ad::Var, 3>& p, int n, int k0, int k1) {
  const Eigen::Index cols = p[0].cols();
  const Eigen::Index nn = static_cast<Eigen::Index>(n) * n;
  Eigen::MatrixXd out(nn * (k1 - k0), cols);
  const Eigen::MatrixXd& a = p[0].value();
  const Eigen::MatrixXd& b = p[1].value();
  const Eigen::MatrixXd& c = p[2].value();
  for (Eigen::Index col = 0; col < cols; ++col) {
    for (int k = k0; k < k1; ++k) {
      for (int j = 0; j < n; ++j) {
        double* dst = out.col(col).data() + ((k - k0) * n + j) * static_cast<Eigen::Index>(n);
        const double* ai = a.col(col).data() + static_cast<Eigen::Index>(j) * n;
        const double* bi = b.col(col).data() + static_cast<Eigen::Index>(k) * n;
        const double cjk = c(static_cast<Eigen::Index>(k) * n + j, col);
        for (int i = 0; i < n; ++i) dst[i] = ai[i] + bi[i] + cjk;
      }
    }
  }
  return p[0].tape().record(std::move(out), {p[0], p[1], p[2]},
                            [n, k0, k1, cols](const Eigen::MatrixXd& g, ad::GradAccess& io) {
                              const bool wa = io.wants(0), wb = io.wants(1), wc = io.wants(2);
                              for (Eigen::Index col = 0; col < cols; ++col) {
                                for (int k = k0; k < k1; ++k) {
                                  for (int j = 0; j < n; ++j) {
                                    const Eigen::Index row = ((k - k0) * n + j) * static_cast<Eigen::Index>(n);
                                    const auto src = g.col(col).segment(row, n);
                                    if (wa) io.grad(0).col(col).segment(static_cast<Eigen::Index>(j) * n, n) += src;
                                    if (wb) io.grad(1).col(col).segment(static_cast<Eigen::Index>(k) * n, n) += src;
                                    if (wc) io.grad(2)(static_cast<Eigen::Index>(k) * n + j, col) += src.sum();
                                  }
                                }
                              }
                            });
}

}  // namespace

FieldGraph::FieldGraph(ad::Tape& tape, const TriplaneField& field) : tape_(&tape), field_(&field) {
  const auto params = field.parameters();
  params_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    params_.push_back(tape.parameter(static_cast<ad::ParamId>(i), *params[i]));
  }
  int offset = 3;
  for (int k = 0; k < kHeadCount; ++k) {
    head_offset_[k] = offset;
    offset += 2 * static_cast<int>(field.heads[k].layers.size());
  }
}

ad::Var FieldGraph::features(const ad::Var& points) const {
  return triplane_op({params_[0], params_[1], params_[2]}, points, field_->resolution);
}

ad::Var FieldGraph::trunk(HeadKind kind, const ad::Var& features) const {
  const auto& head = field_->head(kind);
  const int base = head_offset_[static_cast<int>(kind)];
  ad::Var h = features;
  for (std::size_t l = 0; l + 1 < head.layers.size(); ++l) {
    h = ad::softplus(ad::add_row(ad::matmul(h, params_[base + 2 * l]), params_[base + 2 * l + 1]));
  }
  return h;
}

ad::Var FieldGraph::raw(HeadKind kind, const ad::Var& features) const {
  const auto& head = field_->head(kind);
  const int last = head_offset_[static_cast<int>(kind)] + 2 * (static_cast<int>(head.layers.size()) - 1);
  return ad::add_row(ad::matmul(trunk(kind, features), params_[last]), params_[last + 1]);
}

ad::Var FieldGraph::activate(HeadKind kind, const ad::Var& raw) const {
  switch (kind) {
    case HeadKind::density: return ad::softplus(raw);
    case HeadKind::color: return ad::sigmoid(raw);
    case HeadKind::sdf: return raw;
    case HeadKind::deformation: return 0.5 * ad::tanh(raw);
    case HeadKind::weights: return ad::softplus(raw) + kWeightEpsilon;
  }
  return raw;
}

std::array<ad::Var, 3> FieldGraph::lattice_planes(int n) const {
  if (n < 2) throw std::invalid_argument("lattice_planes: need at least 2 nodes per axis");
  return {plane_lattice_op(params_[0], n, field_->resolution), plane_lattice_op(params_[1], n, field_->resolution),
          plane_lattice_op(params_[2], n, field_->resolution)};
}

ad::Var FieldGraph::lattice_raw(HeadKind kind, const std::array<ad::Var, 3>& planes, int n, int k0, int k1) const {
  if (k0 < 0 || k1 > n || k0 >= k1) throw std::invalid_argument("lattice_raw: bad slab range");
  const auto& head = field_->head(kind);
  const int base = head_offset_[static_cast<int>(kind)];
  const int layers = static_cast<int>(head.layers.size());
  const ad::Var w0 = params_[base];
  ad::Var h = ad::add_row(
      lattice_sum_op({ad::matmul(planes[0], w0), ad::matmul(planes[1], w0), ad::matmul(planes[2], w0)}, n, k0, k1),
      params_[base + 1]);
  for (int l = 1; l < layers; ++l) {
    h = ad::add_row(ad::matmul(ad::softplus(h), params_[base + 2 * l]), params_[base + 2 * l + 1]);
  }
  return h;
}

ad::Var FieldGraph::density(const ad::Var& f) const { return activate(HeadKind::density, raw(HeadKind::density, f)); }
ad::Var FieldGraph::color(const ad::Var& f) const { return activate(HeadKind::color, raw(HeadKind::color, f)); }
ad::Var FieldGraph::sdf(const ad::Var& f) const { return raw(HeadKind::sdf, f); }
ad::Var FieldGraph::deformation(const ad::Var& f) const {
  return activate(HeadKind::deformation, raw(HeadKind::deformation, f));
}
ad::Var FieldGraph::weights(const ad::Var& f) const { return activate(HeadKind::weights, raw(HeadKind::weights, f)); }

// --- gradient-free queries ----------------------------------------------------

namespace {

constexpr Eigen::Index kChunk = 16384;

template <typename Fn>
Eigen::MatrixXd chunked(const Eigen::MatrixX3d& points, Eigen::Index out_cols, Fn&& fn) {
  Eigen::MatrixXd out(points.rows(), out_cols);
  for (Eigen::Index start = 0; start < points.rows(); start += kChunk) {
    const Eigen::Index count = std::min(kChunk, points.rows() - start);
    ad::Tape tape;
    out.middleRows(start, count) = fn(tape, tape.constant(points.middleRows(start, count)));
  }
  return out;
}

}  // namespace

Eigen::MatrixXd sample_triplane(const TriplaneField& field, const Eigen::MatrixX3d& points) {
  return chunked(points, field.channels, [&](ad::Tape& tape, const ad::Var& pts) {
    return FieldGraph(tape, field).features(pts).value();
  });
}

Eigen::VectorXd sample_triplane(const TriplaneField& field, const Vec3& point) {
  return sample_triplane(field, Eigen::MatrixX3d(point.transpose())).row(0).transpose();
}

Eigen::MatrixXd query_head(const TriplaneField& field, HeadKind kind, const Eigen::MatrixX3d& points, bool raw) {
  return chunked(points, head_output_dim(kind), [&](ad::Tape& tape, const ad::Var& pts) {
    FieldGraph graph(tape, field);
    const ad::Var r = graph.raw(kind, graph.features(pts));
    return raw ? r.value() : graph.activate(kind, r).value();
  });
}

namespace {

Eigen::VectorXd query_one(const TriplaneField& field, HeadKind kind, const Vec3& x, bool raw = false) {
  return query_head(field, kind, Eigen::MatrixX3d(x.transpose()), raw).row(0).transpose();
}

}  // namespace

double query_density(const TriplaneField& field, const Vec3& x) { return query_one(field, HeadKind::density, x)[0]; }
double query_density_raw(const TriplaneField& field, const Vec3& x) {
  return query_one(field, HeadKind::density, x, true)[0];
}
Vec3 query_color(const TriplaneField& field, const Vec3& x) { return query_one(field, HeadKind::color, x); }
double query_sdf(const TriplaneField& field, const Vec3& x) { return query_one(field, HeadKind::sdf, x)[0]; }
Vec3 query_deformation(const TriplaneField& field, const Vec3& x) {
  return query_one(field, HeadKind::deformation, x);
}
Eigen::VectorXd query_weights(const TriplaneField& field, const Vec3& x) {
  return query_one(field, HeadKind::weights, x);
}

TriplaneField init_sdf_from_density(const TriplaneField& field, double tau) {
  const MlpHead& density = field.head(HeadKind::density);
  const MlpHead& sdf = field.head(HeadKind::sdf);
  if (density.widths() != sdf.widths()) {
    throw std::invalid_argument("init_sdf_from_density: density and sdf heads differ in architecture");
  }
  TriplaneField out = field;
  MlpHead& target = out.head(HeadKind::sdf);
  target = density;
  Linear& last = target.layers.back();
  last.weight = -density.layers.back().weight;
  last.bias = (tau - density.layers.back().bias.array()).matrix();
  return out;
}

// --- checkpoint ---------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'T', 'P', 'F', '1'};

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& data) : data_(data) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > data_.size()) {
      throw std::runtime_error("checkpoint: truncated at byte " + std::to_string(pos_));
    }
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, data_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, bytes, sizeof(T));
    return v;
  }

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == data_.size(); }

 private:
  const std::string& data_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_field(const TriplaneField& field) {
  std::string out(kMagic, 4);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(field.resolution));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(field.channels));
  put_le<std::uint32_t>(out, kHeadCount);
  for (const auto& head : field.heads) {
    const auto widths = head.widths();
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(widths.size()));
    for (int w : widths) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(w));
  }
  for (const auto* p : field.parameters()) {
    for (Eigen::Index i = 0; i < p->rows(); ++i) {
      for (Eigen::Index j = 0; j < p->cols(); ++j) put_le<double>(out, (*p)(i, j));
    }
  }
  return out;
}

TriplaneField deserialize_field(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, kMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic at byte 0");
  }
  Reader in(bytes);
  for (int i = 0; i < 4; ++i) in.get<char>();
  TriplaneField f;
  f.resolution = static_cast<int>(in.get<std::uint32_t>());
  f.channels = static_cast<int>(in.get<std::uint32_t>());
  const auto head_count = in.get<std::uint32_t>();
  if (head_count != kHeadCount) {
    throw std::runtime_error("checkpoint: unexpected head count at byte " + std::to_string(in.pos() - 4));
  }
  if (f.resolution < 2 || f.channels < 1) throw std::runtime_error("checkpoint: invalid plane shape");
  for (auto& p : f.planes) p.resize(static_cast<Eigen::Index>(f.resolution) * f.resolution, f.channels);
  for (auto& head : f.heads) {
    const auto count = in.get<std::uint32_t>();
    if (count < 2 || count > 64) {
      throw std::runtime_error("checkpoint: bad layer count at byte " + std::to_string(in.pos() - 4));
    }
    std::vector<int> widths(count);
    for (auto& w : widths) w = static_cast<int>(in.get<std::uint32_t>());
    if (widths.front() != f.channels) throw std::runtime_error("checkpoint: head input width != channels");
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      head.layers.push_back({Eigen::MatrixXd(widths[l], widths[l + 1]), Eigen::MatrixXd(1, widths[l + 1])});
    }
  }
  for (int k = 0; k < kHeadCount; ++k) {
    if (f.heads[k].out_dim() != head_output_dim(static_cast<HeadKind>(k))) {
      throw std::runtime_error(std::string("checkpoint: wrong output width for head ") +
                               head_name(static_cast<HeadKind>(k)));
    }
  }
  for (auto* p : f.parameters()) {
    for (Eigen::Index i = 0; i < p->rows(); ++i) {
      for (Eigen::Index j = 0; j < p->cols(); ++j) (*p)(i, j) = in.get<double>();
    }
  }
  if (!in.done()) throw std::runtime_error("checkpoint: trailing bytes at " + std::to_string(in.pos()));
  return f;
}

void save_checkpoint(const TriplaneField& field, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  const std::string bytes = serialize_field(field);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

TriplaneField load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_field(ss.str());
}

}  // namespace smesh
