#include "smesh/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace smesh::ad {

// --- Var -------------------------------------------------------------------

Tape& Var::tape() const {
  if (!tape_) throw std::logic_error("ad::Var: unbound variable");
  return *tape_;
}

const Tensor& Var::value() const { return tape().value(id_); }

double Var::scalar() const {
  const Tensor& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw std::logic_error("ad::Var::scalar: node is not 1x1");
  return v(0, 0);
}

bool Var::requires_grad() const { return tape().requires_grad(id_); }

// --- ParamGrad -------------------------------------------------------------

Tensor& ParamGrad::slot(ParamId id, Eigen::Index rows, Eigen::Index cols) {
  Tensor& g = grads_.at(id);
  if (g.size() == 0) g = Tensor::Zero(rows, cols);
  return g;
}

void ParamGrad::accumulate(ParamId id, const Tensor& g) {
  Tensor& dst = grads_.at(id);
  if (dst.size() == 0) {
    dst = g;
  } else {
    dst += g;
  }
}

ParamGrad& ParamGrad::operator+=(const ParamGrad& other) {
  if (other.size() > size()) resize(other.size());
  for (std::size_t i = 0; i < other.size(); ++i) {
    if (other.touched(static_cast<ParamId>(i))) accumulate(static_cast<ParamId>(i), other.grads_[i]);
  }
  return *this;
}

ParamGrad& ParamGrad::operator*=(double s) {
  for (auto& g : grads_) g *= s;
  return *this;
}

bool ParamGrad::all_finite() const {
  return std::all_of(grads_.begin(), grads_.end(), [](const Tensor& g) { return g.allFinite(); });
}

double ParamGrad::max_abs() const {
  double m = 0.0;
  for (const auto& g : grads_) {
    if (g.size() > 0) m = std::max(m, g.cwiseAbs().maxCoeff());
  }
  return m;
}

// --- GradAccess ------------------------------------------------------------

bool GradAccess::wants(std::size_t k) const { return tape_.nodes_[inputs_.at(k)].requires_grad; }

const Tensor& GradAccess::input(std::size_t k) const { return tape_.nodes_[inputs_.at(k)].get(); }

const Tensor& GradAccess::output() const { return tape_.nodes_[node_].get(); }

Tensor& GradAccess::grad(std::size_t k) { return tape_.grad_buffer(inputs_.at(k)); }

// --- Tape ------------------------------------------------------------------

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::parameter(ParamId id, const Tensor& storage) {
  Node n;
  n.external = &storage;
  n.requires_grad = true;
  n.param = id;
  return push(std::move(n));
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (const Var& in : inputs) {
    if (in.tape_ != this) throw std::logic_error("ad::Tape::record: input from another tape");
    n.inputs.push_back(in.id_);
    n.requires_grad = n.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

const Tensor& Tape::value(int id) const { return nodes_.at(id).get(); }

Tensor& Tape::grad_buffer(int id) {
  Node& n = nodes_.at(id);
  if (n.grad.size() == 0) n.grad = Tensor::Zero(n.get().rows(), n.get().cols());
  return n.grad;
}

const Tensor& Tape::grad(Var v) const { return nodes_.at(v.id_).grad; }

void Tape::backward(Var loss, ParamGrad& grads) {
  if (loss.rows() != 1 || loss.cols() != 1) throw std::invalid_argument("ad::Tape::backward: loss is not a scalar");
  const std::pair<Var, Tensor> seed{loss, Tensor::Ones(1, 1)};
  backward(std::span<const std::pair<Var, Tensor>>(&seed, 1), grads);
}

void Tape::backward(std::span<const std::pair<Var, Tensor>> seeds, ParamGrad& grads) {
  for (auto& n : nodes_) n.grad.resize(0, 0);
  int top = -1;
  for (const auto& [var, seed] : seeds) {
    if (var.tape_ != this) throw std::logic_error("ad::Tape::backward: seed from another tape");
    const Tensor& v = value(var.id_);
    if (seed.rows() != v.rows() || seed.cols() != v.cols()) {
      throw std::invalid_argument("ad::Tape::backward: seed shape mismatch");
    }
    grad_buffer(var.id_) += seed;
    top = std::max(top, var.id_);
  }
  for (int id = top; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0 || !n.requires_grad) continue;
    if (n.backward) {
      GradAccess access(*this, id);
      access.inputs_ = n.inputs;
      // Closures only touch buffers of earlier nodes, so n.grad stays put.
      n.backward(n.grad, access);
    }
    if (!n.inputs.empty()) {
      n.grad.resize(0, 0);
      continue;
    }
    if (n.param >= 0) {
      if (static_cast<std::size_t>(n.param) >= grads.size()) grads.resize(n.param + 1);
      grads.accumulate(n.param, n.grad);
    }
  }
}

// --- ops -------------------------------------------------------------------

namespace {

void check_same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw std::logic_error("ad: operands on different tapes");
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  check_same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string("ad::") + op + ": shape mismatch");
  }
}

}  // namespace

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Var matmul(const Var& a, const Var& b) {
  check_same_tape(a, b);
  if (a.cols() != b.rows()) throw std::invalid_argument("ad::matmul: inner dimension mismatch");
  Tensor out;
  out.noalias() = a.value() * b.value();
  return a.tape().record(std::move(out), {a, b}, [](const Tensor& g, GradAccess& io) {
    if (io.wants(0)) io.grad(0).noalias() += g * io.input(1).transpose();
    if (io.wants(1)) io.grad(1).noalias() += io.input(0).transpose() * g;
  });
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  return a.tape().record(a.value() + b.value(), {a, b}, [](const Tensor& g, GradAccess& io) {
    if (io.wants(0)) io.grad(0) += g;
    if (io.wants(1)) io.grad(1) += g;
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  return a.tape().record(a.value() - b.value(), {a, b}, [](const Tensor& g, GradAccess& io) {
    if (io.wants(0)) io.grad(0) += g;
    if (io.wants(1)) io.grad(1) -= g;
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  return a.tape().record(a.value().cwiseProduct(b.value()), {a, b}, [](const Tensor& g, GradAccess& io) {
    if (io.wants(0)) io.grad(0) += g.cwiseProduct(io.input(1));
    if (io.wants(1)) io.grad(1) += g.cwiseProduct(io.input(0));
  });
}

Var add_row(const Var& a, const Var& row) {
  check_same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("ad::add_row: shape mismatch");
  Tensor out = a.value();
  out.rowwise() += row.value().row(0);
  return a.tape().record(std::move(out), {a, row}, [](const Tensor& g, GradAccess& io) {
    if (io.wants(0)) io.grad(0) += g;
    if (io.wants(1)) io.grad(1) += g.colwise().sum();
  });
}

Var scale_rows(const Var& a, const Eigen::VectorXd& w) {
  if (w.size() != a.rows()) throw std::invalid_argument("ad::scale_rows: size mismatch");
  Tensor out = w.asDiagonal() * a.value();
  return a.tape().record(std::move(out), {a}, [w](const Tensor& g, GradAccess& io) {
    io.grad(0) += w.asDiagonal() * g;
  });
}

Var scale(const Var& a, double s) {
  return a.tape().record(a.value() * s, {a}, [s](const Tensor& g, GradAccess& io) { io.grad(0) += s * g; });
}

Var shift(const Var& a, double s) {
  Tensor out = a.value().array() + s;
  return a.tape().record(std::move(out), {a}, [](const Tensor& g, GradAccess& io) { io.grad(0) += g; });
}

namespace {

// Vectorised forms; log1p and tanh have no packet path in Eigen 3.4.
template <typename Derived>
auto softplus_array(const Eigen::ArrayBase<Derived>& x) {
  return x.max(0.0) + ((-x.abs()).exp() + 1.0).log();
}

template <typename Derived>
auto sigmoid_array(const Eigen::ArrayBase<Derived>& x) {
  return 1.0 / (1.0 + (-x).exp());
}

}  // namespace

Var softplus(const Var& a) {
  Tensor out = softplus_array(a.value().array()).matrix();
  return a.tape().record(std::move(out), {a}, [](const Tensor& g, GradAccess& io) {
    io.grad(0).array() += g.array() * sigmoid_array(io.input(0).array());
  });
}

Var sigmoid(const Var& a) {
  Tensor out = sigmoid_array(a.value().array()).matrix();
  return a.tape().record(std::move(out), {a}, [](const Tensor& g, GradAccess& io) {
    const auto& y = io.output().array();
    io.grad(0).array() += g.array() * y * (1.0 - y);
  });
}

Var tanh(const Var& a) {
  Tensor out = (1.0 - 2.0 / ((2.0 * a.value().array()).exp() + 1.0)).matrix();
  return a.tape().record(std::move(out), {a}, [](const Tensor& g, GradAccess& io) {
    const auto& y = io.output().array();
    io.grad(0).array() += g.array() * (1.0 - y.square());
  });
}

Var square(const Var& a) {
  Tensor out = a.value().array().square().matrix();
  return a.tape().record(std::move(out), {a}, [](const Tensor& g, GradAccess& io) {
    io.grad(0).array() += 2.0 * g.array() * io.input(0).array();
  });
}

Var abs(const Var& a) {
  Tensor out = a.value().cwiseAbs();
  return a.tape().record(std::move(out), {a}, [](const Tensor& g, GradAccess& io) {
    io.grad(0).array() += g.array() * io.input(0).array().sign();
  });
}

Var sum(const Var& a) {
  Tensor out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape().record(std::move(out), {a}, [](const Tensor& g, GradAccess& io) {
    io.grad(0).array() += g(0, 0);
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw std::invalid_argument("ad::mean: empty tensor");
  Tensor out(1, 1);
  out(0, 0) = a.value().sum() / n;
  return a.tape().record(std::move(out), {a}, [n](const Tensor& g, GradAccess& io) {
    io.grad(0).array() += g(0, 0) / n;
  });
}

Var row_sum(const Var& a) {
  Tensor out = a.value().rowwise().sum();
  return a.tape().record(std::move(out), {a}, [](const Tensor& g, GradAccess& io) {
    io.grad(0).colwise() += g.col(0);
  });
}

Var cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw std::invalid_argument("ad::cols: out of range");
  Tensor out = a.value().middleCols(start, count);
  return a.tape().record(std::move(out), {a}, [start, count](const Tensor& g, GradAccess& io) {
    io.grad(0).middleCols(start, count) += g;
  });
}

}  // namespace smesh::ad
