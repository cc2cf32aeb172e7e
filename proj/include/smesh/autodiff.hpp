#pragma once

// Reverse-mode differentiation over dense Eigen tensors.
//
// A Tape records nodes in creation order, which is a topological order by
// construction: every node's inputs have smaller ids. Values are dense
// matrices whose rows are usually a batch (points, rays, pixels). Parameters
// are leaves that reference external storage and report their gradient into a
// ParamGrad slot keyed by ParamId.

#include <Eigen/Core>

#include <deque>
#include <functional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace smesh::ad {

using Tensor = Eigen::MatrixXd;
using ParamId = int;

class Tape;

class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const;
  int id() const { return id_; }
  const Tensor& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  /// Value of a 1x1 node.
  double scalar() const;
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Gradient per parameter. Untouched slots stay empty (zero).
class ParamGrad {
 public:
  ParamGrad() = default;
  explicit ParamGrad(std::size_t count) : grads_(count) {}

  std::size_t size() const { return grads_.size(); }
  void resize(std::size_t count) { grads_.resize(count); }
  bool touched(ParamId id) const { return grads_.at(id).size() > 0; }
  const Tensor& operator[](ParamId id) const { return grads_.at(id); }

  /// Accumulation buffer for `id`, zero-initialized to rows x cols on first use.
  Tensor& slot(ParamId id, Eigen::Index rows, Eigen::Index cols);
  void accumulate(ParamId id, const Tensor& g);
  ParamGrad& operator+=(const ParamGrad& other);
  ParamGrad& operator*=(double s);

  bool all_finite() const;
  double max_abs() const;

 private:
  std::vector<Tensor> grads_;
};

/// Handed to backward closures: read input values, accumulate input gradients.
class GradAccess {
 public:
  std::size_t arity() const { return inputs_.size(); }
  bool wants(std::size_t k) const;
  const Tensor& input(std::size_t k) const;
  const Tensor& output() const;
  /// Zero-initialized (on first use) gradient buffer of input k.
  Tensor& grad(std::size_t k);

 private:
  friend class Tape;
  GradAccess(Tape& tape, int node) : tape_(tape), node_(node) {}
  std::vector<int> inputs_;
  Tape& tape_;
  int node_;
};

using BackwardFn = std::function<void(const Tensor& out_grad, GradAccess& access)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf whose gradient is kept on the tape; read it with grad().
  Var variable(Tensor value);
  /// Leaf bound to external parameter storage, which must outlive the tape.
  Var parameter(ParamId id, const Tensor& storage);
  Var parameter(ParamId id, Tensor&& storage) = delete;
  /// Generic op. `backward` is dropped when no input requires a gradient.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(int id) const;
  bool requires_grad(int id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Backpropagates from a 1x1 loss. Parameter gradients are added to `grads`.
  void backward(Var loss, ParamGrad& grads);
  /// Vector-Jacobian product: each (node, seed) pair seeds that node's gradient.
  void backward(std::span<const std::pair<Var, Tensor>> seeds, ParamGrad& grads);

  /// Gradient left on a leaf by the last backward pass (empty when none).
  /// Intermediate buffers are released during the pass.
  const Tensor& grad(Var v) const;

 private:
  friend class GradAccess;

  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    std::vector<int> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    ParamId param = -1;
    Tensor grad;

    const Tensor& get() const { return external ? *external : value; }
  };

  Tensor& grad_buffer(int id);
  Var push(Node node);

  std::deque<Node> nodes_;
};

// Elementwise and linear-algebra ops. Binary ops require equal shapes unless
// noted; all operands must live on the same tape.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
/// a (n x m) + row (1 x m) broadcast over rows.
Var add_row(const Var& a, const Var& row);
/// Scales row i of `a` by the constant w[i].
Var scale_rows(const Var& a, const Eigen::VectorXd& w);
Var scale(const Var& a, double s);
Var shift(const Var& a, double s);
Var softplus(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var square(const Var& a);
/// |a| with subgradient sign(a) (0 at 0).
Var abs(const Var& a);
/// Sum of all entries, 1x1.
Var sum(const Var& a);
Var mean(const Var& a);
/// Per-row sum, n x 1.
Var row_sum(const Var& a);
/// Columns [start, start + count).
Var cols(const Var& a, Eigen::Index start, Eigen::Index count);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator+(const Var& a, double s) { return shift(a, s); }
inline Var operator-(const Var& a) { return scale(a, -1.0); }

/// Numerically stable softplus and logistic on doubles.
double softplus(double x);
double sigmoid(double x);

}  // namespace smesh::ad
