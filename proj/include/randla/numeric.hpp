#pragma once

#include "randla/core.hpp"
#include "randla/rng.hpp"

#include <functional>
#include <initializer_list>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace randla {

using Shape = std::vector<Index>;

Index shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense double tensor. Values are stored as a row-major matrix whose column
/// count is the last dimension and whose row count is the product of the
/// leading ones, so [N, K, C] lives in an (N*K) x C matrix.
struct Tensor {
  Shape shape;
  Matrix values;
  Matrix grad;
  bool requires_grad = false;

  Tensor() = default;
  Tensor(Shape s, Matrix v, bool needs_grad = false);

  static Tensor zeros(Shape s);
  static Tensor from_matrix(Matrix v);  // shape {rows, cols}

  Index numel() const { return values.size(); }
  Index rank() const { return static_cast<Index>(shape.size()); }
};

/// Handle to a node on a Tape.
struct Var {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

class Tape;
using BackwardFn = std::function<void(Tape&, Var self)>;

/// Records executed operations in topological (execution) order. backward()
/// walks the record in reverse once; gradients accumulate additively where a
/// value fans out.
class Tape {
 public:
  Var constant(Matrix values, Shape shape = {});
  Var parameter(Matrix values, Shape shape = {});
  Var leaf(Tensor tensor);

  const Tensor& tensor(Var v) const { return nodes_[v.id].tensor; }
  const Matrix& value(Var v) const { return nodes_[v.id].tensor.values; }
  const Shape& shape(Var v) const { return nodes_[v.id].tensor.shape; }
  bool requires_grad(Var v) const { return nodes_[v.id].tensor.requires_grad; }

  /// Gradient buffer of `v`, allocated (zeroed) on first access.
  Matrix& grad(Var v);
  bool has_grad(Var v) const { return nodes_[v.id].tensor.grad.size() > 0; }

  /// Seeds d(out)/d(out) = 1 for a single-element output and propagates.
  void backward(Var out);
  /// Propagates from an explicitly seeded gradient of `out`.
  void backward(Var out, const Matrix& seed);

  /// Appends an op result. `fn` runs during backward when any parent needs
  /// gradients; non-finite values raise NumericError naming `op`.
  Var record(const char* op, Shape shape, Matrix values, std::span<const Var> parents, BackwardFn fn);
  Var record(const char* op, Shape shape, Matrix values, std::initializer_list<Var> parents, BackwardFn fn) {
    return record(op, std::move(shape), std::move(values), std::span<const Var>(parents.begin(), parents.size()),
                  std::move(fn));
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor tensor;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// Primitive ops. Shapes use the [N, K, C] convention described on Tensor.

/// y = x W + b over the last axis. `b` may be an invalid Var (no bias).
Var affine(Tape& tape, Var x, Var w, Var b);
Var leaky_relu(Tape& tape, Var x, Real slope = 0.2);
/// Softmax along the K axis of an [N, K, C] tensor, independently per channel.
Var softmax_over_axis(Tape& tape, Var x);
/// [N, C] gathered by a Q x K index table into [Q, K, C]; backward scatter-adds.
Var gather_rows(Tape& tape, Var x, const IndexMatrix& idx);
/// [N, C] rows selected by a list into [M, C].
Var select_rows(Tape& tape, Var x, std::span<const std::int32_t> rows);
Var concat_last_axis(Tape& tape, std::span<const Var> parts);
Var concat_last_axis(Tape& tape, std::initializer_list<Var> parts);
/// Sums axis 1 of an [N, K, C] tensor into [N, C]; for rank 2 sums axis 0.
Var reduce_sum_axis(Tape& tape, Var x, int axis = 1);
/// Max over axis 1 of [N, K, C]; the gradient goes to the first maximal entry.
Var reduce_max_axis(Tape& tape, Var x);
Var elementwise_mul(Tape& tape, Var a, Var b);
Var add(Tape& tape, Var a, Var b);
Var scale(Tape& tape, Var x, Real factor);
/// Inverted dropout: kept entries scaled by 1/(1-p) in training, identity otherwise.
Var dropout(Tape& tape, Var x, Real p, bool training, Rng& rng);
/// Per-row normalization over the last axis to zero mean and unit variance.
Var layer_norm(Tape& tape, Var x, Real eps = 1e-5);
/// Per-channel normalization over every row (all points and neighbors) to
/// zero mean and unit variance; statistics come from the tensor itself.
Var channel_norm(Tape& tape, Var x, Real eps = 1e-5);
/// Sum of all entries as a shape-{1} scalar.
Var sum_all(Tape& tape, Var x);
Var square(Tape& tape, Var x);

/// Builds a scalar from freshly registered inputs on a new tape.
using ScalarFunction = std::function<Var(Tape&, std::span<const Var>)>;

struct GradientCheckOptions {
  Real eps = 1e-5;
  /// When positive, only this many entries per input are probed (chosen at
  /// random, always including the largest-magnitude analytic entry).
  Index max_entries_per_input = 0;
  std::uint64_t seed = 0;
};

struct GradientCheckResult {
  Real max_relative_error = 0;
  std::size_t worst_input = 0;
  Index worst_entry = 0;
  Index entries_checked = 0;
};

/// Compares reverse-mode gradients against central differences. The
/// relative error of an entry is |a - n| / max(1, |a|, |n|).
GradientCheckResult gradient_check(const ScalarFunction& f, const std::vector<Tensor>& inputs,
                                   const GradientCheckOptions& options = {});

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Named-tensor container: magic "RLNT", version byte, u32 count, then per
/// tensor u32 name length, name, u32 rank, u64 dims and the float64 payload,
/// all little-endian.
void write_tensors(std::ostream& out, const NamedTensors& tensors);
NamedTensors read_tensors(std::istream& in);

/// Uniform in +-sqrt(6 / (din + dout)).
Matrix glorot_uniform(Index din, Index dout, Rng& rng);

}  // namespace randla
