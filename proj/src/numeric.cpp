#include "randla/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace randla {

Index shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? ", " : "") << shape[i];
  out << ']';
  return out.str();
}

namespace {

// A finite sum implies finite entries; allFinite() is far slower than sum().
bool all_finite(const Matrix& m) { return std::isfinite(m.sum()) || m.allFinite(); }

Index leading_rows(const Shape& shape) {
  if (shape.empty()) return 1;
  return shape_numel(shape) / std::max<Index>(shape.back(), 1);
}

void check_layout(const Shape& shape, const Matrix& values) {
  require(!shape.empty(), "tensor shape must have at least one dimension");
  for (auto d : shape) require(d >= 0, "tensor dimensions must be non-negative");
  require(values.cols() == shape.back() && values.rows() == leading_rows(shape),
          "tensor storage " + std::to_string(values.rows()) + "x" + std::to_string(values.cols()) +
              " does not match shape " + shape_string(shape));
}

Shape matrix_shape(const Matrix& m) { return {m.rows(), m.cols()}; }

void require_same_shape(const Tape& tape, Var a, Var b, const char* op) {
  require(tape.shape(a) == tape.shape(b), std::string(op) + ": shape mismatch " + shape_string(tape.shape(a)) +
                                              " vs " + shape_string(tape.shape(b)));
}

}  // namespace

Tensor::Tensor(Shape s, Matrix v, bool needs_grad) : shape(std::move(s)), values(std::move(v)), requires_grad(needs_grad) {
  check_layout(shape, values);
}

Tensor Tensor::zeros(Shape s) {
  const Index cols = s.empty() ? 1 : s.back();
  const Index rows = leading_rows(s);
  return Tensor(std::move(s), Matrix::Zero(rows, cols));
}

Tensor Tensor::from_matrix(Matrix v) {
  Shape s = matrix_shape(v);
  return Tensor(std::move(s), std::move(v));
}

Var Tape::leaf(Tensor tensor) {
  if (!all_finite(tensor.values)) throw NumericError("leaf tensor has non-finite values");
  tensor.grad.resize(0, 0);
  nodes_.push_back({std::move(tensor), nullptr});
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Matrix values, Shape shape) {
  if (shape.empty()) shape = matrix_shape(values);
  return leaf(Tensor(std::move(shape), std::move(values), false));
}

Var Tape::parameter(Matrix values, Shape shape) {
  if (shape.empty()) shape = matrix_shape(values);
  return leaf(Tensor(std::move(shape), std::move(values), true));
}

Matrix& Tape::grad(Var v) {
  Tensor& t = nodes_[v.id].tensor;
  if (t.grad.size() == 0 && t.values.size() > 0) t.grad = Matrix::Zero(t.values.rows(), t.values.cols());
  return t.grad;
}

Var Tape::record(const char* op, Shape shape, Matrix values, std::span<const Var> parents, BackwardFn fn) {
  if (!all_finite(values)) throw NumericError(std::string(op) + ": produced non-finite values");
  bool needs_grad = false;
  for (Var p : parents) needs_grad = needs_grad || nodes_[p.id].tensor.requires_grad;
  Tensor tensor(std::move(shape), std::move(values), needs_grad);
  nodes_.push_back({std::move(tensor), needs_grad ? std::move(fn) : BackwardFn{}});
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

void Tape::backward(Var out) {
  require(value(out).size() == 1, "backward: output must hold a single element; seed it explicitly otherwise");
  backward(out, Matrix::Ones(1, 1));
}

void Tape::backward(Var out, const Matrix& seed) {
  require(seed.rows() == value(out).rows() && seed.cols() == value(out).cols(), "backward: seed shape mismatch");
  grad(out) += seed;
  for (std::int32_t id = out.id; id >= 0; --id) {
    Node& node = nodes_[id];
    if (node.backward && node.tensor.grad.size() > 0) node.backward(*this, Var{id});
  }
}

Var affine(Tape& tape, Var x, Var w, Var b) {
  const Matrix& xv = tape.value(x);
  const Matrix& wv = tape.value(w);
  require(tape.shape(w).size() == 2, "affine: weight must be rank 2");
  require(xv.cols() == wv.rows(), "affine: input width " + std::to_string(xv.cols()) +
                                      " does not match weight rows " + std::to_string(wv.rows()));
  Matrix y(xv.rows(), wv.cols());
  y.noalias() = xv * wv;
  if (b.valid()) {
    require(tape.value(b).size() == wv.cols(), "affine: bias width mismatch");
    y.rowwise() += tape.value(b).reshaped<Eigen::RowMajor>().transpose();
  }
  Shape shape = tape.shape(x);
  shape.back() = wv.cols();
  return tape.record("affine", std::move(shape), std::move(y), {x, w, b.valid() ? b : w}, [x, w, b](Tape& t, Var self) {
    const Matrix& gy = t.grad(self);
    if (t.requires_grad(x)) t.grad(x).noalias() += gy * t.value(w).transpose();
    if (t.requires_grad(w)) t.grad(w).noalias() += t.value(x).transpose() * gy;
    if (b.valid() && t.requires_grad(b)) t.grad(b) += gy.colwise().sum();
  });
}

Var leaky_relu(Tape& tape, Var x, Real slope) {
  const Matrix& xv = tape.value(x);
  Matrix y = (xv.array() > 0).select(xv, slope * xv);
  return tape.record("leaky_relu", tape.shape(x), std::move(y), {x}, [x, slope](Tape& t, Var self) {
    const Matrix& xv = t.value(x);
    t.grad(x).array() += (xv.array() > 0).select(t.grad(self).array(), slope * t.grad(self).array());
  });
}

Var softmax_over_axis(Tape& tape, Var x) {
  const Shape& shape = tape.shape(x);
  require(shape.size() == 3, "softmax_over_axis: expects an [N, K, C] tensor");
  const Index n = shape[0];
  const Index k = shape[1];
  require(k >= 1, "softmax_over_axis: K must be at least 1");
  const Matrix& xv = tape.value(x);
  Matrix y(xv.rows(), xv.cols());
  for (Index i = 0; i < n; ++i) {
    const auto block = xv.middleRows(i * k, k);
    const Eigen::RowVectorXd peak = block.colwise().maxCoeff();
    auto out = y.middleRows(i * k, k);
    out = (block.rowwise() - peak).array().exp().matrix();
    const Eigen::RowVectorXd total = out.colwise().sum();
    out.array().rowwise() /= total.array();
  }
  return tape.record("softmax_over_axis", shape, std::move(y), {x}, [x, n, k](Tape& t, Var self) {
    const Matrix& s = t.value(self);
    const Matrix& gy = t.grad(self);
    Matrix& gx = t.grad(x);
    for (Index i = 0; i < n; ++i) {
      const auto sb = s.middleRows(i * k, k).array();
      const auto gb = gy.middleRows(i * k, k).array();
      const Eigen::RowVectorXd inner = (sb * gb).colwise().sum();
      gx.middleRows(i * k, k).array() += sb * (gb.rowwise() - inner.array());
    }
  });
}

Var gather_rows(Tape& tape, Var x, const IndexMatrix& idx) {
  const Matrix& xv = tape.value(x);
  require(tape.shape(x).size() == 2, "gather_rows: source must be rank 2");
  const Index q = idx.rows();
  const Index k = idx.cols();
  Matrix y(q * k, xv.cols());
  for (Index i = 0; i < q; ++i)
    for (Index j = 0; j < k; ++j) {
      const auto src = idx(i, j);
      require(src >= 0 && src < xv.rows(), "gather_rows: index out of range");
      y.row(i * k + j) = xv.row(src);
    }
  return tape.record("gather_rows", {q, k, xv.cols()}, std::move(y), {x}, [x, idx](Tape& t, Var self) {
    const Matrix& gy = t.grad(self);
    Matrix& gx = t.grad(x);
    const Index k = idx.cols();
    for (Index i = 0; i < idx.rows(); ++i)
      for (Index j = 0; j < k; ++j) gx.row(idx(i, j)) += gy.row(i * k + j);
  });
}

Var select_rows(Tape& tape, Var x, std::span<const std::int32_t> rows) {
  const Matrix& xv = tape.value(x);
  require(tape.shape(x).size() == 2, "select_rows: source must be rank 2");
  const auto m = static_cast<Index>(rows.size());
  Matrix y(m, xv.cols());
  for (Index i = 0; i < m; ++i) {
    require(rows[i] >= 0 && rows[i] < xv.rows(), "select_rows: index out of range");
    y.row(i) = xv.row(rows[i]);
  }
  std::vector<std::int32_t> kept(rows.begin(), rows.end());
  return tape.record("select_rows", {m, xv.cols()}, std::move(y), {x}, [x, kept = std::move(kept)](Tape& t, Var self) {
    const Matrix& gy = t.grad(self);
    Matrix& gx = t.grad(x);
    for (std::size_t i = 0; i < kept.size(); ++i) gx.row(kept[i]) += gy.row(static_cast<Index>(i));
  });
}

Var concat_last_axis(Tape& tape, std::span<const Var> parts) {
  require(!parts.empty(), "concat_last_axis: nothing to concatenate");
  Shape shape = tape.shape(parts[0]);
  Index width = 0;
  for (Var p : parts) {
    Shape lead = tape.shape(p);
    require(lead.size() == shape.size(), "concat_last_axis: rank mismatch");
    lead.back() = shape.back();
    require(lead == shape, "concat_last_axis: leading dimensions differ");
    width += tape.value(p).cols();
  }
  const Index rows = tape.value(parts[0]).rows();
  Matrix y(rows, width);
  Index offset = 0;
  for (Var p : parts) {
    const Matrix& v = tape.value(p);
    y.middleCols(offset, v.cols()) = v;
    offset += v.cols();
  }
  shape.back() = width;
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape.record("concat_last_axis", std::move(shape), std::move(y), parts, [inputs](Tape& t, Var self) {
    const Matrix& gy = t.grad(self);
    Index offset = 0;
    for (Var p : inputs) {
      const Index w = t.value(p).cols();
      if (t.requires_grad(p)) t.grad(p) += gy.middleCols(offset, w);
      offset += w;
    }
  });
}

Var concat_last_axis(Tape& tape, std::initializer_list<Var> parts) {
  return concat_last_axis(tape, std::span<const Var>(parts.begin(), parts.size()));
}

Var reduce_sum_axis(Tape& tape, Var x, int axis) {
  const Shape& shape = tape.shape(x);
  const Matrix& xv = tape.value(x);
  if (shape.size() == 2) {
    require(axis == 0, "reduce_sum_axis: rank-2 tensors reduce over axis 0");
    Matrix y = xv.colwise().sum();
    return tape.record("reduce_sum_axis", {shape[1]}, std::move(y), {x}, [x](Tape& t, Var self) {
      t.grad(x).rowwise() += t.grad(self).row(0);
    });
  }
  require(shape.size() == 3 && axis == 1, "reduce_sum_axis: expects axis 1 of an [N, K, C] tensor");
  const Index n = shape[0];
  const Index k = shape[1];
  Matrix y(n, shape[2]);
  for (Index i = 0; i < n; ++i) y.row(i) = xv.middleRows(i * k, k).colwise().sum();
  return tape.record("reduce_sum_axis", {n, shape[2]}, std::move(y), {x}, [x, n, k](Tape& t, Var self) {
    const Matrix& gy = t.grad(self);
    Matrix& gx = t.grad(x);
    for (Index i = 0; i < n; ++i) gx.middleRows(i * k, k).rowwise() += gy.row(i);
  });
}

Var reduce_max_axis(Tape& tape, Var x) {
  const Shape& shape = tape.shape(x);
  require(shape.size() == 3 && shape[1] >= 1, "reduce_max_axis: expects a non-empty [N, K, C] tensor");
  const Index n = shape[0];
  const Index k = shape[1];
  const Index c = shape[2];
  const Matrix& xv = tape.value(x);
  Matrix y(n, c);
  IndexMatrix arg(n, c);
  for (Index i = 0; i < n; ++i)
    for (Index ch = 0; ch < c; ++ch) {
      Index best = 0;
      for (Index j = 1; j < k; ++j)
        if (xv(i * k + j, ch) > xv(i * k + best, ch)) best = j;
      arg(i, ch) = static_cast<std::int32_t>(best);
      y(i, ch) = xv(i * k + best, ch);
    }
  return tape.record("reduce_max_axis", {n, c}, std::move(y), {x}, [x, arg, k](Tape& t, Var self) {
    const Matrix& gy = t.grad(self);
    Matrix& gx = t.grad(x);
    for (Index i = 0; i < arg.rows(); ++i)
      for (Index ch = 0; ch < arg.cols(); ++ch) gx(i * k + arg(i, ch), ch) += gy(i, ch);
  });
}

Var elementwise_mul(Tape& tape, Var a, Var b) {
  require_same_shape(tape, a, b, "elementwise_mul");
  Matrix y = tape.value(a).cwiseProduct(tape.value(b));
  return tape.record("elementwise_mul", tape.shape(a), std::move(y), {a, b}, [a, b](Tape& t, Var self) {
    const Matrix& gy = t.grad(self);
    if (t.requires_grad(a)) t.grad(a) += gy.cwiseProduct(t.value(b));
    if (t.requires_grad(b)) t.grad(b) += gy.cwiseProduct(t.value(a));
  });
}

Var add(Tape& tape, Var a, Var b) {
  require_same_shape(tape, a, b, "add");
  Matrix y = tape.value(a) + tape.value(b);
  return tape.record("add", tape.shape(a), std::move(y), {a, b}, [a, b](Tape& t, Var self) {
    if (t.requires_grad(a)) t.grad(a) += t.grad(self);
    if (t.requires_grad(b)) t.grad(b) += t.grad(self);
  });
}

Var scale(Tape& tape, Var x, Real factor) {
  Matrix y = tape.value(x) * factor;
  return tape.record("scale", tape.shape(x), std::move(y), {x},
                     [x, factor](Tape& t, Var self) { t.grad(x) += factor * t.grad(self); });
}

Var dropout(Tape& tape, Var x, Real p, bool training, Rng& rng) {
  require(p >= 0 && p < 1, "dropout: probability must lie in [0, 1)");
  if (!training || p == 0) return x;
  const Matrix& xv = tape.value(x);
  Matrix mask(xv.rows(), xv.cols());
  const Real keep_scale = 1.0 / (1.0 - p);
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < p ? 0.0 : keep_scale;
  Matrix y = xv.cwiseProduct(mask);
  return tape.record("dropout", tape.shape(x), std::move(y), {x}, [x, mask = std::move(mask)](Tape& t, Var self) {
    t.grad(x) += t.grad(self).cwiseProduct(mask);
  });
}

Var layer_norm(Tape& tape, Var x, Real eps) {
  const Matrix& xv = tape.value(x);
  const Index c = xv.cols();
  require(c >= 1, "layer_norm: empty last axis");
  const Vector mean = xv.rowwise().mean();
  Matrix centered = xv.colwise() - mean;
  const Vector inv_std = ((centered.array().square().rowwise().sum() / static_cast<Real>(c)) + eps).rsqrt();
  Matrix y = centered.array().colwise() * inv_std.array();
  return tape.record("layer_norm", tape.shape(x), std::move(y), {x}, [x, inv_std, c](Tape& t, Var self) {
    const Matrix& yv = t.value(self);
    const Matrix& gy = t.grad(self);
    const Vector gy_mean = gy.rowwise().mean();
    const Vector gy_y_mean = gy.cwiseProduct(yv).rowwise().sum() / static_cast<Real>(c);
    Matrix gx = gy.colwise() - gy_mean;
    gx.array() -= yv.array().colwise() * gy_y_mean.array();
    t.grad(x).array() += gx.array().colwise() * inv_std.array();
  });
}

Var channel_norm(Tape& tape, Var x, Real eps) {
  const Matrix& xv = tape.value(x);
  const Index n = xv.rows();
  require(n >= 1, "channel_norm: no rows");
  const Eigen::RowVectorXd mean = xv.colwise().mean();
  Matrix centered = xv.rowwise() - mean;
  const Eigen::RowVectorXd inv_std =
      ((centered.array().square().colwise().sum() / static_cast<Real>(n)) + eps).rsqrt();
  Matrix y = centered.array().rowwise() * inv_std.array();
  return tape.record("channel_norm", tape.shape(x), std::move(y), {x}, [x, inv_std, n](Tape& t, Var self) {
    const Matrix& yv = t.value(self);
    const Matrix& gy = t.grad(self);
    const Eigen::RowVectorXd gy_mean = gy.colwise().mean();
    const Eigen::RowVectorXd gy_y_mean = gy.cwiseProduct(yv).colwise().sum() / static_cast<Real>(n);
    Matrix gx = gy.rowwise() - gy_mean;
    gx.array() -= yv.array().rowwise() * gy_y_mean.array();
    t.grad(x).array() += gx.array().rowwise() * inv_std.array();
  });
}

Var sum_all(Tape& tape, Var x) {
  Matrix y(1, 1);
  y(0, 0) = tape.value(x).sum();
  return tape.record("sum_all", {1}, std::move(y), {x}, [x](Tape& t, Var self) {
    t.grad(x).array() += t.grad(self)(0, 0);
  });
}

Var square(Tape& tape, Var x) {
  Matrix y = tape.value(x).array().square().matrix();
  return tape.record("square", tape.shape(x), std::move(y), {x}, [x](Tape& t, Var self) {
    t.grad(x) += 2.0 * t.grad(self).cwiseProduct(t.value(x));
  });
}

Matrix glorot_uniform(Index din, Index dout, Rng& rng) {
  const Real limit = std::sqrt(6.0 / static_cast<Real>(din + dout));
  Matrix w(din, dout);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-limit, limit);
  return w;
}

GradientCheckResult gradient_check(const ScalarFunction& f, const std::vector<Tensor>& inputs,
                                   const GradientCheckOptions& options) {
  require(options.eps > 0, "gradient_check: eps must be positive");
  GradientCheckResult result;

  std::vector<Matrix> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& in : inputs) vars.push_back(tape.parameter(in.values, in.shape));
    const Var out = f(tape, vars);
    require(tape.value(out).size() == 1, "gradient_check: function must return a scalar");
    tape.backward(out);
    for (std::size_t i = 0; i < vars.size(); ++i) {
      analytic.push_back(tape.has_grad(vars[i]) ? tape.grad(vars[i])
                                                : Matrix::Zero(inputs[i].values.rows(), inputs[i].values.cols()));
    }
  }

  auto evaluate = [&](const std::vector<Tensor>& probe) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& in : probe) vars.push_back(tape.constant(in.values, in.shape));
    return tape.value(f(tape, vars))(0, 0);
  };

  Rng rng(options.seed);
  std::vector<Tensor> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Index count = inputs[i].values.size();
    std::vector<Index> entries;
    if (options.max_entries_per_input > 0 && count > options.max_entries_per_input) {
      Index largest = 0;
      analytic[i].cwiseAbs().reshaped<Eigen::RowMajor>().maxCoeff(&largest);
      entries.push_back(largest);
      while (static_cast<Index>(entries.size()) < options.max_entries_per_input) {
        const auto e = static_cast<Index>(rng.below(static_cast<std::uint64_t>(count)));
        if (std::find(entries.begin(), entries.end(), e) == entries.end()) entries.push_back(e);
      }
    } else {
      entries.resize(static_cast<std::size_t>(count));
      std::iota(entries.begin(), entries.end(), Index{0});
    }
    for (Index e : entries) {
      Real& slot = probe[i].values.data()[e];
      const Real original = slot;
      slot = original + options.eps;
      const Real plus = evaluate(probe);
      slot = original - options.eps;
      const Real minus = evaluate(probe);
      slot = original;
      const Real numeric = (plus - minus) / (2 * options.eps);
      const Real a = analytic[i].data()[e];
      const Real err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      ++result.entries_checked;
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_input = i;
        result.worst_entry = e;
      }
    }
  }
  return result;
}

}  // namespace randla
