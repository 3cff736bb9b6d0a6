#include "randla/numeric.hpp"

#include <doctest.h>

#include <sstream>

using namespace randla;

namespace {

Matrix random_matrix(Index r, Index c, Rng& rng, Real lo = -1, Real hi = 1) {
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

// Values bounded away from zero by at least `gap`.
Matrix away_from_zero(Index r, Index c, Rng& rng, Real gap) {
  Matrix m = random_matrix(r, c, rng);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = (m.data()[i] < 0 ? -1 : 1) * (gap + std::abs(m.data()[i]));
  return m;
}

// Weighted sum with fixed random coefficients, so every output entry matters.
Var probe(Tape& t, Var y, std::uint64_t seed) {
  Rng rng(seed);
  const Matrix& v = t.value(y);
  return sum_all(t, elementwise_mul(t, y, t.constant(random_matrix(v.rows(), v.cols(), rng), t.shape(y))));
}

Real check(const ScalarFunction& f, const std::vector<Tensor>& inputs) {
  return gradient_check(f, inputs).max_relative_error;
}

}  // namespace

TEST_CASE("affine forward") {
  Tape t;
  Matrix x(2, 3);
  x << 1, 2, 3, 4, 5, 6;
  const Var xv = t.constant(x, {2, 3});
  const Var eye = t.constant(Matrix::Identity(3, 3), {3, 3});
  const Var zero = t.constant(Matrix::Zero(1, 3), {3});
  CHECK(t.value(affine(t, xv, eye, zero)) == x);
  Matrix b(1, 2);
  b << 7, -1;
  const Var y = affine(t, t.constant(Matrix::Zero(4, 3), {4, 3}), t.constant(Matrix::Ones(3, 2), {3, 2}),
                       t.constant(b, {2}));
  for (Index r = 0; r < 4; ++r) CHECK(t.value(y).row(r) == b);
  CHECK_THROWS_AS(affine(t, xv, t.constant(Matrix::Ones(2, 2), {2, 2}), Var{}), ValidationError);
}

TEST_CASE("leaky relu forward") {
  Tape t;
  Matrix x(1, 2);
  x << 5, -5;
  const Matrix y = t.value(leaky_relu(t, t.constant(x, {2})));
  CHECK(y(0, 0) == 5);
  CHECK(y(0, 1) == doctest::Approx(-1));
}

TEST_CASE("softmax over the neighbor axis") {
  Tape t;
  Rng rng(1);
  SUBCASE("K = 1 gives ones") {
    const Var s = softmax_over_axis(t, t.constant(random_matrix(5, 3, rng), {5, 1, 3}));
    CHECK((t.value(s).array() == 1).all());
  }
  SUBCASE("constant slices are uniform") {
    const Var s = softmax_over_axis(t, t.constant(Matrix::Constant(8, 2, 3.5), {2, 4, 2}));
    CHECK((t.value(s).array() - 0.25).abs().maxCoeff() < 1e-15);
  }
  SUBCASE("slices sum to one for large inputs") {
    const Var s = softmax_over_axis(t, t.constant(random_matrix(60, 7, rng, -100, 100), {6, 10, 7}));
    const Matrix& v = t.value(s);
    for (Index n = 0; n < 6; ++n)
      for (Index c = 0; c < 7; ++c) CHECK(std::abs(v.block(n * 10, c, 10, 1).sum() - 1) < 1e-9);
  }
}

TEST_CASE("gather rows") {
  Tape t;
  Matrix x(3, 2);
  x << 1, 2, 3, 4, 5, 6;
  IndexMatrix idx(2, 2);
  idx << 2, 0, 1, 1;
  const Var xv = t.parameter(x, {3, 2});
  const Var g = gather_rows(t, xv, idx);
  CHECK(t.shape(g) == Shape{2, 2, 2});
  CHECK(t.value(g).row(0) == x.row(2));
  CHECK(t.value(g).row(3) == x.row(1));
  t.backward(sum_all(t, g));
  Matrix expected(3, 2);
  expected << 1, 1, 2, 2, 1, 1;
  CHECK(t.grad(xv) == expected);
}

TEST_CASE("concat, reduce and dropout semantics") {
  Tape t;
  Rng rng(2);
  const Matrix a = random_matrix(4, 3, rng);
  const Var av = t.constant(a, {4, 3});
  CHECK(t.value(concat_last_axis(t, {av})) == a);

  const Var r = reduce_sum_axis(t, t.constant(a, {2, 2, 3}));
  CHECK(t.shape(r) == Shape{2, 3});
  CHECK((t.value(r).row(0) - (a.row(0) + a.row(1))).norm() < 1e-15);

  const Var m = reduce_max_axis(t, t.constant(a, {2, 2, 3}));
  CHECK(t.value(m).row(1) == a.row(2).cwiseMax(a.row(3)));

  CHECK(t.value(dropout(t, av, 0.5, false, rng)) == a);

  const Matrix ones = Matrix::Ones(1000, 100);
  const Matrix kept = t.value(dropout(t, t.constant(ones, {1000, 100}), 0.5, true, rng));
  const Real rate = static_cast<Real>((kept.array() != 0).count()) / 1e5;
  CHECK(std::abs(rate - 0.5) <= 3 * std::sqrt(0.25 / 1e5));
  CHECK(((kept.array() == 0) || (kept.array() == 2.0)).all());
}

TEST_CASE("layer norm rows have zero mean and unit variance") {
  Tape t;
  Rng rng(3);
  const Matrix x = random_matrix(10, 6, rng, -5, 5);
  const Matrix y = t.value(layer_norm(t, t.constant(x, {10, 6})));
  for (Index r = 0; r < 10; ++r) {
    CHECK(std::abs(y.row(r).mean()) < 1e-12);
    CHECK(y.row(r).squaredNorm() / 6 == doctest::Approx(1).epsilon(1e-4));
  }
}

TEST_CASE("non-finite values are rejected at the op boundary") {
  Tape t;
  Matrix x = Matrix::Ones(1, 2);
  x(0, 1) = std::numeric_limits<Real>::infinity();
  CHECK_THROWS_AS(t.constant(x, {2}), NumericError);
  const Var big = t.constant(Matrix::Constant(1, 1, 1e308), {1});
  CHECK_THROWS_AS(scale(t, big, 10.0), NumericError);
}

TEST_CASE("gradient check of a quadratic is exact") {
  const auto f = [](Tape& t, std::span<const Var> v) { return sum_all(t, square(t, v[0])); };
  const GradientCheckResult r = gradient_check(f, {Tensor({3}, Matrix::Ones(1, 3))});
  CHECK(r.max_relative_error < 1e-8);
  CHECK(r.entries_checked == 3);
}

TEST_CASE("primitive gradients match finite differences") {
  Rng rng(4);
  SUBCASE("affine") {
    const auto f = [](Tape& t, std::span<const Var> v) { return probe(t, affine(t, v[0], v[1], v[2]), 1); };
    CHECK(check(f, {Tensor({5, 4}, random_matrix(5, 4, rng)), Tensor({4, 3}, random_matrix(4, 3, rng)),
                    Tensor({3}, random_matrix(1, 3, rng))}) < 1e-6);
  }
  SUBCASE("affine on [N, K, C]") {
    const auto f = [](Tape& t, std::span<const Var> v) { return probe(t, affine(t, v[0], v[1], Var{}), 2); };
    CHECK(check(f, {Tensor({3, 2, 4}, random_matrix(6, 4, rng)), Tensor({4, 5}, random_matrix(4, 5, rng))}) < 1e-6);
  }
  SUBCASE("leaky relu away from the kink") {
    const auto f = [](Tape& t, std::span<const Var> v) { return probe(t, leaky_relu(t, v[0]), 3); };
    CHECK(check(f, {Tensor({6, 5}, away_from_zero(6, 5, rng, 1e-3))}) < 1e-4);
  }
  SUBCASE("softmax") {
    const auto f = [](Tape& t, std::span<const Var> v) { return probe(t, softmax_over_axis(t, v[0]), 4); };
    CHECK(check(f, {Tensor({3, 5, 2}, random_matrix(15, 2, rng, -3, 3))}) < 1e-6);
  }
  SUBCASE("gather with repeated indices") {
    IndexMatrix idx(4, 3);
    idx << 0, 0, 1, 2, 2, 2, 3, 1, 0, 4, 4, 3;
    const auto f = [&idx](Tape& t, std::span<const Var> v) { return probe(t, gather_rows(t, v[0], idx), 5); };
    CHECK(check(f, {Tensor({5, 3}, random_matrix(5, 3, rng))}) < 1e-6);
  }
  SUBCASE("select rows") {
    const IndexList rows{3, 0, 3};
    const auto f = [&rows](Tape& t, std::span<const Var> v) { return probe(t, select_rows(t, v[0], rows), 6); };
    CHECK(check(f, {Tensor({4, 2}, random_matrix(4, 2, rng))}) < 1e-6);
  }
  SUBCASE("concat") {
    const auto f = [](Tape& t, std::span<const Var> v) { return probe(t, concat_last_axis(t, {v[0], v[1]}), 7); };
    CHECK(check(f, {Tensor({2, 3, 2}, random_matrix(6, 2, rng)), Tensor({2, 3, 4}, random_matrix(6, 4, rng))}) <
          1e-6);
  }
  SUBCASE("reductions and products") {
    const auto f = [](Tape& t, std::span<const Var> v) {
      const Var prod = elementwise_mul(t, v[0], v[1]);
      return probe(t, add(t, reduce_sum_axis(t, prod), scale(t, reduce_sum_axis(t, v[1]), -0.5)), 8);
    };
    CHECK(check(f, {Tensor({3, 4, 2}, random_matrix(12, 2, rng)), Tensor({3, 4, 2}, random_matrix(12, 2, rng))}) <
          1e-6);
  }
  SUBCASE("max reduction with distinct values") {
    const auto f = [](Tape& t, std::span<const Var> v) { return probe(t, reduce_max_axis(t, v[0]), 9); };
    CHECK(check(f, {Tensor({4, 5, 3}, random_matrix(20, 3, rng))}) < 1e-6);
  }
  SUBCASE("layer norm") {
    const auto f = [](Tape& t, std::span<const Var> v) { return probe(t, layer_norm(t, v[0]), 10); };
    CHECK(check(f, {Tensor({6, 5}, random_matrix(6, 5, rng, -2, 2))}) < 1e-6);
  }
  SUBCASE("dropout in training mode") {
    const auto f = [](Tape& t, std::span<const Var> v) {
      Rng mask(11);
      return probe(t, dropout(t, v[0], 0.3, true, mask), 11);
    };
    CHECK(check(f, {Tensor({5, 4}, random_matrix(5, 4, rng))}) < 1e-6);
  }
}

TEST_CASE("fan-out accumulates gradients") {
  Tape t;
  Matrix x(1, 3);
  x << 1, -2, 0.5;
  const Var xv = t.parameter(x, {3});
  const Var y = square(t, xv);
  t.backward(sum_all(t, add(t, y, y)));
  CHECK((t.grad(xv) - 4 * x).norm() < 1e-15);
}

TEST_CASE("glorot initialization bounds") {
  Rng rng(5);
  const Matrix w = glorot_uniform(30, 50, rng);
  const Real bound = std::sqrt(6.0 / 80);
  CHECK(w.cwiseAbs().maxCoeff() <= bound);
  CHECK(w.cwiseAbs().maxCoeff() > 0.9 * bound);
  CHECK(std::abs(w.mean()) < 0.02);
}

TEST_CASE("tensor container round-trip") {
  Rng rng(6);
  NamedTensors tensors;
  tensors.emplace_back("a", Tensor({2, 3, 4}, random_matrix(6, 4, rng)));
  tensors.emplace_back("bias", Tensor({5}, random_matrix(1, 5, rng)));
  std::stringstream buffer;
  write_tensors(buffer, tensors);
  const NamedTensors back = read_tensors(buffer);
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].first == tensors[i].first);
    CHECK(back[i].second.shape == tensors[i].second.shape);
    CHECK(back[i].second.values == tensors[i].second.values);
  }
  std::stringstream again;
  write_tensors(again, tensors);
  const std::string full = again.str();
  std::stringstream truncated(full.substr(0, full.size() - 3));
  CHECK_THROWS_AS(read_tensors(truncated), LoadError);
  std::stringstream bad_magic("XXXX");
  CHECK_THROWS_AS(read_tensors(bad_magic), LoadError);
}
