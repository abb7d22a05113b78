#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "tensegrity/autodiff.hpp"
#include "tensegrity/errors.hpp"

using namespace tensegrity;
using namespace tensegrity::autodiff;

namespace {

using Td = Tensor<double>;

Matrix<double> random_matrix(Index r, Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix<double> m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

Td random_tensor(Shape shape, std::mt19937_64& rng, bool grad = true) {
  Index r = 0, c = 0;
  detail::storage_dims(shape, r, c);
  return Td(shape, random_matrix(r, c, rng), grad);
}

// Contracts an arbitrary tensor to a scalar with fixed random weights so every
// output coordinate contributes a distinct gradient.
Td weighted_sum(const Td& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Td w(y.shape(), random_matrix(y.rows(), y.cols(), rng), false);
  return sum(mul(y, w));
}

double check_op(const std::function<Td(const std::vector<Td>&)>& op, std::vector<Shape> shapes, int points = 10) {
  double worst = 0.0;
  for (int p = 0; p < points; ++p) {
    std::mt19937_64 rng(1000 + p);
    std::vector<Td> inputs;
    for (const auto& s : shapes) inputs.push_back(random_tensor(s, rng));
    auto loss = [&]() { return weighted_sum(op(inputs), 77); };
    worst = std::max(worst, finite_difference_check(loss, inputs).max_relative_error);
  }
  return worst;
}

}  // namespace

TEST_CASE("forward examples") {
  const Td x = Td::vector({1.0, -2.0, 3.0});
  const Td eye = Td::matrix(Matrix<double>::Identity(3, 3));
  const Td y = matmul(eye, x);
  for (Index i = 0; i < 3; ++i) CHECK(y(i) == x(i));
  CHECK(sigmoid(Td::scalar(0.0)).item() == 0.5);
  const Td r = relu(Td::vector({-1.0, 2.0}));
  CHECK(r(0) == 0.0);
  CHECK(r(1) == 2.0);
  CHECK(sigmoid(Td::scalar(-800.0)).item() == doctest::Approx(0.0));
  CHECK(std::isfinite(sigmoid(Td::scalar(-800.0)).item()));
}

TEST_CASE("backward examples") {
  SUBCASE("grad of sum is ones") {
    const Td x = Td::vector({1.0, 2.0, 3.0}, true);
    backward(sum(x));
    for (Index i = 0; i < 3; ++i) CHECK(x.grad()(i, 0) == 1.0);
  }
  SUBCASE("grad of sum of squares is 2x") {
    const Td x = Td::vector({1.0, 2.0}, true);
    backward(sum(mul(x, x)));
    CHECK(x.grad()(0, 0) == 2.0);
    CHECK(x.grad()(1, 0) == 4.0);
  }
  SUBCASE("relu has zero gradient at zero") {
    const Td x = Td::vector({0.0, 1.0}, true);
    backward(sum(relu(x)));
    CHECK(x.grad()(0, 0) == 0.0);
    CHECK(x.grad()(1, 0) == 1.0);
  }
  SUBCASE("leaf gradients accumulate across backward calls") {
    const Td x = Td::vector({1.0, 2.0}, true);
    backward(sum(scale(x, 3.0)));
    backward(sum(scale(x, 3.0)));
    CHECK(x.grad()(0, 0) == 6.0);
    Td y = x;
    y.zero_grad();
    CHECK(x.grad()(1, 0) == 0.0);
  }
  SUBCASE("a shared subexpression collects gradient from both uses") {
    const Td x = Td::scalar(3.0, true);
    const Td y = mul(x, x);
    backward(sum(add(y, y)));
    CHECK(x.grad()(0, 0) == 12.0);
  }
}

TEST_CASE("finite-difference oracle itself") {
  SUBCASE("x^2 at 3") {
    const Td x = Td::scalar(3.0, true);
    const auto report = finite_difference_check([&]() { return mul(x, x); }, {x});
    CHECK(report.worst_numeric == doctest::Approx(6.0).epsilon(1e-9));
    CHECK(report.max_relative_error < 1e-9);
  }
  SUBCASE("constant function") {
    const Td x = Td::scalar(3.0, true);
    const Td c = Td::scalar(2.0);
    const auto report = finite_difference_check([&]() { return add(c, scale(x, 0.0)); }, {x});
    CHECK(report.worst_analytic == 0.0);
    CHECK(std::abs(report.worst_numeric) < 1e-12);
    CHECK(report.max_relative_error == 0.0);
  }
  SUBCASE("relu kink inside the step is retried with a smaller step") {
    const Td x = Td::scalar(4e-6, true);
    const auto report = finite_difference_check([&]() { return relu(x); }, {x}, 1e-5);
    CHECK(report.step_reductions == 1);
    CHECK(report.kinks_skipped == 0);
    CHECK(report.worst_numeric == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("relu exactly at its kink is skipped") {
    const Td x = Td::scalar(0.0, true);
    const auto report = finite_difference_check([&]() { return relu(x); }, {x}, 1e-5);
    CHECK(report.kinks_skipped == 1);
    CHECK(report.coordinates_checked == 0);
  }
}

TEST_CASE("every primitive matches central differences at 10 random points") {
  constexpr double tol = 1e-4;
  CHECK(check_op([](const auto& v) { return matmul(v[0], v[1]); }, {{4, 3}, {3, 5}}) < tol);
  CHECK(check_op([](const auto& v) { return matmul(v[0], v[1]); }, {{4, 3}, {3}}) < tol);
  CHECK(check_op([](const auto& v) { return matmul(v[0], v[1]); }, {{3}, {3, 5}}) < tol);
  CHECK(check_op([](const auto& v) { return add(v[0], v[1]); }, {{4, 3}, {4, 3}}) < tol);
  CHECK(check_op([](const auto& v) { return add(v[0], v[1]); }, {{4, 3}, {3}}) < tol);
  CHECK(check_op([](const auto& v) { return mul(v[0], v[1]); }, {{4, 3}, {4, 3}}) < tol);
  CHECK(check_op([](const auto& v) { return scale(v[0], -2.5); }, {{4, 3}}) < tol);
  CHECK(check_op([](const auto& v) { return relu(v[0]); }, {{6, 5}}) < tol);
  CHECK(check_op([](const auto& v) { return sigmoid(v[0]); }, {{6, 5}}) < tol);
  CHECK(check_op([](const auto& v) { return concat<double>({v[0], v[1]}, 0); }, {{2, 3}, {4, 3}}) < tol);
  CHECK(check_op([](const auto& v) { return concat<double>({v[0], v[1]}, 1); }, {{2, 3}, {2, 4}}) < tol);
  CHECK(check_op([](const auto& v) { return sum_over(v[0], 0); }, {{4, 3}}) < tol);
  CHECK(check_op([](const auto& v) { return sum_over(v[0], 1); }, {{4, 3}}) < tol);
  CHECK(check_op([](const auto& v) { return sum(v[0]); }, {{4, 3}}) < tol);
  CHECK(check_op([](const auto& v) { return mean(v[0]); }, {{4, 3}}) < tol);
  CHECK(check_op([](const auto& v) { return gather_rows(v[0], {2, 0, 2, 1}); }, {{3, 4}}) < tol);
  CHECK(check_op([](const auto& v) { return scatter_add_rows(v[0], {0, 1, 2, 0}, {1, 1, 0, 3}, 4); }, {{3, 2}}) < tol);
  CHECK(check_op(
            [](const auto& v) {
              Matrix<double> labels(5, 1);
              labels << 1, 0, 1, 1, 0;
              return bce_with_logits(v[0], labels);
            },
            {{5}}) < tol);
}

TEST_CASE("random two-layer MLP gradients match central differences") {
  std::mt19937_64 rng(5);
  const Td x = random_tensor({8, 6}, rng, false);
  const Td w1 = random_tensor({6, 10}, rng);
  const Td b1 = random_tensor({10}, rng);
  const Td w2 = random_tensor({10, 1}, rng);
  const Td b2 = random_tensor({1}, rng);
  Matrix<double> labels(8, 1);
  labels << 1, 0, 0, 1, 1, 0, 1, 0;
  auto loss = [&]() {
    return bce_with_logits(add(matmul(relu(add(matmul(x, w1), b1)), w2), b2), labels);
  };
  CHECK(finite_difference_check(loss, {w1, b1, w2, b2}).max_relative_error < 1e-4);
}

TEST_CASE("shape and scalar errors") {
  const Td a = Td::zeros({2, 3});
  const Td b = Td::zeros({2, 3});
  CHECK_THROWS_AS(matmul(a, b), ShapeMismatch);
  try {
    matmul(a, b);
  } catch (const ShapeMismatch& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(2,3)") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, Td::zeros({4})), ShapeMismatch);
  CHECK_THROWS_AS(mul(a, Td::zeros({3, 2})), ShapeMismatch);
  CHECK_THROWS_AS(concat<double>({a, Td::zeros({2, 4})}, 0), ShapeMismatch);
  CHECK_THROWS_AS(a.item(), NotScalar);
  CHECK_THROWS_AS(backward(Td::zeros({2}, true)), NotScalar);
  CHECK_THROWS_AS(Td({2, 0}, Matrix<double>(2, 0)), ShapeMismatch);
}

TEST_CASE("no-grad mode records nothing") {
  const Td x = Td::vector({1.0, 2.0}, true);
  NoGradGuard guard;
  const Td y = sum(mul(x, x));
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->parents.empty());
}

TEST_CASE("stable BCE agrees with the naive form and is finite at extremes") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> logit(-20.0, 20.0);
  for (int i = 0; i < 10000; ++i) {
    const double z = logit(rng);
    const double c = static_cast<double>(rng() & 1U);
    Matrix<double> label(1, 1);
    label(0, 0) = c;
    const double stable = bce_with_logits(Td::scalar(z), label).item();
    const long double s = 1.0L / (1.0L + std::exp(-static_cast<long double>(z)));
    const long double naive = -(c * std::log(s) + (1.0L - c) * std::log(1.0L - s));
    CHECK(std::abs(stable - static_cast<double>(naive)) < 1e-9);
  }
  Matrix<double> ones = Matrix<double>::Ones(2, 1);
  CHECK(std::isfinite(bce_with_logits(Td::vector({-1000.0, 1000.0}), ones).item()));
  CHECK(bce_with_logits(Td::vector({0.0, 0.0}), ones).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}
