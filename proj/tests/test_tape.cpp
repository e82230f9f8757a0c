#include "drlabel/tape.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

using namespace drlabel::ad;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

// Builds a scalar from the inputs: sum of w .* f(inputs) for a fixed random w.
using Graph = std::function<Var(Tape&, std::vector<Var>&)>;

double evaluate(const Graph& f, const std::vector<Matrix>& inputs, const Matrix& w) {
    Tape t;
    std::vector<Var> vars;
    for (const Matrix& m : inputs) vars.push_back(t.constant(m));
    const Var out = f(t, vars);
    return (t.value(out).array() * w.array()).sum();
}

// Max relative error of the taped gradient against central differences.
double gradient_error(const Graph& f, std::vector<Matrix> inputs, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Matrix w;
    {
        Tape probe;
        std::vector<Var> vars;
        for (const Matrix& m : inputs) vars.push_back(probe.constant(m));
        const Matrix& v = probe.value(f(probe, vars));
        w = random_matrix(v.rows(), v.cols(), rng);
    }
    Tape t;
    std::vector<Var> vars;
    for (const Matrix& m : inputs) vars.push_back(t.parameter(m));
    const Var out = f(t, vars);
    const Var loss = t.record(Matrix::Constant(1, 1, (t.value(out).array() * w.array()).sum()), std::vector<Var>{out},
                              [out, w](Tape& tape, const Matrix& g) { tape.accumulate(out, g(0, 0) * w); });
    t.backward(loss);

    double worst = 0.0;
    const double h = 1e-6;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Matrix& grad = t.grad(vars[k]);
        for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
            const double orig = inputs[k].data()[i];
            inputs[k].data()[i] = orig + h;
            const double up = evaluate(f, inputs, w);
            inputs[k].data()[i] = orig - h;
            const double down = evaluate(f, inputs, w);
            inputs[k].data()[i] = orig;
            const double fd = (up - down) / (2 * h);
            const double an = grad.size() ? grad.data()[i] : 0.0;
            worst = std::max(worst, std::abs(fd - an) / std::max(1e-6, std::max(std::abs(fd), std::abs(an))));
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("every tape op matches central differences") {
    std::mt19937_64 rng(1);
    const Matrix a = random_matrix(4, 3, rng), b = random_matrix(4, 3, rng), c = random_matrix(3, 5, rng);
    const Matrix row = random_matrix(1, 3, rng), col = random_matrix(4, 1, rng);
    const double tol = 1e-6;

    CHECK(gradient_error([](Tape& t, auto& v) { return matmul(t, v[0], v[1]); }, {a, c}, 1) < tol);
    CHECK(gradient_error([](Tape& t, auto& v) { return add(t, v[0], v[1]); }, {a, b}, 2) < tol);
    CHECK(gradient_error([](Tape& t, auto& v) { return sub(t, v[0], v[1]); }, {a, b}, 3) < tol);
    CHECK(gradient_error([](Tape& t, auto& v) { return add_row(t, v[0], v[1]); }, {a, row}, 4) < tol);
    CHECK(gradient_error([](Tape& t, auto& v) { return mul(t, v[0], v[1]); }, {a, b}, 5) < tol);
    CHECK(gradient_error([](Tape& t, auto& v) { return mul_col(t, v[0], v[1]); }, {a, col}, 6) < tol);
    CHECK(gradient_error([](Tape& t, auto& v) { return scale(t, v[0], -2.5); }, {a}, 7) < tol);
    CHECK(gradient_error([](Tape& t, auto& v) { return silu(t, v[0]); }, {a}, 8) < tol);
    CHECK(gradient_error([](Tape& t, auto& v) { return abs(t, v[0]); }, {a}, 9) < tol);
    CHECK(gradient_error(
              [](Tape& t, auto& v) {
                  const Var parts[] = {v[0], v[1], v[0]};
                  return concat_cols(t, parts);
              },
              {a, col}, 10) < tol);
    CHECK(gradient_error([](Tape& t, auto& v) { return gather_rows(t, v[0], {3, 0, 0, 2, 3}); }, {a}, 11) < tol);
    CHECK(gradient_error([](Tape& t, auto& v) { return scatter_add_rows(t, v[0], {1, 1, 0, 4}, 6); }, {a}, 12) < tol);
    CHECK(gradient_error([](Tape& t, auto& v) { return mean_rows(t, v[0]); }, {a}, 13) < tol);
    CHECK(gradient_error([](Tape& t, auto& v) { return row_norms(t, v[0]); }, {a}, 14) < tol);
    CHECK(gradient_error([](Tape& t, auto& v) { return normalize_rows(t, v[0]); }, {a}, 15) < tol);
    CHECK(gradient_error([](Tape& t, auto& v) { return weighted_sum(t, v[0], {0.5, -1, 2, 0.25}); }, {col}, 16) < tol);
    CHECK(gradient_error([](Tape& t, auto& v) { return gaussian_basis(t, v[0], {-1, 0, 0.5}, {1, 2, 0.7}); }, {col}, 17) <
          tol);
    CHECK(gradient_error([](Tape& t, auto& v) { return column(t, v[0], 1); }, {a}, 18) < tol);
}

TEST_CASE("a composite graph with shared subexpressions") {
    std::mt19937_64 rng(2);
    const Matrix x = random_matrix(5, 3, rng), w1 = random_matrix(3, 4, rng), w2 = random_matrix(4, 1, rng);
    auto f = [](Tape& t, std::vector<Var>& v) {
        const Var h = silu(t, matmul(t, v[0], v[1]));
        const Var h2 = add(t, h, mul(t, h, h));
        return matmul(t, normalize_rows(t, h2), v[2]);
    };
    CHECK(gradient_error(f, {x, w1, w2}, 3) < 1e-6);
}

TEST_CASE("values of elementary ops") {
    Tape t;
    Matrix m(2, 2);
    m << 3, 4, 0, 0;
    const Var v = t.constant(m);
    CHECK(t.value(row_norms(t, v))(0, 0) == doctest::Approx(5.0));
    CHECK(t.value(row_norms(t, v))(1, 0) == 0.0);
    CHECK(t.value(silu(t, t.constant(Matrix::Zero(1, 1))))(0, 0) == 0.0);
    CHECK(t.value(mean_rows(t, v))(0, 1) == doctest::Approx(2.0));
    const Var g = gaussian_basis(t, t.constant(Matrix::Constant(1, 1, 1.0)), {1.0, 2.0}, {1.0, 1.0});
    CHECK(t.value(g)(0, 0) == doctest::Approx(1.0));
    CHECK(t.value(g)(0, 1) == doctest::Approx(std::exp(-1.0)));
}

TEST_CASE("zero-norm rows get a zero gradient") {
    Tape t;
    const Var v = t.parameter(Matrix::Zero(1, 3));
    const Var n = row_norms(t, v);
    t.backward(n);
    REQUIRE(t.grad(v).size() == 3);
    CHECK(t.grad(v).isZero());
}

TEST_CASE("constants never receive gradients and non-scalar roots are rejected") {
    Tape t;
    const Var c = t.constant(Matrix::Ones(2, 2));
    const Var p = t.parameter(Matrix::Ones(2, 2));
    const Var s = mean_rows(t, mul(t, c, p));
    CHECK(t.requires_grad(s));
    CHECK_FALSE(t.requires_grad(mean_rows(t, c)));
    CHECK_THROWS(t.backward(s));
    const Var root = weighted_sum(t, column(t, mean_rows(t, mul(t, c, p)), 0), {1.0});
    t.backward(root);
    CHECK(t.grad(c).size() == 0);
    CHECK(t.grad(p).isApprox(Matrix::Constant(2, 2, 0.5).cwiseProduct(Matrix(Eigen::Matrix2d{{1, 0}, {1, 0}}))));
}
