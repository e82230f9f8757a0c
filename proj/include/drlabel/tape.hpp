#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. A Tape records every operation of one forward pass; backward()
// walks it in reverse and accumulates gradients into every node that
// (transitively) depends on a parameter.

#include <Eigen/Core>

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

namespace drlabel::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Var {
    std::size_t id = 0;
};

class Tape;

/// Receives d(root)/d(output) and accumulates into the inputs.
using BackwardFn = std::function<void(Tape&, const Matrix& grad_out)>;

class Tape {
public:
    /// Leaf that never receives a gradient.
    Var constant(Matrix value);
    /// Leaf whose gradient is accumulated by backward().
    Var parameter(Matrix value);
    /// Interior node. `backward` is dropped when no input requires a gradient.
    Var record(Matrix value, std::span<const Var> inputs, BackwardFn backward);

    const Matrix& value(Var v) const { return nodes_[v.id].value; }
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
    /// Empty (0 x 0) when nothing flowed into `v`.
    const Matrix& grad(Var v) const { return nodes_[v.id].grad; }

    void accumulate(Var v, const Matrix& g);
    /// `root` must be 1 x 1.
    void backward(Var root);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        BackwardFn backward;
    };
    std::deque<Node> nodes_;
};

Var matmul(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
/// a (n x c) + row (1 x c) broadcast over rows.
Var add_row(Tape& t, Var a, Var row);
/// Elementwise product of equal shapes.
Var mul(Tape& t, Var a, Var b);
/// a (n x c) scaled row-wise by s (n x 1).
Var mul_col(Tape& t, Var a, Var s);
Var scale(Tape& t, Var a, double s);
Var silu(Tape& t, Var a);
Var abs(Tape& t, Var a);
Var concat_cols(Tape& t, std::span<const Var> parts);
/// out[r] = a[idx[r]].
Var gather_rows(Tape& t, Var a, std::vector<std::size_t> idx);
/// out[idx[r]] += a[r], out has `rows` rows.
Var scatter_add_rows(Tape& t, Var a, std::vector<std::size_t> idx, std::size_t rows);
/// 1 x c column means.
Var mean_rows(Tape& t, Var a);
/// n x 1 Euclidean norms of the rows; the gradient at a zero row is zero.
Var row_norms(Tape& t, Var a);
/// Rows divided by their norms.
Var normalize_rows(Tape& t, Var a);
/// sum_r w[r] * a(r, 0) for an n x 1 input, as 1 x 1.
Var weighted_sum(Tape& t, Var a, std::vector<double> w);
/// out(r, k) = exp(-gamma_k (x(r) - mu_k)^2) for an n x 1 input.
Var gaussian_basis(Tape& t, Var x, std::vector<double> mu, std::vector<double> gamma);
/// out(r, 0) = a(r, col).
Var column(Tape& t, Var a, Eigen::Index col);

}  // namespace drlabel::ad
