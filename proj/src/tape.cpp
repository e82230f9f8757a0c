#include "drlabel/tape.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>

namespace drlabel::ad {

Var Tape::constant(Matrix value) {
    nodes_.push_back({std::move(value), {}, false, {}});
    return {nodes_.size() - 1};
}

Var Tape::parameter(Matrix value) {
    nodes_.push_back({std::move(value), {}, true, {}});
    return {nodes_.size() - 1};
}

Var Tape::record(Matrix value, std::span<const Var> inputs, BackwardFn backward) {
    bool needs = false;
    for (Var v : inputs) needs = needs || nodes_[v.id].requires_grad;
    nodes_.push_back({std::move(value), {}, needs, needs ? std::move(backward) : BackwardFn{}});
    return {nodes_.size() - 1};
}

void Tape::accumulate(Var v, const Matrix& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    assert(g.rows() == n.value.rows() && g.cols() == n.value.cols());
    if (n.grad.size() == 0) {
        n.grad = g;
    } else {
        n.grad += g;
    }
}

void Tape::backward(Var root) {
    if (value(root).rows() != 1 || value(root).cols() != 1) {
        throw std::invalid_argument("backward() needs a scalar root");
    }
    accumulate(root, Matrix::Ones(1, 1));
    for (std::size_t id = root.id + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (n.backward && n.grad.size() != 0) {
            // Copy: the callback may accumulate into other nodes only, but
            // keep the gradient stable regardless.
            const Matrix g = n.grad;
            n.backward(*this, g);
        }
    }
}

namespace {

Var rec1(Tape& t, Matrix value, Var a, BackwardFn fn) {
    const Var in[] = {a};
    return t.record(std::move(value), in, std::move(fn));
}

Var rec2(Tape& t, Matrix value, Var a, Var b, BackwardFn fn) {
    const Var in[] = {a, b};
    return t.record(std::move(value), in, std::move(fn));
}

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
    Matrix out = t.value(a) * t.value(b);
    return rec2(t, std::move(out), a, b, [a, b](Tape& tp, const Matrix& g) {
        if (tp.requires_grad(a)) tp.accumulate(a, g * tp.value(b).transpose());
        if (tp.requires_grad(b)) tp.accumulate(b, tp.value(a).transpose() * g);
    });
}

Var add(Tape& t, Var a, Var b) {
    Matrix out = t.value(a) + t.value(b);
    return rec2(t, std::move(out), a, b, [a, b](Tape& tp, const Matrix& g) {
        tp.accumulate(a, g);
        tp.accumulate(b, g);
    });
}

Var sub(Tape& t, Var a, Var b) {
    Matrix out = t.value(a) - t.value(b);
    return rec2(t, std::move(out), a, b, [a, b](Tape& tp, const Matrix& g) {
        tp.accumulate(a, g);
        if (tp.requires_grad(b)) tp.accumulate(b, -g);
    });
}

Var add_row(Tape& t, Var a, Var row) {
    Matrix out = t.value(a).rowwise() + t.value(row).row(0);
    return rec2(t, std::move(out), a, row, [a, row](Tape& tp, const Matrix& g) {
        tp.accumulate(a, g);
        if (tp.requires_grad(row)) tp.accumulate(row, g.colwise().sum());
    });
}

Var mul(Tape& t, Var a, Var b) {
    Matrix out = t.value(a).cwiseProduct(t.value(b));
    return rec2(t, std::move(out), a, b, [a, b](Tape& tp, const Matrix& g) {
        if (tp.requires_grad(a)) tp.accumulate(a, g.cwiseProduct(tp.value(b)));
        if (tp.requires_grad(b)) tp.accumulate(b, g.cwiseProduct(tp.value(a)));
    });
}

Var mul_col(Tape& t, Var a, Var s) {
    const Matrix& av = t.value(a);
    const Matrix& sv = t.value(s);
    Matrix out = av.array().colwise() * sv.col(0).array();
    return rec2(t, std::move(out), a, s, [a, s](Tape& tp, const Matrix& g) {
        if (tp.requires_grad(a)) {
            Matrix ga = g.array().colwise() * tp.value(s).col(0).array();
            tp.accumulate(a, ga);
        }
        if (tp.requires_grad(s)) {
            Matrix gs = g.cwiseProduct(tp.value(a)).rowwise().sum();
            tp.accumulate(s, gs);
        }
    });
}

Var scale(Tape& t, Var a, double s) {
    Matrix out = t.value(a) * s;
    return rec1(t, std::move(out), a, [a, s](Tape& tp, const Matrix& g) { tp.accumulate(a, g * s); });
}

Var silu(Tape& t, Var a) {
    const Matrix& x = t.value(a);
    Matrix sig = (1.0 + (-x.array()).exp()).inverse().matrix();
    Matrix out = x.cwiseProduct(sig);
    return rec1(t, std::move(out), a, [a, sig = std::move(sig)](Tape& tp, const Matrix& g) {
        const auto& xv = tp.value(a).array();
        Matrix d = (sig.array() * (1.0 + xv * (1.0 - sig.array()))).matrix();
        tp.accumulate(a, g.cwiseProduct(d));
    });
}

Var abs(Tape& t, Var a) {
    Matrix out = t.value(a).cwiseAbs();
    return rec1(t, std::move(out), a, [a](Tape& tp, const Matrix& g) {
        Matrix sign = tp.value(a).unaryExpr([](double v) { return double((v > 0) - (v < 0)); });
        tp.accumulate(a, g.cwiseProduct(sign));
    });
}

Var concat_cols(Tape& t, std::span<const Var> parts) {
    const Eigen::Index rows = t.value(parts[0]).rows();
    Eigen::Index cols = 0;
    for (Var p : parts) {
        if (t.value(p).rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
        cols += t.value(p).cols();
    }
    Matrix out(rows, cols);
    Eigen::Index c = 0;
    for (Var p : parts) {
        out.middleCols(c, t.value(p).cols()) = t.value(p);
        c += t.value(p).cols();
    }
    std::vector<Var> ins(parts.begin(), parts.end());
    return t.record(std::move(out), parts, [ins](Tape& tp, const Matrix& g) {
        Eigen::Index col = 0;
        for (Var p : ins) {
            const Eigen::Index w = tp.value(p).cols();
            if (tp.requires_grad(p)) tp.accumulate(p, g.middleCols(col, w));
            col += w;
        }
    });
}

Var gather_rows(Tape& t, Var a, std::vector<std::size_t> idx) {
    const Matrix& av = t.value(a);
    Matrix out(static_cast<Eigen::Index>(idx.size()), av.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = av.row(static_cast<Eigen::Index>(idx[r]));
    return rec1(t, std::move(out), a, [a, idx = std::move(idx)](Tape& tp, const Matrix& g) {
        Matrix ga = Matrix::Zero(tp.value(a).rows(), tp.value(a).cols());
        for (std::size_t r = 0; r < idx.size(); ++r) ga.row(static_cast<Eigen::Index>(idx[r])) += g.row(static_cast<Eigen::Index>(r));
        tp.accumulate(a, ga);
    });
}

Var scatter_add_rows(Tape& t, Var a, std::vector<std::size_t> idx, std::size_t rows) {
    const Matrix& av = t.value(a);
    if (static_cast<std::size_t>(av.rows()) != idx.size()) throw std::invalid_argument("scatter_add_rows: size mismatch");
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(rows), av.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(idx[r])) += av.row(static_cast<Eigen::Index>(r));
    return rec1(t, std::move(out), a, [a, idx = std::move(idx)](Tape& tp, const Matrix& g) {
        Matrix ga(static_cast<Eigen::Index>(idx.size()), g.cols());
        for (std::size_t r = 0; r < idx.size(); ++r) ga.row(static_cast<Eigen::Index>(r)) = g.row(static_cast<Eigen::Index>(idx[r]));
        tp.accumulate(a, ga);
    });
}

Var mean_rows(Tape& t, Var a) {
    const double n = static_cast<double>(t.value(a).rows());
    Matrix out = t.value(a).colwise().sum() / n;
    return rec1(t, std::move(out), a, [a, n](Tape& tp, const Matrix& g) {
        Matrix ga = g.replicate(tp.value(a).rows(), 1) / n;
        tp.accumulate(a, ga);
    });
}

Var row_norms(Tape& t, Var a) {
    Matrix out = t.value(a).rowwise().norm();
    return rec1(t, out, a, [a, out](Tape& tp, const Matrix& g) {
        const Matrix& x = tp.value(a);
        Matrix ga = Matrix::Zero(x.rows(), x.cols());
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            if (out(r, 0) > 0.0) ga.row(r) = g(r, 0) * x.row(r) / out(r, 0);
        }
        tp.accumulate(a, ga);
    });
}

Var normalize_rows(Tape& t, Var a) {
    const Matrix& x = t.value(a);
    Matrix norms = x.rowwise().norm();
    Matrix out = x.array().colwise() / norms.col(0).array();
    Matrix unit = out;
    return rec1(t, std::move(out), a, [a, unit = std::move(unit), norms = std::move(norms)](Tape& tp, const Matrix& g) {
        Matrix ga(unit.rows(), unit.cols());
        for (Eigen::Index r = 0; r < unit.rows(); ++r) {
            const double proj = g.row(r).dot(unit.row(r));
            ga.row(r) = (g.row(r) - proj * unit.row(r)) / norms(r, 0);
        }
        tp.accumulate(a, ga);
    });
}

Var weighted_sum(Tape& t, Var a, std::vector<double> w) {
    const Matrix& x = t.value(a);
    if (static_cast<std::size_t>(x.rows()) != w.size() || x.cols() != 1) {
        throw std::invalid_argument("weighted_sum: expects an n x 1 input with n weights");
    }
    double s = 0.0;
    for (std::size_t r = 0; r < w.size(); ++r) s += w[r] * x(static_cast<Eigen::Index>(r), 0);
    Matrix out(1, 1);
    out(0, 0) = s;
    return rec1(t, std::move(out), a, [a, w = std::move(w)](Tape& tp, const Matrix& g) {
        Matrix ga(static_cast<Eigen::Index>(w.size()), 1);
        for (std::size_t r = 0; r < w.size(); ++r) ga(static_cast<Eigen::Index>(r), 0) = w[r] * g(0, 0);
        tp.accumulate(a, ga);
    });
}

Var gaussian_basis(Tape& t, Var x, std::vector<double> mu, std::vector<double> gamma) {
    const Matrix& xv = t.value(x);
    const auto k = static_cast<Eigen::Index>(mu.size());
    Matrix out(xv.rows(), k);
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
        for (Eigen::Index c = 0; c < k; ++c) {
            const double d = xv(r, 0) - mu[static_cast<std::size_t>(c)];
            out(r, c) = std::exp(-gamma[static_cast<std::size_t>(c)] * d * d);
        }
    }
    Matrix val = out;
    return rec1(t, std::move(out), x,
                [x, mu = std::move(mu), gamma = std::move(gamma), val = std::move(val)](Tape& tp, const Matrix& g) {
                    const Matrix& xv2 = tp.value(x);
                    Matrix gx(xv2.rows(), 1);
                    for (Eigen::Index r = 0; r < xv2.rows(); ++r) {
                        double acc = 0.0;
                        for (Eigen::Index c = 0; c < val.cols(); ++c) {
                            const auto cc = static_cast<std::size_t>(c);
                            acc += g(r, c) * val(r, c) * (-2.0 * gamma[cc] * (xv2(r, 0) - mu[cc]));
                        }
                        gx(r, 0) = acc;
                    }
                    tp.accumulate(x, gx);
                });
}

Var column(Tape& t, Var a, Eigen::Index col) {
    Matrix out = t.value(a).col(col);
    return rec1(t, std::move(out), a, [a, col](Tape& tp, const Matrix& g) {
        Matrix ga = Matrix::Zero(tp.value(a).rows(), tp.value(a).cols());
        ga.col(col) = g.col(0);
        tp.accumulate(a, ga);
    });
}

}  // namespace drlabel::ad
