#include "drlabel/model.hpp"

#include "drlabel/errors.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace drlabel {

using ad::Matrix;
using ad::Tape;
using ad::Var;

std::string to_string(HeadMode mode) { return mode == HeadMode::sum ? "sum" : "drlabel"; }

HeadMode parse_head_mode(const std::string& name) {
    if (name == "sum") return HeadMode::sum;
    if (name == "drlabel" || name == "dr-label") return HeadMode::drlabel;
    throw ValidationError("unknown head mode '" + name + "'");
}

std::string head_prefix(HeadMode mode) { return mode == HeadMode::sum ? "sum_head." : "drlabel_head."; }

void validate(const ModelConfig& c) {
    if (c.n_species < 1) throw ValidationError("model needs at least one species");
    if (c.layers < 1) throw ValidationError("model needs at least one layer");
    if (c.width < 1 || c.gbf_bases < 2 || c.angular_channels < 1) {
        throw ValidationError("width, GBF bases and angular channels must be positive (>= 2 bases)");
    }
    if (!(c.gbf_cutoff > 0.0) || !std::isfinite(c.gbf_cutoff)) throw ValidationError("gbf_cutoff must be positive");
    if (!(c.aggregation_scale > 0.0) || !std::isfinite(c.aggregation_scale)) {
        throw ValidationError("aggregation_scale must be positive");
    }
    if (c.interpos_frequency > c.layers) {
        throw ValidationError("interpos frequency must be 0 or lie in [1, layers]");
    }
}

// ---------------------------------------------------------------------------
// Parameters

Index ModelParams::index_of(const std::string& name) const {
    const auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) throw std::out_of_range("no tensor named '" + name + "'");
    return static_cast<Index>(it - names_.begin());
}

Index ModelParams::num_trainable_scalars() const {
    Index n = 0;
    for (Index k = 0; k < tensors_.size(); ++k)
        if (trainable_[k]) n += static_cast<Index>(tensors_[k].size());
    return n;
}

bool ModelParams::all_finite() const {
    return std::all_of(tensors_.begin(), tensors_.end(), [](const Matrix& m) { return m.allFinite(); });
}

void ModelParams::add(std::string name, Matrix value, bool trainable) {
    if (std::find(names_.begin(), names_.end(), name) != names_.end()) {
        throw ValidationError("duplicate tensor name '" + name + "'");
    }
    names_.push_back(std::move(name));
    tensors_.push_back(std::move(value));
    trainable_.push_back(trainable);
}

ModelParams ModelParams::initialize(const ModelConfig& config, std::uint64_t seed) {
    validate(config);
    ModelParams p;
    p.config_ = config;
    std::mt19937_64 rng(seed);
    const auto H = static_cast<Eigen::Index>(config.width);
    const auto K = static_cast<Eigen::Index>(config.gbf_bases);
    const auto C = static_cast<Eigen::Index>(config.angular_channels);
    const auto S = static_cast<Eigen::Index>(config.n_species);

    auto uniform = [&](Eigen::Index rows, Eigen::Index cols, double bound) {
        std::uniform_real_distribution<double> u(-bound, bound);
        Matrix m(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = u(rng);
        return m;
    };
    auto dense = [&](const std::string& name, Eigen::Index in, Eigen::Index out) {
        p.add(name, uniform(in, out, 1.0 / std::sqrt(static_cast<double>(in))), true);
        p.add(name + "_bias", Matrix::Zero(1, out), true);
    };
    auto zero_dense = [&](const std::string& name, Eigen::Index in, Eigen::Index out) {
        p.add(name, Matrix::Zero(in, out), true);
        p.add(name + "_bias", Matrix::Zero(1, out), true);
    };

    p.add("embed", uniform(S, H, 1.0), true);

    Matrix centers(1, K), gammas(1, K);
    const double spacing = config.gbf_cutoff / static_cast<double>(K - 1);
    for (Eigen::Index k = 0; k < K; ++k) {
        centers(0, k) = spacing * static_cast<double>(k);
        gammas(0, k) = 1.0 / (2.0 * spacing * spacing);
    }
    p.add("gbf.centers", centers, false);
    p.add("gbf.gammas", gammas, false);
    p.add("gbf.scale", Matrix::Ones(S * S, 1), true);
    p.add("gbf.shift", Matrix::Zero(S * S, 1), true);

    for (Index l = 0; l < config.layers; ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        p.add(pre + "msg_node", uniform(H, H, 1.0 / std::sqrt(static_cast<double>(H))), true);
        p.add(pre + "msg_neighbor", uniform(H, H, 1.0 / std::sqrt(static_cast<double>(H))), true);
        dense(pre + "msg_edge", K, H);
        dense(pre + "update_in", 2 * H, H);
        dense(pre + "update_out", H, H);
    }

    const std::string hp = head_prefix(config.head_mode);
    p.add(hp + "tri_node", uniform(H, H, 1.0 / std::sqrt(static_cast<double>(H))), true);
    p.add(hp + "tri_neighbor", uniform(H, H, 1.0 / std::sqrt(static_cast<double>(H))), true);
    dense(hp + "tri_edge", K, H);
    p.add(hp + "tri_out", uniform(H, C, 1.0 / std::sqrt(static_cast<double>(H))), true);
    dense(hp + "sender", H, H);
    dense(hp + "receiver", H, H);
    dense(hp + "hidden", K + C + 2 * H, H);
    zero_dense(hp + "out", H, 1);

    dense("energy.hidden", H, H);
    zero_dense("energy.out", H, 1);
    return p;
}

Eigen::VectorXd gbf_encode(double distance, Index edge_type, const ModelParams& params) {
    const Matrix& mu = params["gbf.centers"];
    const Matrix& gamma = params["gbf.gammas"];
    const auto t = static_cast<Eigen::Index>(edge_type);
    const double y = params["gbf.scale"](t, 0) * distance + params["gbf.shift"](t, 0);
    Eigen::VectorXd out(mu.cols());
    for (Eigen::Index k = 0; k < mu.cols(); ++k) {
        const double u = y - mu(0, k);
        out(k) = std::exp(-gamma(0, k) * u * u);
    }
    return out;
}

Index ForwardOutput::degenerate_nodes() const {
    return static_cast<Index>(std::count(fit_status.begin(), fit_status.end(), FitStatus::degenerate));
}

// ---------------------------------------------------------------------------
// Custom operations

namespace {

// out[e] = sum over edges f sharing e's owner of a[f] * (d[e] . d[f]).
Var triplet_angular(Tape& t, Var a, Var d, const std::vector<std::vector<Index>>& incident) {
    const Matrix& av = t.value(a);
    const Matrix& dv = t.value(d);
    Matrix out = Matrix::Zero(av.rows(), av.cols());
    for (const auto& edges : incident)
        for (Index e : edges)
            for (Index f : edges) {
                const double c = dv.row(static_cast<Eigen::Index>(e)).dot(dv.row(static_cast<Eigen::Index>(f)));
                out.row(static_cast<Eigen::Index>(e)) += c * av.row(static_cast<Eigen::Index>(f));
            }
    const Var in[] = {a, d};
    return t.record(std::move(out), in, [a, d, &incident](Tape& tp, const Matrix& g) {
        const Matrix& av = tp.value(a);
        const Matrix& dv = tp.value(d);
        Matrix ga = Matrix::Zero(av.rows(), av.cols());
        Matrix gd = Matrix::Zero(dv.rows(), dv.cols());
        for (const auto& edges : incident)
            for (Index e0 : edges)
                for (Index f0 : edges) {
                    const auto e = static_cast<Eigen::Index>(e0);
                    const auto f = static_cast<Eigen::Index>(f0);
                    const double c = dv.row(e).dot(dv.row(f));
                    ga.row(f) += c * g.row(e);
                    const double w = g.row(e).dot(av.row(f));
                    gd.row(e) += w * dv.row(f);
                    gd.row(f) += w * dv.row(e);
                }
        tp.accumulate(a, ga);
        tp.accumulate(d, gd);
    });
}

struct NodeFit {
    std::vector<Index> entries;  // rows of s / d, repeats allowed
    SphereFit fit;
};

// Per-node sphere fit of the projections s[e] d[e] over each node's entries.
// Backward differentiates (2A) C = b implicitly; zero-shortcut and degenerate
// nodes output zero and pass no gradient.
Var sphere_fit_op(Tape& t, Var s, Var d, std::vector<NodeFit> nodes, std::vector<FitStatus>& status) {
    const Matrix& sv = t.value(s);
    const Matrix& dv = t.value(d);
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(nodes.size()), 3);
    status.assign(nodes.size(), FitStatus::degenerate);
    std::vector<Vec3> xs;
    for (Index i = 0; i < nodes.size(); ++i) {
        xs.clear();
        for (Index e : nodes[i].entries) {
            const auto r = static_cast<Eigen::Index>(e);
            xs.push_back(sv(r, 0) * dv.row(r).transpose());
        }
        nodes[i].fit = sphere_fit(xs);
        status[i] = nodes[i].fit.status;
        if (status[i] == FitStatus::ok) out.row(static_cast<Eigen::Index>(i)) = nodes[i].fit.displacement.transpose();
    }
    const Var in[] = {s, d};
    return t.record(std::move(out), in, [s, d, nodes = std::move(nodes)](Tape& tp, const Matrix& g) {
        const Matrix& sv = tp.value(s);
        const Matrix& dv = tp.value(d);
        Matrix gs = Matrix::Zero(sv.rows(), 1);
        Matrix gd = Matrix::Zero(dv.rows(), 3);
        for (Index i = 0; i < nodes.size(); ++i) {
            const NodeFit& nf = nodes[i];
            if (nf.fit.status != FitStatus::ok) continue;
            const Vec3 g_center = 2.0 * g.row(static_cast<Eigen::Index>(i)).transpose();
            Vec3 lambda;
            if (!solve3x3(2.0 * nf.fit.normal, g_center, lambda)) continue;
            const Mat3 g_normal = -2.0 * lambda * nf.fit.center.transpose();
            const Mat3 sym = g_normal + g_normal.transpose();
            const double inv_n = 1.0 / static_cast<double>(nf.entries.size());
            for (Index e0 : nf.entries) {
                const auto e = static_cast<Eigen::Index>(e0);
                const Vec3 dir = dv.row(e).transpose();
                const Vec3 x = sv(e, 0) * dir;
                const Vec3 gx = inv_n * (sym * x + x.squaredNorm() * lambda + 2.0 * x.dot(lambda) * x);
                gs(e, 0) += gx.dot(dir);
                gd.row(e) += sv(e, 0) * gx.transpose();
            }
        }
        tp.accumulate(s, gs);
        tp.accumulate(d, gd);
    });
}

// ---------------------------------------------------------------------------
// Network

struct Topology {
    std::vector<Index> owners;
    std::vector<Index> neighbors;
    std::vector<Index> edge_types;
    std::vector<std::vector<Index>> incident;  // clean graph
    std::vector<Index> head_edges;             // multiset of edge rows
    std::vector<Index> head_owners;            // owner of each head entry
    Matrix free_col;                           // N x 1 of 0 / 1
    Matrix species_onehot;                     // N x S
};

Topology make_topology(const ModelParams& params, const AtomicSystem& system, const DirectedGraph& graph,
                       const ForwardOptions& options) {
    const Index n = system.size();
    const Index S = params.config().n_species;
    if (graph.num_nodes() != n) throw ValidationError("graph and system sizes differ");
    if (system.atom_types.size() != n || system.free_mask.size() != n) {
        throw ValidationError("system arrays have inconsistent lengths");
    }
    Topology topo;
    topo.species_onehot = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(S));
    topo.free_col = Matrix::Zero(static_cast<Eigen::Index>(n), 1);
    for (Index i = 0; i < n; ++i) {
        const int ty = system.atom_types[i];
        if (ty < 0 || static_cast<Index>(ty) >= S) throw ShapeMismatch("atom type outside the model's species range");
        topo.species_onehot(static_cast<Eigen::Index>(i), ty) = 1.0;
        topo.free_col(static_cast<Eigen::Index>(i), 0) = system.free_mask[i] ? 1.0 : 0.0;
    }
    for (const Edge& e : graph.edges()) {
        topo.owners.push_back(e.node);
        topo.neighbors.push_back(e.neighbor);
        topo.edge_types.push_back(static_cast<Index>(system.atom_types[e.node]) * S +
                                  static_cast<Index>(system.atom_types[e.neighbor]));
    }
    topo.incident.resize(n);
    for (Index i = 0; i < n; ++i) topo.incident[i] = graph.incident(i);
    if (options.head_edges) {
        topo.head_edges = *options.head_edges;
        for (Index e : topo.head_edges) {
            if (e >= graph.num_edges()) throw ValidationError("head edge index out of range");
        }
    } else {
        topo.head_edges.resize(graph.num_edges());
        for (Index e = 0; e < graph.num_edges(); ++e) topo.head_edges[e] = e;
    }
    for (Index e : topo.head_edges) topo.head_owners.push_back(topo.owners[e]);
    if (options.edge_scalar_override && options.edge_scalar_override->size() != graph.num_edges()) {
        throw ValidationError("edge scalar override must hold one value per edge");
    }
    return topo;
}

struct HeadResult {
    Var displacement;  // N x 3, fixed atoms zeroed
    Var scalars;       // E x 1
    std::vector<FitStatus> status;
};

struct NetResult {
    Var energy;
    HeadResult head;
    std::vector<Matrix> snapshots;
};

class Network {
public:
    Network(Tape& tape, const ModelParams& params, const Topology& topo, const ForwardOptions& options,
            bool param_grads)
        : t_(tape), p_(params), topo_(topo), options_(options) {
        vars_.reserve(params.size());
        for (Index k = 0; k < params.size(); ++k) {
            vars_.push_back(param_grads && params.trainable(k) ? t_.parameter(params.tensor(k))
                                                               : t_.constant(params.tensor(k)));
        }
        const Matrix& mu = params["gbf.centers"];
        const Matrix& gamma = params["gbf.gammas"];
        mu_.assign(mu.data(), mu.data() + mu.size());
        gamma_.assign(gamma.data(), gamma.data() + gamma.size());
    }

    Var param(Index k) const { return vars_[k]; }

    NetResult run(Var positions) {
        const ModelConfig& cfg = p_.config();
        const Var free_col = t_.constant(topo_.free_col);
        const Var diff0 = edge_vectors(positions);
        const Var d0 = ad::normalize_rows(t_, diff0);
        Var g = gbf(ad::row_norms(t_, diff0));
        Var h = ad::matmul(t_, t_.constant(topo_.species_onehot), P("embed"));

        NetResult res;
        const Index F = cfg.interpos_frequency;
        for (Index l = 0; l < cfg.layers; ++l) {
            h = layer(l, h, g);
            if (F > 0 && (l + 1) % F == 0 && l + 1 < cfg.layers) {
                const HeadResult mid = head(h, g, d0, free_col);
                const Var moved = ad::add(t_, positions, mid.displacement);
                res.snapshots.push_back(t_.value(moved));
                g = gbf(ad::row_norms(t_, edge_vectors(moved)));
            }
        }
        res.head = head(h, g, d0, free_col);
        const Var pooled = ad::mean_rows(t_, h);
        const Var hid = ad::silu(t_, dense(pooled, "energy.hidden"));
        res.energy = dense(hid, "energy.out");
        return res;
    }

private:
    Var P(const std::string& name) const { return vars_[p_.index_of(name)]; }

    Var dense(Var x, const std::string& name) {
        return ad::add_row(t_, ad::matmul(t_, x, P(name)), P(name + "_bias"));
    }

    Var edge_vectors(Var positions) {
        return ad::sub(t_, ad::gather_rows(t_, positions, topo_.owners),
                       ad::gather_rows(t_, positions, topo_.neighbors));
    }

    Var gbf(Var dist) {
        const Var a = ad::gather_rows(t_, P("gbf.scale"), topo_.edge_types);
        const Var b = ad::gather_rows(t_, P("gbf.shift"), topo_.edge_types);
        return ad::gaussian_basis(t_, ad::add(t_, ad::mul(t_, a, dist), b), mu_, gamma_);
    }

    // Edge-wise term combining owner, neighbor and edge features.
    Var edge_mix(Var h, Var g, const std::string& node_w, const std::string& neighbor_w, const std::string& edge_w) {
        const Var own = ad::gather_rows(t_, ad::matmul(t_, h, P(node_w)), topo_.owners);
        const Var nb = ad::gather_rows(t_, ad::matmul(t_, h, P(neighbor_w)), topo_.neighbors);
        return ad::add(t_, ad::add(t_, own, nb), dense(g, edge_w));
    }

    Var layer(Index l, Var h, Var g) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        const Var msg = ad::silu(t_, edge_mix(h, g, pre + "msg_node", pre + "msg_neighbor", pre + "msg_edge"));
        const Var agg = ad::scale(t_, ad::scatter_add_rows(t_, msg, topo_.owners, topo_.species_onehot.rows()),
                                  p_.config().aggregation_scale);
        const Var cat_parts[] = {h, agg};
        const Var u = ad::silu(t_, dense(ad::concat_cols(t_, cat_parts), pre + "update_in"));
        return ad::add(t_, h, dense(u, pre + "update_out"));
    }

    HeadResult head(Var h, Var g, Var d0, Var free_col) {
        const std::string hp = head_prefix(p_.config().head_mode);
        const Var tri = ad::silu(t_, edge_mix(h, g, hp + "tri_node", hp + "tri_neighbor", hp + "tri_edge"));
        const Var weights = ad::matmul(t_, tri, P(hp + "tri_out"));
        const Var ang = ad::scale(t_, triplet_angular(t_, weights, d0, topo_.incident), p_.config().aggregation_scale);
        const Var sender = ad::silu(t_, dense(h, hp + "sender"));
        const Var receiver = ad::silu(t_, dense(h, hp + "receiver"));
        const Var parts[] = {g, ang, ad::gather_rows(t_, sender, topo_.owners),
                             ad::gather_rows(t_, receiver, topo_.neighbors)};
        const Var hidden = ad::silu(t_, dense(ad::concat_cols(t_, parts), hp + "hidden"));
        Var s = dense(hidden, hp + "out");
        if (options_.edge_scalar_override) {
            Matrix m(static_cast<Eigen::Index>(options_.edge_scalar_override->size()), 1);
            for (Index e = 0; e < options_.edge_scalar_override->size(); ++e) {
                m(static_cast<Eigen::Index>(e), 0) = (*options_.edge_scalar_override)[e];
            }
            s = t_.constant(std::move(m));
        }

        HeadResult out;
        out.scalars = s;
        const auto n = static_cast<Index>(topo_.species_onehot.rows());
        Var disp;
        if (p_.config().head_mode == HeadMode::sum) {
            const Var vec = ad::mul_col(t_, d0, s);
            disp = ad::scatter_add_rows(t_, ad::gather_rows(t_, vec, topo_.head_edges), topo_.head_owners, n);
        } else {
            std::vector<NodeFit> nodes(n);
            for (Index k = 0; k < topo_.head_edges.size(); ++k) {
                nodes[topo_.head_owners[k]].entries.push_back(topo_.head_edges[k]);
            }
            disp = sphere_fit_op(t_, s, d0, std::move(nodes), out.status);
        }
        out.displacement = ad::mul_col(t_, disp, free_col);
        return out;
    }

    Tape& t_;
    const ModelParams& p_;
    const Topology& topo_;
    const ForwardOptions& options_;
    std::vector<Var> vars_;
    std::vector<double> mu_;
    std::vector<double> gamma_;
};

Matrix positions_matrix(const std::vector<Vec3>& positions) {
    Matrix m(static_cast<Eigen::Index>(positions.size()), 3);
    for (Index i = 0; i < positions.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = positions[i].transpose();
    return m;
}

std::vector<Vec3> rows_to_vec3(const Matrix& m) {
    std::vector<Vec3> out(static_cast<Index>(m.rows()));
    for (Index i = 0; i < out.size(); ++i) out[i] = m.row(static_cast<Eigen::Index>(i)).transpose();
    return out;
}

std::vector<double> free_weights(const std::vector<bool>& free_mask) {
    const auto n_free = static_cast<double>(std::count(free_mask.begin(), free_mask.end(), true));
    std::vector<double> w(free_mask.size(), 0.0);
    for (Index i = 0; i < w.size(); ++i)
        if (free_mask[i]) w[i] = 1.0 / n_free;
    return w;
}

struct TapedLoss {
    Var total;
    LossBreakdown values;
};

TapedLoss taped_loss(Tape& t, const NetResult& net, const Sample& sample, const LossWeights& w, HeadMode mode) {
    TapedLoss out;
    Matrix e_target(1, 1);
    e_target(0, 0) = sample.target_energy;
    const Var lg = ad::abs(t, ad::sub(t, net.energy, t.constant(e_target)));
    const Var dev = ad::sub(t, net.head.displacement, t.constant(positions_matrix(sample.target_displacements)));
    const Var lv = ad::weighted_sum(t, ad::row_norms(t, dev), free_weights(sample.system.free_mask));
    Var total = ad::add(t, lg, ad::scale(t, lv, w.lambda));
    out.values.graph = t.value(lg)(0, 0);
    out.values.node = t.value(lv)(0, 0);
    if (mode == HeadMode::drlabel) {
        const Index E = sample.target_magnitudes.size();
        Matrix m(static_cast<Eigen::Index>(E), 1);
        for (Index e = 0; e < E; ++e) m(static_cast<Eigen::Index>(e), 0) = sample.target_magnitudes[e];
        const Var le = ad::weighted_sum(t, ad::abs(t, ad::sub(t, net.head.scalars, t.constant(std::move(m)))),
                                        std::vector<double>(E, E == 0 ? 0.0 : 1.0 / static_cast<double>(E)));
        total = ad::add(t, total, ad::scale(t, le, w.gamma));
        out.values.edge = t.value(le)(0, 0);
    }
    out.total = total;
    out.values.total = t.value(total)(0, 0);
    return out;
}

void check_sample(const Sample& sample) {
    const Index n = sample.system.size();
    if (sample.target_displacements.size() != n) throw ValidationError("target displacement count differs from N");
    if (sample.target_magnitudes.size() != sample.graph.num_edges()) {
        throw ValidationError("target magnitudes must align with graph edges");
    }
}

void check_weights(const LossWeights& w) {
    if (!(w.lambda >= 0.0) || !(w.gamma >= 0.0) || !std::isfinite(w.lambda) || !std::isfinite(w.gamma)) {
        throw ValidationError("loss weights must be finite and non-negative");
    }
}

}  // namespace

ForwardOutput forward(const ModelParams& params, const AtomicSystem& system, const DirectedGraph& graph,
                      const ForwardOptions& options) {
    const Topology topo = make_topology(params, system, graph, options);
    Tape tape;
    Network net(tape, params, topo, options, false);
    const NetResult res = net.run(tape.constant(positions_matrix(system.positions)));

    ForwardOutput out;
    out.predicted_energy = tape.value(res.energy)(0, 0);
    out.predicted_displacements = rows_to_vec3(tape.value(res.head.displacement));
    const Matrix& s = tape.value(res.head.scalars);
    out.edge_scalars.assign(s.data(), s.data() + s.size());
    for (const Matrix& snap : res.snapshots) out.intermediate_positions.push_back(rows_to_vec3(snap));
    if (params.config().head_mode == HeadMode::drlabel) {
        out.predicted_magnitudes = MagnitudeMatrix::from_aligned(graph, out.edge_scalars);
        out.fit_status = res.head.status;
    }
    return out;
}

Sample make_sample(const RelaxationInstance& instance, const DirectedGraph& graph) {
    Sample s{instance.system, graph, instance.displacements(), instance.equilibrium_energy, {}};
    s.target_magnitudes = deconstruct_labels(instance.system.positions, s.target_displacements, graph).aligned(graph);
    return s;
}

LossBreakdown loss(const ForwardOutput& output, const Sample& sample, const LossWeights& w) {
    check_weights(w);
    check_sample(sample);
    const Index n = sample.system.size();
    if (output.predicted_displacements.size() != n) throw ValidationError("prediction has the wrong atom count");

    LossBreakdown out;
    out.graph = std::abs(output.predicted_energy - sample.target_energy);
    const std::vector<double> fw = free_weights(sample.system.free_mask);
    for (Index i = 0; i < n; ++i) {
        out.node += fw[i] * (output.predicted_displacements[i] - sample.target_displacements[i]).norm();
    }
    out.total = out.graph + w.lambda * out.node;
    if (output.predicted_magnitudes) {
        const std::vector<double> pred = output.predicted_magnitudes->aligned(sample.graph);
        const Index E = pred.size();
        for (Index e = 0; e < E; ++e) {
            out.edge += (1.0 / static_cast<double>(E)) * std::abs(pred[e] - sample.target_magnitudes[e]);
        }
        out.total = out.total + w.gamma * out.edge;
    }
    return out;
}

LossBreakdown loss(const ForwardOutput& output, const RelaxationInstance& target,
                   const MagnitudeMatrix& target_magnitudes, const DirectedGraph& graph, const LossWeights& w) {
    if (!target_magnitudes.covers_exactly(graph)) throw ValidationError("target magnitudes do not cover the graph");
    const Sample s{target.system, graph, target.displacements(), target.equilibrium_energy,
                   target_magnitudes.aligned(graph)};
    return loss(output, s, w);
}

SampleGradient sample_gradient(const ModelParams& params, const Sample& sample, const LossWeights& w,
                               const ForwardOptions& options) {
    check_weights(w);
    check_sample(sample);
    const Topology topo = make_topology(params, sample.system, sample.graph, options);
    Tape tape;
    Network net(tape, params, topo, options, true);
    const Var pos = tape.parameter(positions_matrix(sample.system.positions));
    const NetResult res = net.run(pos);
    const TapedLoss tl = taped_loss(tape, res, sample, w, params.config().head_mode);
    tape.backward(tl.total);

    SampleGradient out;
    out.loss = tl.values;
    out.params.reserve(params.size());
    for (Index k = 0; k < params.size(); ++k) {
        const Matrix& g = tape.grad(net.param(k));
        out.params.push_back(g.size() == 0 ? Matrix::Zero(params.tensor(k).rows(), params.tensor(k).cols()) : g);
    }
    const Matrix& gp = tape.grad(pos);
    out.positions = gp.size() == 0 ? std::vector<Vec3>(sample.system.size(), Vec3::Zero()) : rows_to_vec3(gp);
    return out;
}

LossBreakdown sample_loss(const ModelParams& params, const Sample& sample, const LossWeights& w,
                          const ForwardOptions& options) {
    check_weights(w);
    check_sample(sample);
    const Topology topo = make_topology(params, sample.system, sample.graph, options);
    Tape tape;
    Network net(tape, params, topo, options, false);
    const NetResult res = net.run(tape.constant(positions_matrix(sample.system.positions)));
    return taped_loss(tape, res, sample, w, params.config().head_mode).values;
}

BatchGradient gradient(const ModelParams& params, std::span<const Sample> batch, const LossWeights& w) {
    if (batch.empty()) throw ValidationError("gradient needs a non-empty batch");
    BatchGradient out;
    for (Index k = 0; k < params.size(); ++k) {
        out.params.push_back(Matrix::Zero(params.tensor(k).rows(), params.tensor(k).cols()));
    }
    for (const Sample& s : batch) {
        const SampleGradient g = sample_gradient(params, s, w);
        for (Index k = 0; k < params.size(); ++k) out.params[k] += g.params[k];
        out.mean_loss.total += g.loss.total;
        out.mean_loss.graph += g.loss.graph;
        out.mean_loss.node += g.loss.node;
        out.mean_loss.edge += g.loss.edge;
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (Matrix& m : out.params) m *= inv;
    out.mean_loss.total *= inv;
    out.mean_loss.graph *= inv;
    out.mean_loss.node *= inv;
    out.mean_loss.edge *= inv;
    return out;
}

}  // namespace drlabel
