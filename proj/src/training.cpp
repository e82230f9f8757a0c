#include "drlabel/training.hpp"

#include "drlabel/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace drlabel {

RelaxationInstance noisy_augment_with_alpha(const RelaxationInstance& instance, double sigma, double alpha,
                                            std::uint64_t seed) {
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ValidationError("sigma must be finite and non-negative");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha must lie in [0, 1]");
    RelaxationInstance out = instance;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    const std::vector<Vec3>& p0 = instance.system.positions;
    const std::vector<Vec3>& pstar = instance.equilibrium_positions;
    for (Index i = 0; i < p0.size(); ++i) {
        if (pstar[i] == p0[i]) continue;
        // Convex form so alpha = 0 and alpha = 1 land exactly on p0 and p*.
        Vec3 p = (1.0 - alpha) * p0[i] + alpha * pstar[i];
        if (sigma > 0.0) {
            const double nx = noise(rng), ny = noise(rng), nz = noise(rng);
            p += sigma * Vec3(nx, ny, nz);
        }
        out.system.positions[i] = p;
    }
    return out;
}

RelaxationInstance noisy_augment(const RelaxationInstance& instance, double sigma, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const double alpha = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    return noisy_augment_with_alpha(instance, sigma, alpha, derive_seed(seed, 1));
}

void validate(const TrainConfig& c) {
    if (!(c.learning_rate >= 0.0) || !std::isfinite(c.learning_rate)) {
        throw ValidationError("learning rate must be finite and non-negative");
    }
    if (c.batch_size < 1) throw ValidationError("batch size must be positive");
    if (!(c.noisy_fraction >= 0.0 && c.noisy_fraction <= 1.0)) {
        throw ValidationError("noisy fraction must lie in [0, 1]");
    }
    if (!(c.noise_sigma >= 0.0) || !std::isfinite(c.noise_sigma)) throw ValidationError("sigma must be non-negative");
    if (!(c.weights.lambda >= 0.0) || !(c.weights.gamma >= 0.0)) throw ValidationError("loss weights must be >= 0");
    if (!(c.aewt_threshold > 0.0)) throw ValidationError("AEwT threshold must be positive");
    if (c.grad_clip && !(*c.grad_clip > 0.0)) throw ValidationError("gradient clip must be positive");
}

Adam::Adam(double learning_rate, AdamState state) : lr_(learning_rate), state_(std::move(state)) {}

void Adam::apply(ModelParams& params, const std::vector<ad::Matrix>& grads) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    if (grads.size() != params.size()) throw ShapeMismatch("gradient count differs from tensor count");
    if (state_.first.empty()) {
        for (Index k = 0; k < params.size(); ++k) {
            state_.first.push_back(ad::Matrix::Zero(params.tensor(k).rows(), params.tensor(k).cols()));
            state_.second.push_back(ad::Matrix::Zero(params.tensor(k).rows(), params.tensor(k).cols()));
        }
    }
    if (state_.first.size() != params.size()) throw ShapeMismatch("optimizer state does not match the model");
    ++state_.step;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state_.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state_.step));
    for (Index k = 0; k < params.size(); ++k) {
        if (!params.trainable(k)) continue;
        ad::Matrix& m = state_.first[k];
        ad::Matrix& v = state_.second[k];
        m = b1 * m + (1.0 - b1) * grads[k];
        v = b2 * v + (1.0 - b2) * grads[k].cwiseProduct(grads[k]);
        const ad::Matrix step = ((m / c1).array() / ((v / c2).array().sqrt() + eps)).matrix();
        params.tensor(k) -= lr_ * step;
    }
}

void initialize_energy_offset(ModelParams& params, std::span<const DatasetRecord> train_set) {
    if (train_set.empty()) throw ValidationError("training split is empty");
    double sum = 0.0;
    for (const DatasetRecord& r : train_set) sum += r.instance.equilibrium_energy;
    params["energy.out_bias"](0, 0) = sum / static_cast<double>(train_set.size());
}

namespace {

struct LossSums {
    double total = 0.0, graph = 0.0, node = 0.0, edge = 0.0;
    Index count = 0;

    void add(const LossBreakdown& l) {
        total += l.total;
        graph += l.graph;
        node += l.node;
        edge += l.edge;
        ++count;
    }
};

}  // namespace

TrainResult train(std::span<const DatasetRecord> train_set, std::span<const DatasetRecord> val_set,
                  const ModelParams& initial, const TrainConfig& config, const GraphPolicy& policy,
                  const TrainResult* resume) {
    validate(config);
    if (train_set.empty()) throw ValidationError("training split is empty");

    std::vector<Sample> samples;
    samples.reserve(train_set.size());
    for (const DatasetRecord& r : train_set) samples.push_back(make_sample(r.instance, r.graph));

    TrainResult res;
    res.params = resume ? resume->params : initial;
    if (resume) res.history = resume->history;
    Adam adam(config.learning_rate, resume ? resume->optimizer : AdamState{});

    const Index first_epoch = res.history.size();
    std::vector<Index> order(samples.size());
    for (Index ep = 0; ep < config.epochs; ++ep) {
        const Index epoch = first_epoch + ep;
        const std::uint64_t epoch_seed = derive_seed(config.seed, epoch);
        std::iota(order.begin(), order.end(), Index{0});
        std::mt19937_64 rng(epoch_seed);
        std::shuffle(order.begin(), order.end(), rng);

        LossSums sums;
        for (Index start = 0; start < order.size(); start += config.batch_size) {
            const Index end = std::min(order.size(), start + config.batch_size);
            std::vector<Sample> noisy;
            const auto n_noisy = static_cast<Index>(
                std::llround(config.noisy_fraction * static_cast<double>(end - start)));
            for (Index q = 0; q < n_noisy; ++q) {
                const RelaxationInstance inst = noisy_augment(train_set[order[start + q]].instance,
                                                              config.noise_sigma,
                                                              derive_seed(epoch_seed, 1000000 + start + q));
                try {
                    validate(inst.system, 1e-3);
                } catch (const ValidationError&) {
                    continue;  // noise pushed two atoms onto each other
                }
                noisy.push_back(make_sample(inst, build_graph(inst.system, policy)));
            }

            std::vector<ad::Matrix> grads;
            for (Index k = 0; k < res.params.size(); ++k) {
                grads.push_back(ad::Matrix::Zero(res.params.tensor(k).rows(), res.params.tensor(k).cols()));
            }
            Index count = 0;
            double batch_total = 0.0;
            auto accumulate = [&](const Sample& s) {
                const SampleGradient g = sample_gradient(res.params, s, config.weights);
                for (Index k = 0; k < grads.size(); ++k) grads[k] += g.params[k];
                sums.add(g.loss);
                batch_total += g.loss.total;
                ++count;
            };
            for (Index r = start; r < end; ++r) accumulate(samples[order[r]]);
            for (const Sample& s : noisy) accumulate(s);

            if (!std::isfinite(batch_total)) {
                throw DivergedLoss("non-finite loss in epoch " + std::to_string(epoch));
            }
            const double inv = 1.0 / static_cast<double>(count);
            double sq = 0.0;
            for (ad::Matrix& g : grads) {
                g *= inv;
                sq += g.squaredNorm();
            }
            if (config.grad_clip && std::sqrt(sq) > *config.grad_clip) {
                const double f = *config.grad_clip / std::sqrt(sq);
                for (ad::Matrix& g : grads) g *= f;
            }
            adam.apply(res.params, grads);
        }
        if (!res.params.all_finite()) throw DivergedLoss("parameters became non-finite in epoch " + std::to_string(epoch));

        EpochRecord rec;
        rec.epoch = epoch;
        const double n = static_cast<double>(sums.count);
        rec.train_total = sums.total / n;
        rec.train_graph = sums.graph / n;
        rec.train_node = sums.node / n;
        rec.train_edge = sums.edge / n;
        if (!val_set.empty()) {
            const Metrics m = evaluate(res.params, val_set, config.aewt_threshold);
            rec.val_energy_mae = m.energy_mae;
            rec.val_aewt = m.aewt;
            rec.val_node_mae = m.node_mae;
        }
        res.history.push_back(rec);
    }
    res.optimizer = adam.state();
    return res;
}

double energy_mae(std::span<const double> abs_errors) {
    if (abs_errors.empty()) throw ValidationError("no errors to average");
    return std::accumulate(abs_errors.begin(), abs_errors.end(), 0.0) / static_cast<double>(abs_errors.size());
}

double aewt_percent(std::span<const double> abs_errors, double threshold) {
    if (abs_errors.empty()) throw ValidationError("no errors to count");
    const auto within = std::count_if(abs_errors.begin(), abs_errors.end(), [&](double e) { return e < threshold; });
    return 100.0 * static_cast<double>(within) / static_cast<double>(abs_errors.size());
}

Metrics evaluate(const ModelParams& params, std::span<const DatasetRecord> dataset, double aewt_threshold,
                 const std::optional<EvalPerturbation>& perturbation) {
    if (dataset.empty()) throw ValidationError("cannot evaluate an empty dataset");
    if (perturbation && perturbation->mode == PerturbMode::add_new_pair) {
        throw ValidationError("evaluation perturbs by dropping or duplicating existing edges only");
    }
    Metrics m;
    std::vector<double> errors;
    errors.reserve(dataset.size());
    double node_sum = 0.0;
    for (Index k = 0; k < dataset.size(); ++k) {
        const DatasetRecord& rec = dataset[k];
        ForwardOptions opts;
        std::vector<Index> head_edges;
        if (perturbation) {
            const PerturbationMask mask = sample_perturbation_mask(rec.graph, perturbation->mode, perturbation->fraction,
                                                                   derive_seed(perturbation->seed, k));
            head_edges = perturbed_edge_indices(rec.graph, mask);
            opts.head_edges = &head_edges;
        }
        const ForwardOutput out = forward(params, rec.instance.system, rec.graph, opts);
        errors.push_back(std::abs(out.predicted_energy - rec.instance.equilibrium_energy));
        const AtomicSystem& sys = rec.instance.system;
        for (Index i = 0; i < sys.size(); ++i) {
            if (!sys.free_mask[i]) continue;
            const Vec3 target = rec.instance.equilibrium_positions[i] - sys.positions[i];
            node_sum += (out.predicted_displacements[i] - target).norm();
            ++m.free_atoms;
            if (!out.fit_status.empty() && out.fit_status[i] == FitStatus::degenerate) ++m.degenerate_nodes;
        }
    }
    m.instances = dataset.size();
    m.energy_mae = energy_mae(errors);
    m.aewt = aewt_percent(errors, aewt_threshold);
    m.node_mae = m.free_atoms == 0 ? 0.0 : node_sum / static_cast<double>(m.free_atoms);
    return m;
}

}  // namespace drlabel
