#pragma once

#include "drlabel/graph.hpp"
#include "drlabel/model.hpp"
#include "drlabel/relaxation.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace drlabel {

/// Noisy-node augmentation. One alpha ~ U[0, 1] per instance; every atom with
/// a non-zero target displacement moves to p0 + alpha * dp* + N(0, sigma^2 I)
/// and its target becomes p* - p~0. Fixed or already relaxed atoms are left
/// alone; the energy target is unchanged.
RelaxationInstance noisy_augment(const RelaxationInstance& instance, double sigma, std::uint64_t seed);

/// Same with an explicit interpolation factor.
RelaxationInstance noisy_augment_with_alpha(const RelaxationInstance& instance, double sigma, double alpha,
                                            std::uint64_t seed);

struct TrainConfig {
    Index epochs = 50;
    double learning_rate = 1e-3;
    Index batch_size = 16;
    double noisy_fraction = 0.0;  // noisy copies added per batch, as a fraction of its size
    double noise_sigma = 0.05;
    LossWeights weights;
    double aewt_threshold = 0.02;
    std::optional<double> grad_clip;  // global L2 norm
    std::uint64_t seed = 0;
};

void validate(const TrainConfig& config);

struct EpochRecord {
    Index epoch = 0;
    double train_total = 0.0;
    double train_graph = 0.0;
    double train_node = 0.0;
    double train_edge = 0.0;
    double val_energy_mae = 0.0;
    double val_aewt = 0.0;
    double val_node_mae = 0.0;

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct AdamState {
    Index step = 0;
    std::vector<ad::Matrix> first;
    std::vector<ad::Matrix> second;

    friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// Adaptive moment estimation (beta1 0.9, beta2 0.999, eps 1e-8) over the
/// trainable tensors.
class Adam {
public:
    Adam(double learning_rate, AdamState state = {});
    void apply(ModelParams& params, const std::vector<ad::Matrix>& grads);
    const AdamState& state() const { return state_; }

private:
    double lr_;
    AdamState state_;
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochRecord> history;
    AdamState optimizer;
};

/// Sets the energy readout bias to the mean target energy of `train_set`.
void initialize_energy_offset(ModelParams& params, std::span<const DatasetRecord> train_set);

/// Mini-batch training with a per-epoch seeded shuffle. Noisy copies rebuild
/// their graph with `policy`. `resume` continues from an earlier result: its
/// history is kept and epochs are numbered after it. Throws DivergedLoss on a
/// non-finite batch loss.
TrainResult train(std::span<const DatasetRecord> train_set, std::span<const DatasetRecord> val_set,
                  const ModelParams& initial, const TrainConfig& config, const GraphPolicy& policy,
                  const TrainResult* resume = nullptr);

struct Metrics {
    double energy_mae = 0.0;
    double aewt = 0.0;      // percent of |E - E*| < threshold
    double node_mae = 0.0;  // mean L2 displacement error over every free atom
    Index instances = 0;
    Index free_atoms = 0;
    Index degenerate_nodes = 0;

    friend bool operator==(const Metrics&, const Metrics&) = default;
};

double energy_mae(std::span<const double> abs_errors);
double aewt_percent(std::span<const double> abs_errors, double threshold);

struct EvalPerturbation {
    PerturbMode mode = PerturbMode::drop;  // drop or add
    double fraction = 0.0;
    std::uint64_t seed = 0;  // instance k uses derive_seed(seed, k)
};

/// Throws ValidationError on an empty dataset.
Metrics evaluate(const ModelParams& params, std::span<const DatasetRecord> dataset, double aewt_threshold = 0.02,
                 const std::optional<EvalPerturbation>& perturbation = std::nullopt);

}  // namespace drlabel
