#pragma once

// Invariant message-passing network with two interchangeable displacement
// heads: the sum-aggregation baseline and the DR-Label projection-fit head.

#include "drlabel/geometry.hpp"
#include "drlabel/relaxation.hpp"
#include "drlabel/tape.hpp"
#include "drlabel/types.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace drlabel {

enum class HeadMode { sum, drlabel };

std::string to_string(HeadMode mode);
HeadMode parse_head_mode(const std::string& name);

struct ModelConfig {
    Index n_species = 4;
    Index layers = 4;
    Index width = 64;
    Index gbf_bases = 32;
    double gbf_cutoff = 3.0;        // GBF centers span [0, gbf_cutoff]
    Index angular_channels = 16;    // triplet channels of the head's edge embedding
    double aggregation_scale = 0.1; // neighbor sums are multiplied by this
    HeadMode head_mode = HeadMode::drlabel;
    Index interpos_frequency = 0;   // F; 0 disables intermediate position updates

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Throws ValidationError on inconsistent sizes or F outside {0} U [1, L].
void validate(const ModelConfig& config);

/// Every weight of the network as named row-major tensors. GBF centers and
/// widths are stored but not trained.
class ModelParams {
public:
    /// Uniform fan-in initialization; the last layer of the displacement head
    /// and of the energy readout start at zero.
    static ModelParams initialize(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    ModelConfig& config() { return config_; }

    Index size() const { return tensors_.size(); }
    const std::string& name(Index k) const { return names_[k]; }
    bool trainable(Index k) const { return trainable_[k]; }
    ad::Matrix& tensor(Index k) { return tensors_[k]; }
    const ad::Matrix& tensor(Index k) const { return tensors_[k]; }

    /// Throws std::out_of_range for unknown names.
    Index index_of(const std::string& name) const;
    ad::Matrix& operator[](const std::string& name) { return tensors_[index_of(name)]; }
    const ad::Matrix& operator[](const std::string& name) const { return tensors_[index_of(name)]; }

    Index num_trainable_scalars() const;
    bool all_finite() const;

    /// Appends a tensor; used by initialize() and the checkpoint reader.
    void add(std::string name, ad::Matrix value, bool trainable);

    friend bool operator==(const ModelParams&, const ModelParams&) = default;

private:
    ModelConfig config_;
    std::vector<std::string> names_;
    std::vector<ad::Matrix> tensors_;
    std::vector<bool> trainable_;
};

/// Prefix of the displacement-head tensors for a head mode.
std::string head_prefix(HeadMode mode);

/// GBF activations of one distance for edge type t (= type_i * S + type_j).
Eigen::VectorXd gbf_encode(double distance, Index edge_type, const ModelParams& params);

struct ForwardOptions {
    /// Multiset of graph edge indices the displacement head aggregates over
    /// (robustness perturbations). nullptr: every edge once.
    const std::vector<Index>* head_edges = nullptr;
    /// Replaces the predicted per-edge scalars (aligned with graph edges).
    const std::vector<double>* edge_scalar_override = nullptr;
};

struct ForwardOutput {
    double predicted_energy = 0.0;
    std::vector<Vec3> predicted_displacements;
    /// drlabel mode only.
    std::optional<MagnitudeMatrix> predicted_magnitudes;
    /// Per-edge head output in graph edge order: the magnitude (drlabel) or
    /// the scale of the edge vector (sum).
    std::vector<double> edge_scalars;
    /// Positions after every intermediate update (F > 0).
    std::vector<std::vector<Vec3>> intermediate_positions;
    /// Sphere-fit status of the final head, per node (drlabel mode only).
    std::vector<FitStatus> fit_status;

    Index degenerate_nodes() const;
};

ForwardOutput forward(const ModelParams& params, const AtomicSystem& system,
                      const DirectedGraph& graph, const ForwardOptions& options = {});

struct LossWeights {
    double lambda = 1.0;  // node level
    double gamma = 1.0;   // edge level, ignored by the sum head
};

struct LossBreakdown {
    double total = 0.0;
    double graph = 0.0;  // L_G
    double node = 0.0;   // L_V
    double edge = 0.0;   // L_E
};

/// A relaxation record prepared for the network: initial system, graph and
/// the three levels of targets.
struct Sample {
    AtomicSystem system;
    DirectedGraph graph;
    std::vector<Vec3> target_displacements;
    double target_energy = 0.0;
    std::vector<double> target_magnitudes;  // aligned with graph edges
};

Sample make_sample(const RelaxationInstance& instance, const DirectedGraph& graph);

/// L = L_G + lambda L_V + gamma L_E with L_G = |E - E*|, L_V the mean L2
/// displacement error over free atoms and L_E the mean absolute magnitude
/// error over edges (drlabel mode; zero for the sum head).
LossBreakdown loss(const ForwardOutput& output, const RelaxationInstance& target,
                   const MagnitudeMatrix& target_magnitudes, const DirectedGraph& graph,
                   const LossWeights& weights);
LossBreakdown loss(const ForwardOutput& output, const Sample& sample, const LossWeights& weights);

struct SampleGradient {
    LossBreakdown loss;
    std::vector<ad::Matrix> params;  // aligned with ModelParams tensors
    std::vector<Vec3> positions;     // d loss / d initial position
};

/// Exact gradient of the total loss of one sample, through the sphere-fit
/// solve and any intermediate position updates.
SampleGradient sample_gradient(const ModelParams& params, const Sample& sample,
                               const LossWeights& weights, const ForwardOptions& options = {});

/// Loss of one sample computed on the same path as sample_gradient.
LossBreakdown sample_loss(const ModelParams& params, const Sample& sample, const LossWeights& weights,
                          const ForwardOptions& options = {});

struct BatchGradient {
    LossBreakdown mean_loss;
    std::vector<ad::Matrix> params;
};

/// Gradient of the mean total loss over the batch. Throws ValidationError on
/// an empty batch.
BatchGradient gradient(const ModelParams& params, std::span<const Sample> batch,
                       const LossWeights& weights);

}  // namespace drlabel
