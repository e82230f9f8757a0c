#pragma once

// Evaluation-time edge perturbation sweep comparing the two heads.

#include "drlabel/graph.hpp"
#include "drlabel/model.hpp"
#include "drlabel/relaxation.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace drlabel {

struct RobustnessRow {
    PerturbMode mode = PerturbMode::drop;
    double fraction = 0.0;
    double sum_node_mae = 0.0;
    double drlabel_node_mae = 0.0;
    double sum_delta = 0.0;          // node MAE increase over the clean graph
    double drlabel_delta = 0.0;
    double sum_relative = 0.0;       // delta / clean, 0 when the clean error is 0
    double drlabel_relative = 0.0;

    friend bool operator==(const RobustnessRow&, const RobustnessRow&) = default;
};

struct RobustnessReport {
    std::vector<RobustnessRow> rows;
};

/// Both heads see the same perturbation of each instance (seeded by
/// derive_seed(seed, k)).
RobustnessReport run_robustness(const ModelParams& sum_head, const ModelParams& drlabel_head,
                                std::span<const DatasetRecord> dataset, std::span<const double> fractions,
                                std::span<const PerturbMode> modes, std::uint64_t seed);

/// CSV with header mode,fraction,sum_node_mae,drlabel_node_mae,sum_delta,
/// drlabel_delta,sum_relative,drlabel_relative; 17 significant digits.
void write_robustness_csv(std::ostream& out, const RobustnessReport& report);
RobustnessReport read_robustness_csv(std::istream& in);

}  // namespace drlabel
