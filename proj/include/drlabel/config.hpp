#pragma once

#include "drlabel/graph.hpp"
#include "drlabel/model.hpp"
#include "drlabel/relaxation.hpp"
#include "drlabel/training.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace drlabel {

/// Train/validation/test partition. Non-zero counts take precedence over the
/// fractions; the test split receives whatever the fractions leave over.
struct SplitConfig {
    double train_fraction = 0.6;
    double val_fraction = 0.2;
    Index train = 0;
    Index val = 0;
    Index test = 0;
    std::uint64_t seed = 0;

    friend bool operator==(const SplitConfig&, const SplitConfig&) = default;
};

struct Split {
    std::vector<Index> train;
    std::vector<Index> val;
    std::vector<Index> test;
};

/// Seeded permutation of [0, n) cut into the three parts.
Split make_split(Index n, const SplitConfig& config);

struct ExperimentConfig {
    DatasetConfig dataset;
    std::uint64_t seed = 0;
    ModelConfig model;
    TrainConfig training;
    SplitConfig split;
    double aewt_threshold = 0.02;
    std::vector<double> robustness_fractions{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    std::vector<PerturbMode> robustness_modes{PerturbMode::drop, PerturbMode::add};
    std::filesystem::path output_dir = "out";
};

/// Throws ValidationError on out-of-range values.
void validate(const ExperimentConfig& config);

/// Missing keys keep their defaults; unknown keys are rejected. The result
/// is validated.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& config);

}  // namespace drlabel
