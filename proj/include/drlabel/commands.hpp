#pragma once

// Subcommands of the drlabel executable, callable in-process.

#include "drlabel/audit.hpp"
#include "drlabel/checkpoint.hpp"
#include "drlabel/config.hpp"
#include "drlabel/robustness.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace drlabel {

struct GenDataSummary {
    Index count = 0;
    Index attempted = 0;
    double convergence_rate = 0.0;
    double mean_displacement = 0.0;  // over free atoms
};

/// Writes <out_dir>/dataset.jsonl and <out_dir>/gen_summary.json.
GenDataSummary cmd_gen_data(const ExperimentConfig& config, const std::filesystem::path& out_dir);
std::string to_json(const GenDataSummary& summary);

struct TrainOutcome {
    Checkpoint checkpoint;
    std::optional<Metrics> test;  // absent when the test split is empty
};

/// Trains on the configured split and writes checkpoint.json and history.csv
/// to `out_dir`. With `resume`, training continues from that checkpoint for
/// config.training.epochs more epochs.
TrainOutcome cmd_train(const ExperimentConfig& config, const std::vector<DatasetRecord>& dataset,
                       const std::filesystem::path& out_dir,
                       const std::optional<std::filesystem::path>& resume = std::nullopt);

struct SplitSummary {
    std::vector<Metrics> runs;
    Metrics mean;
    Metrics stddev;  // sample standard deviation; zero for a single run
};

/// Repeats cmd_train over `n_splits` split seeds (split.seed + k) into
/// <out_dir>/split_<k> and writes <out_dir>/splits_summary.json.
SplitSummary cmd_train_splits(const ExperimentConfig& config, const std::vector<DatasetRecord>& dataset,
                              const std::filesystem::path& out_dir, Index n_splits);

/// Metrics per split name ("all" plus train/val/test when the checkpoint's
/// split fits the dataset). Throws ShapeMismatch when the stored edges differ
/// from the checkpoint's graph policy or the species exceed the model.
std::map<std::string, Metrics> cmd_eval(const Checkpoint& checkpoint, const std::vector<DatasetRecord>& dataset,
                                        double aewt_threshold);
std::string eval_to_json(const std::map<std::string, Metrics>& metrics);

/// Sweep on the test split of the drlabel checkpoint (whole dataset when it
/// has none).
RobustnessReport cmd_robustness(const Checkpoint& sum_head, const Checkpoint& drlabel_head,
                                const std::vector<DatasetRecord>& dataset, std::span<const double> fractions,
                                std::span<const PerturbMode> modes, std::uint64_t seed);

std::string audit_to_json(const AuditReport& report);

void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history);

/// Full command line entry point. Returns 0 on success, 1 on validation
/// errors, 2 on audit or criteria failures.
int run_cli(int argc, char** argv);

}  // namespace drlabel
