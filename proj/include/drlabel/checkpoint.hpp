#pragma once

// Checkpoints are JSON documents:
//   { "format": "drlabel-checkpoint", "version": 1,
//     "model": {...ModelConfig}, "graph": {...GraphPolicy},
//     "training": {...TrainConfig}, "split": {...SplitConfig} | null,
//     "tensors": [{"name", "trainable", "rows", "cols", "data"}],
//     "optimizer": {"step", "first": [...], "second": [...]},
//     "history": [{...EpochRecord}] }
// Tensor data is row-major; doubles are written in shortest round-trip form.

#include "drlabel/config.hpp"
#include "drlabel/model.hpp"
#include "drlabel/training.hpp"

#include <filesystem>
#include <optional>
#include <string>

namespace drlabel {

struct Checkpoint {
    ModelParams params;
    GraphPolicy graph_policy;
    TrainConfig training;
    std::optional<SplitConfig> split;
    AdamState optimizer;
    std::vector<EpochRecord> history;
};

std::string checkpoint_to_json(const Checkpoint& checkpoint);
/// Throws ShapeMismatch when tensors disagree with the stored model config.
Checkpoint checkpoint_from_json(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace drlabel
