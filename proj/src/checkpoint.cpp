#include "drlabel/checkpoint.hpp"

#include "json_support.hpp"

#include <fstream>
#include <sstream>

namespace drlabel {

using json_support::json;

namespace {

constexpr const char* kFormat = "drlabel-checkpoint";
constexpr int kVersion = 1;

json matrices_to_json(const std::vector<ad::Matrix>& ms) {
    json arr = json::array();
    for (const ad::Matrix& m : ms) arr.push_back(json_support::matrix_to_json(m));
    return arr;
}

std::vector<ad::Matrix> matrices_from_json(const json& j) {
    std::vector<ad::Matrix> out;
    for (const json& m : j) out.push_back(json_support::matrix_from_json(m));
    return out;
}

}  // namespace

std::string checkpoint_to_json(const Checkpoint& c) {
    json j;
    j["format"] = kFormat;
    j["version"] = kVersion;
    j["model"] = json_support::to_json(c.params.config());
    j["graph"] = json_support::to_json(c.graph_policy);
    j["training"] = json_support::to_json(c.training);
    j["split"] = c.split ? json_support::to_json(*c.split) : json(nullptr);
    json tensors = json::array();
    for (Index k = 0; k < c.params.size(); ++k) {
        json t = json_support::matrix_to_json(c.params.tensor(k));
        t["name"] = c.params.name(k);
        t["trainable"] = c.params.trainable(k);
        tensors.push_back(std::move(t));
    }
    j["tensors"] = std::move(tensors);
    j["optimizer"] = {{"step", c.optimizer.step},
                      {"first", matrices_to_json(c.optimizer.first)},
                      {"second", matrices_to_json(c.optimizer.second)}};
    json history = json::array();
    for (const EpochRecord& r : c.history) history.push_back(json_support::to_json(r));
    j["history"] = std::move(history);
    return j.dump();
}

Checkpoint checkpoint_from_json(const std::string& text) {
    try {
        const json j = json::parse(text);
        if (j.value("format", std::string()) != kFormat) throw ValidationError("not a drlabel checkpoint");
        if (j.at("version").get<int>() != kVersion) throw ValidationError("unsupported checkpoint version");

        Checkpoint c;
        const ModelConfig config = json_support::model_config_from_json(j.at("model"));
        // The freshly initialized layout defines the expected names and shapes.
        ModelParams layout = ModelParams::initialize(config, 0);
        const json& tensors = j.at("tensors");
        if (tensors.size() != layout.size()) throw ShapeMismatch("checkpoint tensor count does not match its config");
        for (Index k = 0; k < layout.size(); ++k) {
            const json& t = tensors[k];
            if (t.at("name").get<std::string>() != layout.name(k)) {
                throw ShapeMismatch("unexpected tensor '" + t.at("name").get<std::string>() + "'");
            }
            ad::Matrix m = json_support::matrix_from_json(t);
            if (m.rows() != layout.tensor(k).rows() || m.cols() != layout.tensor(k).cols()) {
                throw ShapeMismatch("tensor '" + layout.name(k) + "' has the wrong shape");
            }
            layout.tensor(k) = std::move(m);
        }
        if (!layout.all_finite()) throw ValidationError("checkpoint holds non-finite weights");
        c.params = std::move(layout);
        c.graph_policy = json_support::graph_policy_from_json(j.at("graph"));
        c.training = json_support::train_config_from_json(j.at("training"));
        if (!j.at("split").is_null()) c.split = json_support::split_config_from_json(j.at("split"));
        const json& opt = j.at("optimizer");
        c.optimizer.step = opt.at("step").get<Index>();
        c.optimizer.first = matrices_from_json(opt.at("first"));
        c.optimizer.second = matrices_from_json(opt.at("second"));
        for (const json& r : j.at("history")) c.history.push_back(json_support::epoch_record_from_json(r));
        return c;
    } catch (const nlohmann::json::exception& ex) {
        throw ValidationError(std::string("malformed checkpoint: ") + ex.what());
    }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << checkpoint_to_json(checkpoint) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read checkpoint " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return checkpoint_from_json(ss.str());
}

}  // namespace drlabel
