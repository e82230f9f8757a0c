#include "drlabel/config.hpp"

#include "json_support.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace drlabel {

namespace json_support {

json matrix_to_json(const ad::Matrix& m) {
    json data = json::array();
    for (Eigen::Index k = 0; k < m.size(); ++k) data.push_back(m.data()[k]);
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

ad::Matrix matrix_from_json(const json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const json& data = j.at("data");
    if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols) {
        throw ShapeMismatch("tensor data does not match its shape");
    }
    ad::Matrix m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = data[static_cast<std::size_t>(k)].get<double>();
    return m;
}

json to_json(const GraphPolicy& p) {
    json j{{"kind", to_string(p.kind)}, {"cutoff", p.cutoff}, {"k", p.k}};
    j["max_neighbors"] = p.max_neighbors ? json(*p.max_neighbors) : json(nullptr);
    return j;
}

GraphPolicy graph_policy_from_json(const json& j) {
    GraphPolicy p;
    read_fields(j, "graph", [&](const std::string& k, const json& v) {
        if (k == "kind") p.kind = parse_graph_policy(v.get<std::string>());
        else if (k == "cutoff") p.cutoff = v.get<double>();
        else if (k == "k") p.k = v.get<Index>();
        else if (k == "max_neighbors") p.max_neighbors = v.is_null() ? std::nullopt : std::optional<Index>(v.get<Index>());
        else return false;
        return true;
    });
    return p;
}

json to_json(const ModelConfig& c) {
    return {{"n_species", c.n_species},
            {"layers", c.layers},
            {"width", c.width},
            {"gbf_bases", c.gbf_bases},
            {"gbf_cutoff", c.gbf_cutoff},
            {"angular_channels", c.angular_channels},
            {"aggregation_scale", c.aggregation_scale},
            {"head_mode", to_string(c.head_mode)},
            {"interpos_frequency", c.interpos_frequency}};
}

ModelConfig model_config_from_json(const json& j, ModelConfig c) {
    read_fields(j, "model", [&](const std::string& k, const json& v) {
        if (k == "n_species") c.n_species = v.get<Index>();
        else if (k == "layers") c.layers = v.get<Index>();
        else if (k == "width") c.width = v.get<Index>();
        else if (k == "gbf_bases") c.gbf_bases = v.get<Index>();
        else if (k == "gbf_cutoff") c.gbf_cutoff = v.get<double>();
        else if (k == "angular_channels") c.angular_channels = v.get<Index>();
        else if (k == "aggregation_scale") c.aggregation_scale = v.get<double>();
        else if (k == "head_mode") c.head_mode = parse_head_mode(v.get<std::string>());
        else if (k == "interpos_frequency") c.interpos_frequency = v.get<Index>();
        else return false;
        return true;
    });
    return c;
}

json to_json(const TrainConfig& c) {
    json j{{"epochs", c.epochs},
           {"learning_rate", c.learning_rate},
           {"batch_size", c.batch_size},
           {"noisy_fraction", c.noisy_fraction},
           {"noise_sigma", c.noise_sigma},
           {"lambda", c.weights.lambda},
           {"gamma", c.weights.gamma},
           {"aewt_threshold", c.aewt_threshold},
           {"seed", c.seed}};
    j["grad_clip"] = c.grad_clip ? json(*c.grad_clip) : json(nullptr);
    return j;
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
    read_fields(j, "training", [&](const std::string& k, const json& v) {
        if (k == "epochs") c.epochs = v.get<Index>();
        else if (k == "learning_rate") c.learning_rate = v.get<double>();
        else if (k == "batch_size") c.batch_size = v.get<Index>();
        else if (k == "noisy_fraction") c.noisy_fraction = v.get<double>();
        else if (k == "noise_sigma") c.noise_sigma = v.get<double>();
        else if (k == "lambda") c.weights.lambda = v.get<double>();
        else if (k == "gamma") c.weights.gamma = v.get<double>();
        else if (k == "aewt_threshold") c.aewt_threshold = v.get<double>();
        else if (k == "seed") c.seed = v.get<std::uint64_t>();
        else if (k == "grad_clip") c.grad_clip = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
        else return false;
        return true;
    });
    return c;
}

json to_json(const DatasetConfig& c) {
    json r0 = json::array();
    for (Eigen::Index a = 0; a < c.potential.r0.rows(); ++a) {
        json row = json::array();
        for (Eigen::Index b = 0; b < c.potential.r0.cols(); ++b) row.push_back(c.potential.r0(a, b));
        r0.push_back(std::move(row));
    }
    return {{"n_instances", c.n_instances},
            {"min_atoms", c.min_atoms},
            {"max_atoms", c.max_atoms},
            {"n_species", c.n_species},
            {"density", c.density},
            {"min_sep", c.min_sep},
            {"fixed_fraction", c.fixed_fraction},
            {"min_converged_rate", c.min_converged_rate},
            {"potential", {{"r0", std::move(r0)}, {"stiffness", c.potential.stiffness}, {"cutoff", c.potential.cutoff}}},
            {"relax",
             {{"step_size", c.relax.step_size},
              {"max_steps", c.relax.max_steps},
              {"f_tol", c.relax.f_tol},
              {"max_halvings", c.relax.max_halvings}}},
            {"graph", to_json(c.graph)}};
}

DatasetConfig dataset_config_from_json(const json& j, DatasetConfig c) {
    bool explicit_r0 = false;
    double r0_base = 1.0, r0_step = 0.05;
    read_fields(j, "dataset", [&](const std::string& k, const json& v) {
        if (k == "n_instances") c.n_instances = v.get<Index>();
        else if (k == "min_atoms") c.min_atoms = v.get<Index>();
        else if (k == "max_atoms") c.max_atoms = v.get<Index>();
        else if (k == "n_species") c.n_species = v.get<Index>();
        else if (k == "density") c.density = v.get<double>();
        else if (k == "min_sep") c.min_sep = v.get<double>();
        else if (k == "fixed_fraction") c.fixed_fraction = v.get<double>();
        else if (k == "min_converged_rate") c.min_converged_rate = v.get<double>();
        else if (k == "graph") c.graph = graph_policy_from_json(v);
        else if (k == "relax") {
            read_fields(v, "relax", [&](const std::string& rk, const json& rv) {
                if (rk == "step_size") c.relax.step_size = rv.get<double>();
                else if (rk == "max_steps") c.relax.max_steps = rv.get<int>();
                else if (rk == "f_tol") c.relax.f_tol = rv.get<double>();
                else if (rk == "max_halvings") c.relax.max_halvings = rv.get<int>();
                else return false;
                return true;
            });
        } else if (k == "potential") {
            read_fields(v, "potential", [&](const std::string& pk, const json& pv) {
                if (pk == "stiffness") c.potential.stiffness = pv.get<double>();
                else if (pk == "cutoff") c.potential.cutoff = pv.get<double>();
                else if (pk == "r0_base") r0_base = pv.get<double>();
                else if (pk == "r0_step") r0_step = pv.get<double>();
                else if (pk == "r0") {
                    const auto rows = pv.get<std::vector<std::vector<double>>>();
                    c.potential.r0.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
                    for (Index a = 0; a < rows.size(); ++a) {
                        if (rows[a].size() != rows.size()) throw ValidationError("r0 must be square");
                        for (Index b = 0; b < rows.size(); ++b) {
                            c.potential.r0(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = rows[a][b];
                        }
                    }
                    explicit_r0 = true;
                } else return false;
                return true;
            });
        } else return false;
        return true;
    });
    if (!explicit_r0) {
        c.potential = PotentialParams::make_default(c.n_species, r0_base, r0_step, c.potential.stiffness,
                                                    c.potential.cutoff);
    }
    return c;
}

json to_json(const SplitConfig& c) {
    return {{"train_fraction", c.train_fraction}, {"val_fraction", c.val_fraction}, {"train", c.train},
            {"val", c.val},                       {"test", c.test},                 {"seed", c.seed}};
}

SplitConfig split_config_from_json(const json& j, SplitConfig c) {
    read_fields(j, "split", [&](const std::string& k, const json& v) {
        if (k == "train_fraction") c.train_fraction = v.get<double>();
        else if (k == "val_fraction") c.val_fraction = v.get<double>();
        else if (k == "train") c.train = v.get<Index>();
        else if (k == "val") c.val = v.get<Index>();
        else if (k == "test") c.test = v.get<Index>();
        else if (k == "seed") c.seed = v.get<std::uint64_t>();
        else return false;
        return true;
    });
    return c;
}

json to_json(const Metrics& m) {
    return {{"energy_mae", m.energy_mae}, {"aewt", m.aewt},           {"node_mae", m.node_mae},
            {"instances", m.instances},   {"free_atoms", m.free_atoms}, {"degenerate_nodes", m.degenerate_nodes}};
}

Metrics metrics_from_json(const json& j) {
    Metrics m;
    m.energy_mae = j.at("energy_mae").get<double>();
    m.aewt = j.at("aewt").get<double>();
    m.node_mae = j.at("node_mae").get<double>();
    m.instances = j.at("instances").get<Index>();
    m.free_atoms = j.at("free_atoms").get<Index>();
    m.degenerate_nodes = j.at("degenerate_nodes").get<Index>();
    return m;
}

json to_json(const EpochRecord& r) {
    return {{"epoch", r.epoch},
            {"train_total", r.train_total},
            {"train_graph", r.train_graph},
            {"train_node", r.train_node},
            {"train_edge", r.train_edge},
            {"val_energy_mae", r.val_energy_mae},
            {"val_aewt", r.val_aewt},
            {"val_node_mae", r.val_node_mae}};
}

EpochRecord epoch_record_from_json(const json& j) {
    EpochRecord r;
    r.epoch = j.at("epoch").get<Index>();
    r.train_total = j.at("train_total").get<double>();
    r.train_graph = j.at("train_graph").get<double>();
    r.train_node = j.at("train_node").get<double>();
    r.train_edge = j.at("train_edge").get<double>();
    r.val_energy_mae = j.at("val_energy_mae").get<double>();
    r.val_aewt = j.at("val_aewt").get<double>();
    r.val_node_mae = j.at("val_node_mae").get<double>();
    return r;
}

json to_json(const ExperimentConfig& c) {
    json modes = json::array();
    for (PerturbMode m : c.robustness_modes) modes.push_back(to_string(m));
    json training = to_json(c.training);
    training.erase("lambda");
    training.erase("gamma");
    training.erase("aewt_threshold");
    return {{"seed", c.seed},
            {"output_dir", c.output_dir.string()},
            {"dataset", to_json(c.dataset)},
            {"model", to_json(c.model)},
            {"loss", {{"lambda", c.training.weights.lambda}, {"gamma", c.training.weights.gamma}}},
            {"training", std::move(training)},
            {"split", to_json(c.split)},
            {"eval", {{"aewt_threshold", c.aewt_threshold}}},
            {"robustness", {{"fractions", c.robustness_fractions}, {"modes", std::move(modes)}}}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
    ExperimentConfig c;
    bool model_species = false;
    read_fields(j, "config", [&](const std::string& k, const json& v) {
        if (k == "seed") c.seed = v.get<std::uint64_t>();
        else if (k == "output_dir") c.output_dir = v.get<std::string>();
        else if (k == "dataset") c.dataset = dataset_config_from_json(v, c.dataset);
        else if (k == "model") {
            c.model = model_config_from_json(v, c.model);
            model_species = v.contains("n_species");
        } else if (k == "training") c.training = train_config_from_json(v, c.training);
        else if (k == "split") c.split = split_config_from_json(v, c.split);
        else if (k == "loss") {
            read_fields(v, "loss", [&](const std::string& lk, const json& lv) {
                if (lk == "lambda") c.training.weights.lambda = lv.get<double>();
                else if (lk == "gamma") c.training.weights.gamma = lv.get<double>();
                else return false;
                return true;
            });
        } else if (k == "eval") {
            read_fields(v, "eval", [&](const std::string& ek, const json& ev) {
                if (ek == "aewt_threshold") c.aewt_threshold = ev.get<double>();
                else return false;
                return true;
            });
        } else if (k == "robustness") {
            read_fields(v, "robustness", [&](const std::string& rk, const json& rv) {
                if (rk == "fractions") c.robustness_fractions = rv.get<std::vector<double>>();
                else if (rk == "modes") {
                    c.robustness_modes.clear();
                    for (const json& m : rv) c.robustness_modes.push_back(parse_perturb_mode(m.get<std::string>()));
                } else return false;
                return true;
            });
        } else return false;
        return true;
    });
    if (!model_species) c.model.n_species = c.dataset.n_species;
    c.training.aewt_threshold = c.aewt_threshold;
    return c;
}

}  // namespace json_support

Split make_split(Index n, const SplitConfig& c) {
    Index n_train = 0, n_val = 0, n_test = 0;
    if (c.train + c.val + c.test > 0) {
        n_train = c.train;
        n_val = c.val;
        n_test = c.test;
        if (n_train + n_val + n_test > n) {
            throw ValidationError("split sizes exceed the dataset (" + std::to_string(n) + " records)");
        }
    } else {
        if (!(c.train_fraction >= 0.0 && c.val_fraction >= 0.0 && c.train_fraction + c.val_fraction <= 1.0)) {
            throw ValidationError("split fractions must be non-negative and sum to at most 1");
        }
        n_train = static_cast<Index>(std::floor(c.train_fraction * static_cast<double>(n)));
        n_val = static_cast<Index>(std::floor(c.val_fraction * static_cast<double>(n)));
        n_test = n - n_train - n_val;
    }
    std::vector<Index> order(n);
    std::iota(order.begin(), order.end(), Index{0});
    std::mt19937_64 rng(c.seed);
    std::shuffle(order.begin(), order.end(), rng);
    Split s;
    s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                 order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val),
                  order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val + n_test));
    return s;
}

void validate(const ExperimentConfig& c) {
    if (c.dataset.n_instances < 1) throw ValidationError("dataset.n_instances must be positive");
    if (c.dataset.min_atoms < 2 || c.dataset.max_atoms < c.dataset.min_atoms) {
        throw ValidationError("dataset atom range is invalid");
    }
    if (!(c.dataset.density > 0.0) || !(c.dataset.min_sep > 0.0)) {
        throw ValidationError("density and min_sep must be positive");
    }
    validate(c.dataset.potential);
    if (c.dataset.potential.num_species() < c.dataset.n_species) {
        throw ValidationError("potential table does not cover every species");
    }
    if (c.dataset.graph.kind == GraphPolicyKind::knn && c.dataset.graph.k < 1) {
        throw ValidationError("k must be positive");
    }
    if (c.dataset.graph.kind == GraphPolicyKind::radius && !(c.dataset.graph.cutoff > 0.0)) {
        throw ValidationError("graph cutoff must be positive");
    }
    validate(c.model);
    if (c.model.n_species < c.dataset.n_species) throw ValidationError("model covers fewer species than the data");
    validate(c.training);
    if (!(c.aewt_threshold > 0.0)) throw ValidationError("AEwT threshold must be positive");
    for (double f : c.robustness_fractions) {
        if (!(f >= 0.0 && f <= 1.0)) throw ValidationError("robustness fractions must lie in [0, 1]");
    }
    for (PerturbMode m : c.robustness_modes) {
        if (m == PerturbMode::add_new_pair) throw ValidationError("robustness sweeps support drop and add only");
    }
}

ExperimentConfig parse_config(const std::string& json_text) {
    try {
        ExperimentConfig c = json_support::experiment_config_from_json(nlohmann::json::parse(json_text));
        validate(c);
        return c;
    } catch (const nlohmann::json::exception& ex) {
        throw ValidationError(std::string("invalid config: ") + ex.what());
    }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string config_to_json(const ExperimentConfig& config) { return json_support::to_json(config).dump(2); }

}  // namespace drlabel
