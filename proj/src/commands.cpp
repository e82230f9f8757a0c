#include "drlabel/commands.hpp"

#include "drlabel/dataset_io.hpp"
#include "drlabel/errors.hpp"
#include "json_support.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>

namespace drlabel {

namespace fs = std::filesystem;
using json_support::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << text;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ValidationError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::vector<DatasetRecord> pick(const std::vector<DatasetRecord>& data, const std::vector<Index>& idx) {
    std::vector<DatasetRecord> out;
    out.reserve(idx.size());
    for (Index i : idx) out.push_back(data[i]);
    return out;
}

}  // namespace

std::string to_json(const GenDataSummary& s) {
    return json{{"count", s.count},
                {"attempted", s.attempted},
                {"convergence_rate", s.convergence_rate},
                {"mean_displacement", s.mean_displacement}}
        .dump(2);
}

GenDataSummary cmd_gen_data(const ExperimentConfig& config, const fs::path& out_dir) {
    validate(config);
    const GeneratedDataset ds = generate_dataset(config.dataset, config.seed);
    ensure_dir(out_dir);
    write_dataset(out_dir / "dataset.jsonl", ds.records);
    GenDataSummary s;
    s.count = ds.records.size();
    s.attempted = ds.attempted;
    s.convergence_rate = static_cast<double>(s.count) / static_cast<double>(s.attempted);
    s.mean_displacement = mean_free_displacement(ds.records);
    write_text(out_dir / "gen_summary.json", to_json(s) + "\n");
    return s;
}

void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history) {
    out << "epoch,train_total,train_graph,train_node,train_edge,val_energy_mae,val_aewt,val_node_mae\n";
    std::ostringstream line;
    line << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (const EpochRecord& r : history) {
        line.str("");
        line << r.epoch << ',' << r.train_total << ',' << r.train_graph << ',' << r.train_node << ',' << r.train_edge
             << ',' << r.val_energy_mae << ',' << r.val_aewt << ',' << r.val_node_mae << '\n';
        out << line.str();
    }
}

TrainOutcome cmd_train(const ExperimentConfig& config, const std::vector<DatasetRecord>& dataset, const fs::path& out_dir,
                       const std::optional<fs::path>& resume) {
    validate(config);
    if (dataset.empty()) throw ValidationError("dataset is empty");
    const Split split = make_split(dataset.size(), config.split);
    const std::vector<DatasetRecord> train_set = pick(dataset, split.train);
    const std::vector<DatasetRecord> val_set = pick(dataset, split.val);
    const std::vector<DatasetRecord> test_set = pick(dataset, split.test);
    if (train_set.empty()) throw ValidationError("training split is empty");

    TrainResult result;
    if (resume) {
        Checkpoint prev = load_checkpoint(*resume);
        if (!(prev.params.config() == config.model)) throw ShapeMismatch("resumed checkpoint has a different model config");
        TrainResult start{std::move(prev.params), std::move(prev.history), std::move(prev.optimizer)};
        result = train(train_set, val_set, start.params, config.training, config.dataset.graph, &start);
    } else {
        ModelParams init = ModelParams::initialize(config.model, config.training.seed);
        initialize_energy_offset(init, train_set);
        result = train(train_set, val_set, init, config.training, config.dataset.graph);
    }

    TrainOutcome out;
    out.checkpoint = Checkpoint{std::move(result.params), config.dataset.graph, config.training, config.split,
                                std::move(result.optimizer), std::move(result.history)};
    if (!test_set.empty()) out.test = evaluate(out.checkpoint.params, test_set, config.aewt_threshold);

    ensure_dir(out_dir);
    save_checkpoint(out_dir / "checkpoint.json", out.checkpoint);
    std::ofstream hist(out_dir / "history.csv", std::ios::binary);
    write_history_csv(hist, out.checkpoint.history);
    return out;
}

SplitSummary cmd_train_splits(const ExperimentConfig& config, const std::vector<DatasetRecord>& dataset,
                              const fs::path& out_dir, Index n_splits) {
    if (n_splits < 1) throw ValidationError("need at least one split");
    SplitSummary s;
    for (Index k = 0; k < n_splits; ++k) {
        ExperimentConfig c = config;
        c.split.seed = config.split.seed + k;
        const TrainOutcome o = cmd_train(c, dataset, out_dir / ("split_" + std::to_string(k)));
        if (!o.test) throw ValidationError("split summaries need a non-empty test split");
        s.runs.push_back(*o.test);
    }
    const double n = static_cast<double>(n_splits);
    for (const Metrics& m : s.runs) {
        s.mean.energy_mae += m.energy_mae / n;
        s.mean.aewt += m.aewt / n;
        s.mean.node_mae += m.node_mae / n;
    }
    if (n_splits > 1) {
        for (const Metrics& m : s.runs) {
            s.stddev.energy_mae += std::pow(m.energy_mae - s.mean.energy_mae, 2) / (n - 1.0);
            s.stddev.aewt += std::pow(m.aewt - s.mean.aewt, 2) / (n - 1.0);
            s.stddev.node_mae += std::pow(m.node_mae - s.mean.node_mae, 2) / (n - 1.0);
        }
        s.stddev.energy_mae = std::sqrt(s.stddev.energy_mae);
        s.stddev.aewt = std::sqrt(s.stddev.aewt);
        s.stddev.node_mae = std::sqrt(s.stddev.node_mae);
    }
    json runs = json::array();
    for (const Metrics& m : s.runs) runs.push_back(json_support::to_json(m));
    auto stat = [](const Metrics& m) {
        return json{{"energy_mae", m.energy_mae}, {"aewt", m.aewt}, {"node_mae", m.node_mae}};
    };
    ensure_dir(out_dir);
    write_text(out_dir / "splits_summary.json",
               json{{"splits", n_splits}, {"runs", runs}, {"mean", stat(s.mean)}, {"std", stat(s.stddev)}}.dump(2) + "\n");
    return s;
}

std::map<std::string, Metrics> cmd_eval(const Checkpoint& checkpoint, const std::vector<DatasetRecord>& dataset,
                                        double aewt_threshold) {
    if (dataset.empty()) throw ValidationError("dataset is empty");
    for (const DatasetRecord& r : dataset) {
        for (int t : r.instance.system.atom_types) {
            if (t < 0 || static_cast<Index>(t) >= checkpoint.params.config().n_species) {
                throw ShapeMismatch("dataset species exceed the model's species table");
            }
        }
        if (!(build_graph(r.instance.system, checkpoint.graph_policy) == r.graph)) {
            throw ShapeMismatch("dataset edges disagree with the checkpoint's graph policy (" +
                                to_string(checkpoint.graph_policy.kind) + ")");
        }
    }
    std::map<std::string, Metrics> out;
    out["all"] = evaluate(checkpoint.params, dataset, aewt_threshold);
    if (checkpoint.split) {
        Split split;
        try {
            split = make_split(dataset.size(), *checkpoint.split);
        } catch (const ValidationError&) {
            return out;  // dataset smaller than the training split: report "all" only
        }
        const std::pair<const char*, const std::vector<Index>*> parts[] = {
            {"train", &split.train}, {"val", &split.val}, {"test", &split.test}};
        for (const auto& [name, idx] : parts) {
            if (!idx->empty()) out[name] = evaluate(checkpoint.params, pick(dataset, *idx), aewt_threshold);
        }
    }
    return out;
}

std::string eval_to_json(const std::map<std::string, Metrics>& metrics) {
    json j = json::object();
    for (const auto& [name, m] : metrics) j[name] = json_support::to_json(m);
    return j.dump(2);
}

RobustnessReport cmd_robustness(const Checkpoint& sum_head, const Checkpoint& drlabel_head,
                                const std::vector<DatasetRecord>& dataset, std::span<const double> fractions,
                                std::span<const PerturbMode> modes, std::uint64_t seed) {
    if (!(sum_head.graph_policy == drlabel_head.graph_policy)) {
        throw ShapeMismatch("the two checkpoints use different graph policies");
    }
    std::vector<DatasetRecord> subset = dataset;
    if (drlabel_head.split) {
        try {
            const Split split = make_split(dataset.size(), *drlabel_head.split);
            if (!split.test.empty()) subset = pick(dataset, split.test);
        } catch (const ValidationError&) {
        }
    }
    return run_robustness(sum_head.params, drlabel_head.params, subset, fractions, modes, seed);
}

std::string audit_to_json(const AuditReport& report) {
    json checks = json::array();
    for (const AuditCheck& c : report.checks) {
        checks.push_back({{"name", c.name},
                          {"trials", c.trials},
                          {"max_error", c.max_error},
                          {"tolerance", c.tolerance},
                          {"passed", c.passed}});
    }
    return json{{"passed", report.passed()}, {"checks", std::move(checks)}}.dump(2);
}

// ---------------------------------------------------------------------------

namespace {

struct CommonFlags {
    std::string config;
    std::uint64_t seed = 0;
    std::string out;
};

void add_common(CLI::App* sub, CommonFlags& f) {
    sub->add_option("--config", f.config, "JSON experiment config")->check(CLI::ExistingFile);
    sub->add_option("--seed", f.seed, "Run seed");
    sub->add_option("--out", f.out, "Output directory");
}

ExperimentConfig base_config(const CommonFlags& f) {
    return f.config.empty() ? ExperimentConfig{} : load_config(f.config);
}

fs::path out_dir(const CommonFlags& f, const ExperimentConfig& c) { return f.out.empty() ? c.output_dir : fs::path(f.out); }

std::vector<double> parse_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        try {
            out.push_back(std::stod(cell));
        } catch (const std::exception&) {
            throw ValidationError("'" + cell + "' is not a number");
        }
    }
    return out;
}

// "auto" places one update in the middle of the network.
Index parse_interpos(const std::string& text, Index layers) {
    if (text == "auto") return layers / 2;
    try {
        std::size_t used = 0;
        const long long v = std::stoll(text, &used);
        if (used == text.size() && v >= 0) return static_cast<Index>(v);
    } catch (const std::exception&) {
    }
    throw ValidationError("--interpos expects a non-negative integer or auto, got '" + text + "'");
}

}  // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"DR-Label relaxation experiments"};
    app.require_subcommand(1);

    CommonFlags gen_f, train_f, eval_f, rob_f, audit_f;

    CLI::App* gen = app.add_subcommand("gen-data", "Generate a relaxation dataset (JSONL)");
    add_common(gen, gen_f);
    Index n_instances = 0;
    std::string graph_kind;
    gen->add_option("--n-instances", n_instances, "Accepted instances to generate");
    gen->add_option("--graph", graph_kind, "radius | knn | full");

    CLI::App* tr = app.add_subcommand("train", "Train a model on a dataset");
    add_common(tr, train_f);
    std::string dataset_path, head, resume;
    Index epochs = 0, batch = 0, width = 0, layers = 0, splits = 0;
    std::string interpos;
    Index train_size = 0, val_size = 0, test_size = 0;
    double lr = 0, noisy = 0, sigma = 0, lambda = 0, gamma = 0;
    std::uint64_t split_seed = 0;
    tr->add_option("--dataset", dataset_path, "JSONL dataset")->required()->check(CLI::ExistingFile);
    tr->add_option("--head", head, "sum | drlabel");
    tr->add_option("--epochs", epochs);
    tr->add_option("--lr", lr);
    tr->add_option("--batch-size", batch);
    tr->add_option("--width", width);
    tr->add_option("--layers", layers);
    tr->add_option("--interpos", interpos, "Intermediate position update every F layers: an integer (0 = off) or auto (layers / 2)");
    tr->add_option("--noisy-fraction", noisy);
    tr->add_option("--sigma", sigma);
    tr->add_option("--lambda", lambda);
    tr->add_option("--gamma", gamma);
    tr->add_option("--split-seed", split_seed);
    tr->add_option("--train-size", train_size);
    tr->add_option("--val-size", val_size);
    tr->add_option("--test-size", test_size);
    tr->add_option("--splits", splits, "Repeat over this many split seeds and summarize");
    tr->add_option("--resume", resume, "Continue from a checkpoint")->check(CLI::ExistingFile);

    CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
    add_common(ev, eval_f);
    std::string ckpt_path, eval_data;
    double threshold = 0.0;
    ev->add_option("--checkpoint", ckpt_path)->required()->check(CLI::ExistingFile);
    ev->add_option("--dataset", eval_data)->required()->check(CLI::ExistingFile);
    ev->add_option("--threshold", threshold, "AEwT threshold");

    CLI::App* rob = app.add_subcommand("robustness", "Edge drop / duplication sweep");
    add_common(rob, rob_f);
    std::string sum_ckpt, dr_ckpt, rob_data, fractions_text, modes_text;
    rob->add_option("--sum", sum_ckpt, "Sum-head checkpoint")->required()->check(CLI::ExistingFile);
    rob->add_option("--drlabel", dr_ckpt, "DR-Label checkpoint")->required()->check(CLI::ExistingFile);
    rob->add_option("--dataset", rob_data)->required()->check(CLI::ExistingFile);
    rob->add_option("--fractions", fractions_text, "Comma-separated fractions");
    rob->add_option("--modes", modes_text, "Comma-separated modes (drop,add)");

    CLI::App* au = app.add_subcommand("audit", "Property audits of deconstruction and reconstruction");
    add_common(au, audit_f);
    Index trials = 1000;
    bool corrupt = false;
    au->add_option("--trials", trials);
    au->add_flag("--corrupt-magnitude", corrupt, "Negative control: perturb one magnitude per trial");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) {
            ExperimentConfig c = base_config(gen_f);
            if (gen->count("--seed")) c.seed = gen_f.seed;
            if (gen->count("--n-instances")) c.dataset.n_instances = n_instances;
            if (gen->count("--graph")) c.dataset.graph.kind = parse_graph_policy(graph_kind);
            const GenDataSummary s = cmd_gen_data(c, out_dir(gen_f, c));
            std::cout << to_json(s) << std::endl;
        } else if (tr->parsed()) {
            ExperimentConfig c = base_config(train_f);
            if (tr->count("--seed")) c.training.seed = train_f.seed;
            if (tr->count("--head")) c.model.head_mode = parse_head_mode(head);
            if (tr->count("--epochs")) c.training.epochs = epochs;
            if (tr->count("--lr")) c.training.learning_rate = lr;
            if (tr->count("--batch-size")) c.training.batch_size = batch;
            if (tr->count("--width")) c.model.width = width;
            if (tr->count("--layers")) c.model.layers = layers;
            if (tr->count("--interpos")) c.model.interpos_frequency = parse_interpos(interpos, c.model.layers);
            if (tr->count("--noisy-fraction")) c.training.noisy_fraction = noisy;
            if (tr->count("--sigma")) c.training.noise_sigma = sigma;
            if (tr->count("--lambda")) c.training.weights.lambda = lambda;
            if (tr->count("--gamma")) c.training.weights.gamma = gamma;
            if (tr->count("--split-seed")) c.split.seed = split_seed;
            if (tr->count("--train-size")) c.split.train = train_size;
            if (tr->count("--val-size")) c.split.val = val_size;
            if (tr->count("--test-size")) c.split.test = test_size;
            const std::vector<DatasetRecord> data = read_dataset(fs::path(dataset_path));
            if (splits > 0) {
                const SplitSummary s = cmd_train_splits(c, data, out_dir(train_f, c), splits);
                std::cout << "node_mae " << s.mean.node_mae << " +- " << s.stddev.node_mae << ", energy_mae "
                          << s.mean.energy_mae << " +- " << s.stddev.energy_mae << std::endl;
            } else {
                const std::optional<fs::path> res = resume.empty() ? std::nullopt : std::optional<fs::path>(resume);
                const TrainOutcome o = cmd_train(c, data, out_dir(train_f, c), res);
                if (o.test) std::cout << json_support::to_json(*o.test).dump(2) << std::endl;
            }
        } else if (ev->parsed()) {
            const Checkpoint ck = load_checkpoint(ckpt_path);
            const double thr = ev->count("--threshold") ? threshold : ck.training.aewt_threshold;
            const std::string text = eval_to_json(cmd_eval(ck, read_dataset(fs::path(eval_data)), thr));
            const ExperimentConfig c = base_config(eval_f);
            const fs::path dir = out_dir(eval_f, c);
            ensure_dir(dir);
            write_text(dir / "metrics.json", text + "\n");
            std::cout << text << std::endl;
        } else if (rob->parsed()) {
            const ExperimentConfig c = base_config(rob_f);
            std::vector<double> fractions = c.robustness_fractions;
            std::vector<PerturbMode> modes = c.robustness_modes;
            if (rob->count("--fractions")) fractions = parse_list(fractions_text);
            if (rob->count("--modes")) {
                modes.clear();
                std::stringstream ss(modes_text);
                std::string m;
                while (std::getline(ss, m, ',')) modes.push_back(parse_perturb_mode(m));
            }
            for (PerturbMode m : modes) {
                if (m == PerturbMode::add_new_pair) throw ValidationError("robustness supports drop and add only");
            }
            const RobustnessReport report = cmd_robustness(load_checkpoint(sum_ckpt), load_checkpoint(dr_ckpt),
                                                           read_dataset(fs::path(rob_data)), fractions, modes,
                                                           rob->count("--seed") ? rob_f.seed : c.seed);
            const fs::path dir = out_dir(rob_f, c);
            ensure_dir(dir);
            std::ofstream csv(dir / "robustness.csv", std::ios::binary);
            write_robustness_csv(csv, report);
            write_robustness_csv(std::cout, report);
        } else if (au->parsed()) {
            const ExperimentConfig c = base_config(audit_f);
            AuditOptions opts;
            opts.trials = trials;
            opts.seed = au->count("--seed") ? audit_f.seed : c.seed;
            opts.corrupt_magnitude = corrupt;
            const AuditReport report = run_audit(opts);
            const std::string text = audit_to_json(report);
            const fs::path dir = out_dir(audit_f, c);
            ensure_dir(dir);
            write_text(dir / "audit.json", text + "\n");
            std::cout << text << std::endl;
            report.enforce();
        }
    } catch (const AuditFailure& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
    return 0;
}

}  // namespace drlabel
