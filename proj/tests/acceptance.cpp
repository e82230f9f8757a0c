// Acceptance run: one PASS/FAIL line per criterion on stdout, progress on
// stderr. Exits non-zero when any criterion fails.
//
//   acceptance --work-dir DIR [--only 1,2,...] [--epochs N] [--seeds N]
//
// --epochs and --seeds shrink the training study for quick local runs; the
// registered test uses the defaults below.

#include "drlabel/audit.hpp"
#include "drlabel/checkpoint.hpp"
#include "drlabel/commands.hpp"
#include "drlabel/config.hpp"
#include "drlabel/dataset_io.hpp"
#include "drlabel/geometry.hpp"
#include "drlabel/graph.hpp"
#include "drlabel/model.hpp"
#include "drlabel/relaxation.hpp"
#include "drlabel/robustness.hpp"
#include "drlabel/training.hpp"

#include "gradcheck.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

using namespace drlabel;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string sci(double v, int digits = 2) {
    std::ostringstream s;
    s << std::scientific << std::setprecision(digits) << v;
    return s.str();
}

std::string fixed(double v, int digits = 4) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

void log(const std::string& msg) { std::cerr << "[acceptance] " << msg << std::endl; }

struct Outcome {
    bool passed = false;
    std::string detail;
};

// ---------------------------------------------------------------------------
// Study configuration shared by criteria 2, 4, 5 and 7.

constexpr std::uint64_t kDataSeed = 20240501;
constexpr std::uint64_t kSplitSeed = 11;
constexpr std::uint64_t kSweepSeed = 5;

struct Study {
    Index epochs = 30;
    Index seeds = 5;
    double noisy_fraction = 0.25;
    fs::path dir;
};

ExperimentConfig study_config(const Study& s, HeadMode head, std::uint64_t seed, bool noisy) {
    ExperimentConfig c;
    c.seed = kDataSeed;
    c.dataset.n_instances = 3000;  // every other dataset field at its default
    c.model.width = 32;
    c.model.head_mode = head;
    c.training.epochs = s.epochs;
    c.training.seed = seed;
    c.training.noisy_fraction = noisy ? s.noisy_fraction : 0.0;
    c.split.train = 2000;
    c.split.val = 500;
    c.split.test = 500;
    c.split.seed = kSplitSeed;
    return c;
}

struct Run {
    HeadMode head;
    std::uint64_t seed;
    bool noisy;
    Checkpoint checkpoint;
    Metrics test;
    double seconds = 0.0;
};

class StudyRunner {
public:
    explicit StudyRunner(Study s) : s_(std::move(s)) {}

    const std::vector<DatasetRecord>& dataset() {
        if (!data_) {
            const auto t0 = Clock::now();
            ExperimentConfig c = study_config(s_, HeadMode::drlabel, 0, false);
            const GeneratedDataset g = generate_dataset(c.dataset, c.seed);
            data_ = g.records;
            attempted_ = g.attempted;
            gen_seconds_ = seconds_since(t0);
            log("generated " + std::to_string(data_->size()) + " instances from " + std::to_string(g.attempted) +
                " attempts in " + fixed(gen_seconds_, 1) + " s");
        }
        return *data_;
    }
    Index attempted() {
        dataset();
        return attempted_;
    }

    const Run& run(HeadMode head, std::uint64_t seed, bool noisy) {
        const std::string key = to_string(head) + "_s" + std::to_string(seed) + (noisy ? "_noisy" : "_plain");
        auto it = runs_.find(key);
        if (it != runs_.end()) return it->second;
        const std::vector<DatasetRecord>& data = dataset();
        const auto t0 = Clock::now();
        const ExperimentConfig c = study_config(s_, head, seed, noisy);
        const TrainOutcome out = cmd_train(c, data, s_.dir / key);
        Run r{head, seed, noisy, out.checkpoint, out.test.value(), seconds_since(t0)};
        log("trained " + key + " in " + fixed(r.seconds, 1) + " s: test node MAE " + fixed(r.test.node_mae, 5) +
            ", energy MAE " + fixed(r.test.energy_mae, 5));
        return runs_.emplace(key, std::move(r)).first->second;
    }

    std::vector<DatasetRecord> test_split() {
        const std::vector<DatasetRecord>& data = dataset();
        const Split sp = make_split(data.size(), study_config(s_, HeadMode::drlabel, 0, false).split);
        std::vector<DatasetRecord> out;
        for (Index k : sp.test) out.push_back(data[k]);
        return out;
    }

    const Study& study() const { return s_; }

private:
    Study s_;
    std::optional<std::vector<DatasetRecord>> data_;
    Index attempted_ = 0;
    double gen_seconds_ = 0.0;
    std::map<std::string, Run> runs_;
};

// ---------------------------------------------------------------------------

Outcome criterion1() {
    const auto t0 = Clock::now();
    const AuditCheck c = audit_reversibility(1000, 101);
    const double secs = seconds_since(t0);
    return {c.max_error < 1e-9 && secs < 1.0,
            "1000 nodes, max |dp - dp*| " + sci(c.max_error) + " (< 1e-9), " + fixed(secs, 3) + " s (< 1 s)"};
}

Outcome criterion2(StudyRunner& study) {
    const auto t0 = Clock::now();
    const std::vector<AuditCheck> geo = audit_equivariance(100, 10, 202);
    const double geo_secs = seconds_since(t0);

    const Run& dr = study.run(HeadMode::drlabel, 0, false);
    const std::vector<DatasetRecord> test = study.test_split();
    const auto t1 = Clock::now();
    std::mt19937_64 rng(203);
    double worst_energy = 0.0, worst_disp = 0.0;
    Index systems = 0;
    for (Index k = 0; k < test.size() && k < 100; ++k, ++systems) {
        const AtomicSystem& sys = test[k].instance.system;
        const ForwardOutput base = forward(dr.checkpoint.params, sys, test[k].graph);
        for (int t = 0; t < 10; ++t) {
            const E3Transform tf = E3Transform::random(rng, true);
            AtomicSystem moved = sys;
            moved.positions = apply_e3(tf, sys.positions);
            const ForwardOutput out = forward(dr.checkpoint.params, moved, test[k].graph);
            worst_energy = std::max(worst_energy, std::abs(out.predicted_energy - base.predicted_energy));
            for (Index i = 0; i < sys.size(); ++i)
                worst_disp = std::max(worst_disp,
                                      (tf.rotate(base.predicted_displacements[i]) - out.predicted_displacements[i]).norm());
        }
    }
    const double model_secs = seconds_since(t1);
    const double secs = geo_secs + model_secs;
    const bool ok = geo[0].max_error < 1e-10 && geo[1].max_error < 1e-9 && worst_energy < 1e-6 && worst_disp < 1e-6 &&
                    secs < 30.0;
    return {ok, "magnitudes " + sci(geo[0].max_error) + " (< 1e-10), reconstructions " + sci(geo[1].max_error) +
                    " (< 1e-9) over 100 systems x 10 transforms; trained drlabel model on " + std::to_string(systems) +
                    " test systems x 10: energy " + sci(worst_energy) + ", displacements " + sci(worst_disp) +
                    " (< 1e-6); " + fixed(secs, 2) + " s (< 30 s, training excluded)"};
}

Outcome criterion3() {
    const AuditCheck c = audit_uniqueness(100, 303);
    return {c.passed && c.max_error == 0.0,
            "100 systems, radius/knn/full shared edges, largest magnitude difference " + sci(c.max_error) +
                " (bit-identical required)"};
}

Outcome criterion4(StudyRunner& study) {
    const AuditCheck dup = audit_duplication(100, 404);

    const Run& sum = study.run(HeadMode::sum, 0, false);
    const std::vector<DatasetRecord> test = study.test_split();
    Index compared = 0, mismatched = 0, shifted = 0;
    for (Index k = 0; k < test.size(); ++k) {
        const AtomicSystem& sys = test[k].instance.system;
        const DirectedGraph& g = test[k].graph;
        const ForwardOutput clean = forward(sum.checkpoint.params, sys, g);
        for (double f : {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}) {
            const PerturbationMask mask = sample_perturbation_mask(g, PerturbMode::add, f, derive_seed(405, k));
            const std::vector<Index> idx = perturbed_edge_indices(g, mask);
            ForwardOptions opt;
            opt.head_edges = &idx;
            const ForwardOutput out = forward(sum.checkpoint.params, sys, g, opt);
            std::vector<Vec3> expected = clean.predicted_displacements;
            for (Index q = g.num_edges(); q < idx.size(); ++q) {
                const Edge& e = g.edge(idx[q]);
                if (!sys.free_mask[e.node]) continue;
                const Vec3 d = unit_direction(sys.positions[e.node], sys.positions[e.neighbor]).vec();
                expected[e.node] += clean.edge_scalars[idx[q]] * d;
                ++shifted;
            }
            for (Index i = 0; i < sys.size(); ++i) {
                ++compared;
                if (out.predicted_displacements[i] != expected[i]) ++mismatched;
            }
        }
    }
    const bool ok = dup.max_error < 1e-9 && mismatched == 0 && shifted > 0;
    return {ok, "oracle reconstruction shift under 10-60% duplication " + sci(dup.max_error) +
                    " (< 1e-9); trained sum head: " + std::to_string(mismatched) + " of " + std::to_string(compared) +
                    " node outputs differ bitwise from clean + duplicated edge vectors (" + std::to_string(shifted) +
                    " duplicated edges)"};
}

Outcome criterion5(StudyRunner& study, const fs::path& dir, double& table_seconds) {
    const Run& sum = study.run(HeadMode::sum, 0, false);
    const Run& dr = study.run(HeadMode::drlabel, 0, false);
    const auto t0 = Clock::now();
    const std::vector<double> fractions{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    const std::vector<PerturbMode> modes{PerturbMode::drop, PerturbMode::add};
    const RobustnessReport rep = cmd_robustness(sum.checkpoint, dr.checkpoint, study.dataset(), fractions, modes, kSweepSeed);
    table_seconds = seconds_since(t0);
    {
        std::ofstream out(dir / "robustness.csv");
        write_robustness_csv(out, rep);
    }
    const double total = sum.seconds + dr.seconds + table_seconds;

    bool ok = true;
    std::ostringstream detail;
    for (const RobustnessRow& r : rep.rows) {
        if (r.fraction == 0.0) continue;
        const bool row_ok = r.drlabel_delta < r.sum_delta;
        ok = ok && row_ok;
        std::cerr << "[acceptance]   " << to_string(r.mode) << " " << fixed(r.fraction, 1) << ": sum +"
                  << sci(r.sum_delta) << ", drlabel +" << sci(r.drlabel_delta) << (row_ok ? "" : "  <-- not below")
                  << "\n";
    }
    auto worst_gap = [&](PerturbMode m) {
        double g = std::numeric_limits<double>::infinity();
        for (const RobustnessRow& r : rep.rows)
            if (r.mode == m && r.fraction > 0.0) g = std::min(g, r.sum_delta - r.drlabel_delta);
        return g;
    };
    auto at60 = [&](PerturbMode m) {
        for (const RobustnessRow& r : rep.rows)
            if (r.mode == m && r.fraction == 0.6) return r;
        return RobustnessRow{};
    };
    const RobustnessRow d60 = at60(PerturbMode::drop), a60 = at60(PerturbMode::add);
    ok = ok && total < 7200.0;
    detail << "drlabel increase below sum at every fraction 0.1-0.6: drop " << (worst_gap(PerturbMode::drop) > 0 ? "yes" : "no")
           << ", add " << (worst_gap(PerturbMode::add) > 0 ? "yes" : "no") << "; at 60% drop sum +" << sci(d60.sum_delta)
           << " vs drlabel +" << sci(d60.drlabel_delta) << ", at 60% add sum +" << sci(a60.sum_delta) << " vs drlabel +"
           << sci(a60.drlabel_delta) << "; " << fixed(total / 60.0, 1) << " min CPU (< 120 min)";
    return {ok, detail.str()};
}

Outcome criterion6() {
    const auto t0 = Clock::now();
    DatasetConfig dc;
    dc.n_instances = 3;
    const std::vector<DatasetRecord> recs = generate_dataset(dc, 606).records;
    double worst = 0.0;
    std::string where;
    Index entries = 0;
    for (HeadMode mode : {HeadMode::sum, HeadMode::drlabel}) {
        for (Index F : {0, 2}) {
            ModelConfig mc;
            mc.width = 32;
            mc.head_mode = mode;
            mc.interpos_frequency = F;
            ModelParams p = ModelParams::initialize(mc, 607 + F);
            testing::jitter(p, 0.05, 608 + F);
            for (const DatasetRecord& r : recs) {
                testing::GradCheckOptions opt;
                opt.entries_per_tensor = 8;
                opt.seed = 609;
                const auto res = testing::check_sample_gradient(p, make_sample(r.instance, r.graph), LossWeights{}, opt);
                entries += res.entries_checked;
                if (res.worst_relative > worst) {
                    worst = res.worst_relative;
                    where = to_string(mode) + " F=" + std::to_string(F) + " " + res.worst_entry;
                }
            }
        }
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-4 && secs < 300.0, std::to_string(entries) +
                                              " entries (every tensor and position, both heads, F in {0, 2}), worst "
                                              "relative error " +
                                              sci(worst) + " at " + where + " (< 1e-4), " + fixed(secs, 1) +
                                              " s (< 300 s)"};
}

Outcome criterion8(StudyRunner& study) {
    const std::vector<DatasetRecord>& data = study.dataset();
    const PotentialParams pot = study_config(study.study(), HeadMode::drlabel, 0, false).dataset.potential;
    double max_force = 0.0;
    Index unconverged = 0;
    for (const DatasetRecord& r : data) {
        if (!r.instance.converged) ++unconverged;
        const std::vector<Vec3> f = forces(r.instance.equilibrium_positions, r.instance.system.atom_types, pot);
        for (Index i = 0; i < f.size(); ++i)
            if (r.instance.system.free_mask[i]) max_force = std::max(max_force, f[i].norm());
    }

    // Central differences on initial and relaxed geometries of the first 100.
    const double h = 1e-6;
    double worst = 0.0;
    Index checked = 0, skipped = 0;
    for (Index k = 0; k < 100 && k < data.size(); ++k) {
        for (const std::vector<Vec3>* pos : {&data[k].instance.system.positions, &data[k].instance.equilibrium_positions}) {
            const std::vector<int>& sp = data[k].instance.system.atom_types;
            const std::vector<Vec3> f = forces(*pos, sp, pot);
            for (Index i = 0; i < pos->size(); ++i) {
                bool straddles = false;
                for (Index j = 0; j < pos->size(); ++j)
                    if (j != i && std::abs(((*pos)[i] - (*pos)[j]).norm() - pot.cutoff) < 2 * h) straddles = true;
                if (straddles) {
                    ++skipped;
                    continue;
                }
                for (int c = 0; c < 3; ++c) {
                    std::vector<Vec3> plus = *pos, minus = *pos;
                    plus[i](c) += h;
                    minus[i](c) -= h;
                    const double fd = -(potential_energy(plus, sp, pot) - potential_energy(minus, sp, pot)) / (2 * h);
                    worst = std::max(worst, std::abs(fd - f[i](c)) / std::max({std::abs(fd), std::abs(f[i](c)), 1e-4}));
                    ++checked;
                }
            }
        }
    }
    const double rate = static_cast<double>(data.size()) / static_cast<double>(study.attempted());
    return {max_force < 1e-4 && unconverged == 0 && worst < 1e-5,
            std::to_string(data.size()) + " accepted instances (convergence rate " + fixed(100.0 * rate, 1) +
                "%), largest free-atom force " + sci(max_force, 6) + " (< 1e-4); " + std::to_string(checked) +
                " force components vs central differences, worst relative error " + sci(worst) + " (< 1e-5, " +
                std::to_string(skipped) + " atoms within 2e-6 of the cutoff skipped)"};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome criterion9(const fs::path& dir) {
    const char* cli = std::getenv("DRLABEL_CLI");
    if (!cli) return {false, "DRLABEL_CLI is not set"};
    auto run = [&](const std::string& args) {
        const int st = std::system((std::string(cli) + " " + args + " > /dev/null 2>&1").c_str());
        return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    };
    const std::string d = dir.string();
    int failures = 0;
    for (const char* tag : {"a", "b"}) {
        const std::string t = tag;
        failures += run("gen-data --n-instances 40 --seed 9 --out " + d + "/gen_" + t) != 0;
        failures += run("train --dataset " + d + "/gen_" + t + "/dataset.jsonl --epochs 2 --width 16 --noisy-fraction 0.5 "
                        "--seed 9 --out " + d + "/train_" + t) != 0;
        failures += run("eval --checkpoint " + d + "/train_" + t + "/checkpoint.json --dataset " + d + "/gen_" + t +
                        "/dataset.jsonl --out " + d + "/eval_" + t) != 0;
    }
    if (failures) return {false, std::to_string(failures) + " CLI invocations failed"};
    std::vector<std::string> differing;
    for (const std::string f : {"gen_%/dataset.jsonl", "gen_%/gen_summary.json", "train_%/checkpoint.json",
                                "train_%/history.csv", "eval_%/metrics.json"}) {
        std::string a = f, b = f;
        a.replace(a.find('%'), 1, "a");
        b.replace(b.find('%'), 1, "b");
        const std::string ca = slurp(dir / a), cb = slurp(dir / b);
        if (ca.empty() || ca != cb) differing.push_back(f);
    }
    std::string detail = "gen-data, train and eval run twice with identical seeds: ";
    if (differing.empty()) return {true, detail + "dataset, summary, checkpoint, history and metrics byte-identical"};
    for (const std::string& f : differing) detail += f + " ";
    return {false, detail + "differ"};
}

struct Criterion7Result {
    Outcome outcome;
    nlohmann::json table;
};

Criterion7Result criterion7(StudyRunner& study) {
    const Study& s = study.study();
    std::map<std::string, std::vector<double>> node, energy;
    nlohmann::json table = nlohmann::json::array();
    for (std::uint64_t seed = 0; seed < s.seeds; ++seed) {
        for (bool noisy : {false, true}) {
            for (HeadMode head : {HeadMode::sum, HeadMode::drlabel}) {
                const Run& r = study.run(head, seed, noisy);
                const std::string key = to_string(head) + (noisy ? "+noisy" : "");
                node[key].push_back(r.test.node_mae);
                energy[key].push_back(r.test.energy_mae);
                table.push_back({{"head", to_string(head)},
                                 {"seed", seed},
                                 {"noisy", noisy},
                                 {"test_node_mae", r.test.node_mae},
                                 {"test_energy_mae", r.test.energy_mae},
                                 {"test_aewt", r.test.aewt},
                                 {"seconds", r.seconds}});
            }
        }
    }
    auto mean = [](const std::vector<double>& v) {
        double m = 0.0;
        for (double x : v) m += x;
        return m / static_cast<double>(v.size());
    };
    const double n_sum = mean(node["sum"]), n_dr = mean(node["drlabel"]);
    const double e_sum = mean(energy["sum"]), e_sum_noisy = mean(energy["sum+noisy"]);
    const double e_dr = mean(energy["drlabel"]), e_dr_noisy = mean(energy["drlabel+noisy"]);
    const bool node_ok = n_dr <= n_sum;
    const bool noisy_sum_ok = e_sum_noisy <= 1.05 * e_sum;
    const bool noisy_dr_ok = e_dr_noisy <= 1.05 * e_dr;
    std::ostringstream d;
    d << s.seeds << " seeds, " << s.epochs << " epochs, width 32: mean test node MAE drlabel " << fixed(n_dr, 5)
      << " vs sum " << fixed(n_sum, 5) << (node_ok ? " (<=)" : " (worse)") << "; energy MAE with/without noisy nodes: sum "
      << fixed(e_sum_noisy, 5) << "/" << fixed(e_sum, 5) << " (" << std::showpos << fixed(100.0 * (e_sum_noisy / e_sum - 1.0), 1)
      << "%), drlabel " << std::noshowpos << fixed(e_dr_noisy, 5) << "/" << fixed(e_dr, 5) << " (" << std::showpos
      << fixed(100.0 * (e_dr_noisy / e_dr - 1.0), 1) << "%)" << std::noshowpos << ", limit +5%";
    return {{node_ok && noisy_sum_ok && noisy_dr_ok, d.str()}, table};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria 1-9"};
    fs::path work_dir = "acceptance_work";
    std::string only;
    Study study;
    app.add_option("--work-dir", work_dir);
    app.add_option("--only", only, "Comma-separated criteria to run");
    app.add_option("--epochs", study.epochs);
    app.add_option("--seeds", study.seeds);
    CLI11_PARSE(app, argc, argv);

    std::set<int> selected;
    if (only.empty()) {
        for (int k = 1; k <= 9; ++k) selected.insert(k);
    } else {
        std::stringstream ss(only);
        std::string item;
        while (std::getline(ss, item, ',')) selected.insert(std::stoi(item));
    }

    fs::remove_all(work_dir);
    fs::create_directories(work_dir / "runs");
    fs::create_directories(work_dir / "cli");
    study.dir = work_dir / "runs";
    StudyRunner runner(study);
    log("work dir " + work_dir.string() + ", study: " + std::to_string(study.seeds) + " seeds x " +
        std::to_string(study.epochs) + " epochs");

    const auto t_all = Clock::now();
    std::map<int, Outcome> results;
    nlohmann::json summary;
    auto attempt = [&](int k, auto&& fn) {
        if (!selected.count(k)) return;
        log("criterion " + std::to_string(k));
        try {
            results[k] = fn();
        } catch (const std::exception& ex) {
            results[k] = {false, std::string("exception: ") + ex.what()};
        }
        log(std::string("criterion ") + std::to_string(k) + (results[k].passed ? " PASS" : " FAIL"));
    };

    // Cheap criteria first, then the training study.
    attempt(1, [] { return criterion1(); });
    attempt(3, [] { return criterion3(); });
    attempt(6, [] { return criterion6(); });
    attempt(9, [&] { return criterion9(work_dir / "cli"); });
    attempt(8, [&] { return criterion8(runner); });
    double sweep_seconds = 0.0;
    attempt(5, [&] { return criterion5(runner, work_dir, sweep_seconds); });
    attempt(4, [&] { return criterion4(runner); });
    attempt(2, [&] { return criterion2(runner); });
    attempt(7, [&] {
        Criterion7Result r = criterion7(runner);
        summary["criterion7_runs"] = r.table;
        return r.outcome;
    });

    const char* names[] = {"",
                           "reversibility",
                           "E(3) equivariance",
                           "uniqueness across graph policies",
                           "exact duplication robustness",
                           "trained robustness sweep",
                           "gradient correctness",
                           "directional training benefit",
                           "relaxation oracle validity",
                           "determinism"};
    bool all = true;
    for (const auto& [k, o] : results) {
        std::cout << (o.passed ? "PASS" : "FAIL") << " criterion " << k << " (" << names[k] << "): " << o.detail
                  << std::endl;
        all = all && o.passed;
        summary["criteria"][std::to_string(k)] = {{"passed", o.passed}, {"detail", o.detail}};
    }
    summary["total_seconds"] = seconds_since(t_all);
    std::ofstream(work_dir / "acceptance_summary.json") << summary.dump(2) << "\n";
    log("done in " + fixed(seconds_since(t_all) / 60.0, 1) + " min");
    return all ? 0 : 1;
}
