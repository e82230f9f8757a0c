#include "drlabel/dataset_io.hpp"

#include "drlabel/errors.hpp"

#include <json.hpp>

#include <fstream>
#include <istream>
#include <ostream>

namespace drlabel {

using nlohmann::json;

namespace {

json vec3_list(const std::vector<Vec3>& v) {
    json arr = json::array();
    for (const Vec3& p : v) arr.push_back({p.x(), p.y(), p.z()});
    return arr;
}

std::vector<Vec3> parse_vec3_list(const json& j, const char* field) {
    if (!j.is_array()) throw ValidationError(std::string(field) + " must be an array");
    std::vector<Vec3> out;
    for (const json& p : j) {
        if (!p.is_array() || p.size() != 3) throw ValidationError(std::string(field) + " entries must hold 3 numbers");
        out.emplace_back(p[0].get<double>(), p[1].get<double>(), p[2].get<double>());
    }
    return out;
}

const json& field(const json& j, const char* name) {
    const auto it = j.find(name);
    if (it == j.end()) throw ValidationError(std::string("record lacks field '") + name + "'");
    return *it;
}

}  // namespace

std::string record_to_json_line(const DatasetRecord& record) {
    const RelaxationInstance& inst = record.instance;
    json j;
    j["atom_types"] = inst.system.atom_types;
    j["free_mask"] = inst.system.free_mask;
    j["initial_positions"] = vec3_list(inst.system.positions);
    j["equilibrium_positions"] = vec3_list(inst.equilibrium_positions);
    j["equilibrium_energy"] = inst.equilibrium_energy;
    json edges = json::array();
    for (const Edge& e : record.graph.edges()) edges.push_back({e.node, e.neighbor});
    j["edges"] = std::move(edges);
    return j.dump();
}

DatasetRecord record_from_json_line(const std::string& line) {
    try {
        const json j = json::parse(line);
        if (!j.is_object()) throw ValidationError("dataset records must be JSON objects");
        for (const auto& [key, value] : j.items()) {
            if (key != "atom_types" && key != "free_mask" && key != "initial_positions" &&
                key != "equilibrium_positions" && key != "equilibrium_energy" && key != "edges") {
                throw ValidationError("unknown dataset field '" + key + "'");
            }
        }
        RelaxationInstance inst;
        inst.system.atom_types = field(j, "atom_types").get<std::vector<int>>();
        inst.system.free_mask = field(j, "free_mask").get<std::vector<bool>>();
        inst.system.positions = parse_vec3_list(field(j, "initial_positions"), "initial_positions");
        inst.equilibrium_positions = parse_vec3_list(field(j, "equilibrium_positions"), "equilibrium_positions");
        inst.equilibrium_energy = field(j, "equilibrium_energy").get<double>();
        inst.converged = true;
        validate(inst.system);
        if (inst.equilibrium_positions.size() != inst.system.size()) {
            throw ValidationError("equilibrium and initial positions differ in length");
        }
        std::vector<Edge> edges;
        for (const json& e : field(j, "edges")) {
            if (!e.is_array() || e.size() != 2) throw ValidationError("edges must be [node, neighbor] pairs");
            edges.push_back({e[0].get<Index>(), e[1].get<Index>()});
        }
        DirectedGraph g(inst.system.size(), std::move(edges));
        return {std::move(inst), std::move(g)};
    } catch (const json::exception& ex) {
        throw ValidationError(std::string("malformed dataset record: ") + ex.what());
    }
}

void write_dataset(std::ostream& out, std::span<const DatasetRecord> records) {
    for (const DatasetRecord& r : records) out << record_to_json_line(r) << '\n';
}

void write_dataset(const std::filesystem::path& path, std::span<const DatasetRecord> records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path.string());
    write_dataset(out, records);
}

std::vector<DatasetRecord> read_dataset(std::istream& in) {
    std::vector<DatasetRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(record_from_json_line(line));
    }
    return out;
}

std::vector<DatasetRecord> read_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read dataset " + path.string());
    return read_dataset(in);
}

double mean_free_displacement(std::span<const DatasetRecord> records) {
    double sum = 0.0;
    Index count = 0;
    for (const DatasetRecord& r : records) {
        const AtomicSystem& s = r.instance.system;
        for (Index i = 0; i < s.size(); ++i) {
            if (!s.free_mask[i]) continue;
            sum += (r.instance.equilibrium_positions[i] - s.positions[i]).norm();
            ++count;
        }
    }
    return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

}  // namespace drlabel
