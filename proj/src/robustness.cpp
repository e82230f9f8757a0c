#include "drlabel/robustness.hpp"

#include "drlabel/errors.hpp"
#include "drlabel/training.hpp"

#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace drlabel {

RobustnessReport run_robustness(const ModelParams& sum_head, const ModelParams& drlabel_head,
                                std::span<const DatasetRecord> dataset, std::span<const double> fractions,
                                std::span<const PerturbMode> modes, std::uint64_t seed) {
    if (sum_head.config().head_mode != HeadMode::sum || drlabel_head.config().head_mode != HeadMode::drlabel) {
        throw ValidationError("robustness needs one sum-head and one drlabel-head model");
    }
    const double clean_sum = evaluate(sum_head, dataset).node_mae;
    const double clean_dr = evaluate(drlabel_head, dataset).node_mae;
    auto relative = [](double delta, double clean) { return clean > 0.0 ? delta / clean : 0.0; };

    RobustnessReport report;
    for (PerturbMode mode : modes) {
        for (double f : fractions) {
            const EvalPerturbation p{mode, f, seed};
            RobustnessRow row;
            row.mode = mode;
            row.fraction = f;
            row.sum_node_mae = evaluate(sum_head, dataset, 0.02, p).node_mae;
            row.drlabel_node_mae = evaluate(drlabel_head, dataset, 0.02, p).node_mae;
            row.sum_delta = row.sum_node_mae - clean_sum;
            row.drlabel_delta = row.drlabel_node_mae - clean_dr;
            row.sum_relative = relative(row.sum_delta, clean_sum);
            row.drlabel_relative = relative(row.drlabel_delta, clean_dr);
            report.rows.push_back(row);
        }
    }
    return report;
}

void write_robustness_csv(std::ostream& out, const RobustnessReport& report) {
    out << "mode,fraction,sum_node_mae,drlabel_node_mae,sum_delta,drlabel_delta,sum_relative,drlabel_relative\n";
    std::ostringstream line;
    line << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (const RobustnessRow& r : report.rows) {
        line.str("");
        line << to_string(r.mode) << ',' << r.fraction << ',' << r.sum_node_mae << ',' << r.drlabel_node_mae << ','
             << r.sum_delta << ',' << r.drlabel_delta << ',' << r.sum_relative << ',' << r.drlabel_relative << '\n';
        out << line.str();
    }
}

RobustnessReport read_robustness_csv(std::istream& in) {
    RobustnessReport report;
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("empty robustness CSV");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 8) throw ValidationError("robustness CSV rows need 8 columns");
        RobustnessRow r;
        r.mode = parse_perturb_mode(cells[0]);
        double* fields[] = {&r.fraction,    &r.sum_node_mae,  &r.drlabel_node_mae, &r.sum_delta,
                            &r.drlabel_delta, &r.sum_relative, &r.drlabel_relative};
        for (Index k = 0; k < 7; ++k) *fields[k] = std::stod(cells[k + 1]);
        report.rows.push_back(r);
    }
    return report;
}

}  // namespace drlabel
