#pragma once

// JSONL datasets: one relaxation record per line with the fields
// atom_types, free_mask, initial_positions, equilibrium_positions,
// equilibrium_energy and edges ([node, neighbor] pairs).

#include "drlabel/relaxation.hpp"

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace drlabel {

std::string record_to_json_line(const DatasetRecord& record);
/// Throws ValidationError on malformed lines.
DatasetRecord record_from_json_line(const std::string& line);

void write_dataset(std::ostream& out, std::span<const DatasetRecord> records);
void write_dataset(const std::filesystem::path& path, std::span<const DatasetRecord> records);
std::vector<DatasetRecord> read_dataset(std::istream& in);
std::vector<DatasetRecord> read_dataset(const std::filesystem::path& path);

/// Mean |equilibrium - initial| over every free atom of every record.
double mean_free_displacement(std::span<const DatasetRecord> records);

}  // namespace drlabel
