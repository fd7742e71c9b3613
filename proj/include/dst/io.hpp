#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dst/model.hpp"

namespace dst::io {

// Topology document: the model format with "params" absent.
Topology decode_topology(std::string_view text);

// Errors carry a path to the offending field, e.g. "params.2.A[1]".
Model decode_model(std::string_view text);
std::string encode_model(const Model& model);

ObservationSet decode_observations(std::string_view text);
std::string encode_observations(const ObservationSet& obs);

struct NamedSequence {
  std::string name;
  ObservationSet obs;
};

// A data path is either one data file or a directory of *.json data files,
// read in lexicographic order.
std::vector<NamedSequence> load_data_path(const std::string& path);

std::string read_file(const std::string& path);
// Writes to a temporary sibling and renames it into place.
void write_file_atomic(const std::string& path, const std::string& contents);

// Subtracts each leaf's first observed point from all of its observed rows.
void offset_origin(ObservationSet& obs);

}  // namespace dst::io
