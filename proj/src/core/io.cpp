#include "dst/io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "dst/error.hpp"

namespace dst::io {

using nlohmann::json;

namespace {

const json& require(const json& obj, const char* key, const std::string& path) {
  if (!obj.is_object() || !obj.contains(key)) throw DataError(path + ": missing key '" + key + "'");
  return obj.at(key);
}

double as_number(const json& v, const std::string& path) {
  if (!v.is_number()) throw DataError(path + ": expected a number");
  return v.get<double>();
}

int as_int(const json& v, const std::string& path) {
  if (!v.is_number_integer()) throw DataError(path + ": expected an integer");
  return v.get<int>();
}

Eigen::VectorXd as_vector(const json& v, Eigen::Index len, const std::string& path) {
  if (!v.is_array()) throw DataError(path + ": expected an array");
  if (static_cast<Eigen::Index>(v.size()) != len)
    throw DataError(path + ": expected length " + std::to_string(len) + ", got " + std::to_string(v.size()));
  Eigen::VectorXd out(len);
  for (Eigen::Index i = 0; i < len; ++i) out[i] = as_number(v[i], path + "[" + std::to_string(i) + "]");
  return out;
}

Eigen::MatrixXd as_matrix(const json& v, Eigen::Index rows, Eigen::Index cols, const std::string& path) {
  if (!v.is_array()) throw DataError(path + ": expected a nested array");
  const auto got_rows = static_cast<Eigen::Index>(v.size());
  const auto got_cols = got_rows > 0 && v[0].is_array() ? static_cast<Eigen::Index>(v[0].size()) : 0;
  if (got_rows != rows || (rows > 0 && got_cols != cols)) {
    std::ostringstream msg;
    msg << path << ": expected " << rows << "x" << cols << " matrix, got " << got_rows << "x" << got_cols;
    throw DataError(msg.str());
  }
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const std::string row_path = path + "[" + std::to_string(r) + "]";
    if (!v[r].is_array() || static_cast<Eigen::Index>(v[r].size()) != cols)
      throw DataError(row_path + ": expected " + std::to_string(cols) + " columns");
    for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = as_number(v[r][c], row_path + "[" + std::to_string(c) + "]");
  }
  return out;
}

TransitionTable as_table(const json& v, int k, int kp, const std::string& path) {
  TransitionTable table(k, kp);
  if (!v.is_array() || static_cast<int>(v.size()) != k)
    throw DataError(path + ": expected " + std::to_string(k) + "x" + std::to_string(k) + "x" + std::to_string(kp) +
                    " table");
  for (int j = 0; j < k; ++j) {
    const Eigen::MatrixXd slab = as_matrix(v[j], k, kp, path + "[" + std::to_string(j) + "]");
    for (int prev = 0; prev < k; ++prev)
      for (int l = 0; l < kp; ++l) table(j, prev, l) = slab(prev, l);
  }
  return table;
}

template <class Convert>
auto per_state(const json& v, int k, const std::string& path, Convert convert) {
  if (!v.is_array() || static_cast<int>(v.size()) != k)
    throw DataError(path + ": expected one entry per switch state (" + std::to_string(k) + ")");
  std::vector<decltype(convert(v[0], path))> out;
  for (int j = 0; j < k; ++j) out.push_back(convert(v[j], path + "[" + std::to_string(j) + "]"));
  return out;
}

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json table_json(const TransitionTable& t) {
  json out = json::array();
  for (int j = 0; j < t.states(); ++j) {
    json slab = json::array();
    for (int prev = 0; prev < t.states(); ++prev) {
      json row = json::array();
      for (int l = 0; l < t.parent_states(); ++l) row.push_back(t(j, prev, l));
      slab.push_back(std::move(row));
    }
    out.push_back(std::move(slab));
  }
  return out;
}

json parse(std::string_view text, const char* what) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw DataError(std::string(what) + ": malformed JSON: " + e.what());
  }
}

Topology topology_from_json(const json& doc) {
  const json& list = require(doc, "topology", "$");
  if (!list.is_array() || list.empty()) throw DataError("topology: expected a nonempty array of nodes");
  std::vector<NodeSpec> nodes(list.size());
  std::vector<bool> seen(list.size(), false);
  for (std::size_t i = 0; i < list.size(); ++i) {
    const std::string path = "topology[" + std::to_string(i) + "]";
    const json& rec = list[i];
    const int id = as_int(require(rec, "id", path), path + ".id");
    if (id < 0 || static_cast<std::size_t>(id) >= list.size() || seen[id])
      throw DataError(path + ".id: ids must be unique and contiguous from 0");
    seen[id] = true;
    NodeSpec spec;
    const json& kind = require(rec, "kind", path);
    if (kind == "aggregator")
      spec.kind = NodeKind::Aggregator;
    else if (kind == "leaf")
      spec.kind = NodeKind::Leaf;
    else
      throw DataError(path + ".kind: expected \"aggregator\" or \"leaf\"");
    const json& parent = require(rec, "parent", path);
    if (!parent.is_null()) {
      const int p = as_int(parent, path + ".parent");
      if (p < 0) throw DataError(path + ".parent: negative id");
      spec.parent = static_cast<NodeId>(p);
    }
    spec.num_states = as_int(require(rec, "k", path), path + ".k");
    if (rec.contains("x_dim") && !rec["x_dim"].is_null()) spec.x_dim = as_int(rec["x_dim"], path + ".x_dim");
    if (rec.contains("y_dim") && !rec["y_dim"].is_null()) spec.y_dim = as_int(rec["y_dim"], path + ".y_dim");
    nodes[id] = spec;
  }
  return Topology(std::move(nodes));
}

}  // namespace

Topology decode_topology(std::string_view text) { return topology_from_json(parse(text, "topology")); }

Model decode_model(std::string_view text) {
  const json doc = parse(text, "model");
  Topology topo = topology_from_json(doc);
  const json& params = require(doc, "params", "$");
  if (!params.is_object()) throw DataError("params: expected an object keyed by node id");
  std::vector<NodeParams> out;
  for (NodeId id = 0; id < topo.size(); ++id) {
    const std::string key = std::to_string(id);
    const std::string path = "params." + key;
    if (!params.contains(key)) throw DataError(path + ": missing");
    const json& p = params[key];
    const int k = topo.states(id);
    const int kp = topo.parent_states(id);
    if (!topo.is_leaf(id)) {
      AggregatorParams agg;
      agg.initial = as_matrix(require(p, "phi0", path), k, kp, path + ".phi0");
      agg.transition = as_table(require(p, "phi", path), k, kp, path + ".phi");
      out.emplace_back(std::move(agg));
      continue;
    }
    const int xd = topo.node(id).x_dim;
    const int yd = topo.node(id).y_dim;
    LeafParams leaf;
    leaf.initial = as_matrix(require(p, "psi0", path), k, kp, path + ".psi0");
    leaf.transition = as_table(require(p, "psi", path), k, kp, path + ".psi");
    leaf.mu0 = per_state(require(p, "mu0", path), k, path + ".mu0",
                         [&](const json& v, const std::string& at) { return as_vector(v, xd, at); });
    auto square = [&](const json& v, const std::string& at) { return as_matrix(v, xd, xd, at); };
    leaf.q0 = per_state(require(p, "q0", path), k, path + ".q0", square);
    leaf.A = per_state(require(p, "A", path), k, path + ".A", square);
    leaf.Q = per_state(require(p, "Q", path), k, path + ".Q", square);
    leaf.C = as_matrix(require(p, "C", path), yd, xd, path + ".C");
    leaf.R = as_matrix(require(p, "R", path), yd, yd, path + ".R");
    out.emplace_back(std::move(leaf));
  }
  return Model(std::move(topo), std::move(out), 1e-9);
}

std::string encode_model(const Model& model) {
  const Topology& topo = model.topology();
  json nodes = json::array();
  for (NodeId id = 0; id < topo.size(); ++id) {
    const NodeSpec& spec = topo.node(id);
    json rec;
    rec["id"] = id;
    rec["kind"] = spec.kind == NodeKind::Leaf ? "leaf" : "aggregator";
    rec["parent"] = spec.parent ? json(*spec.parent) : json(nullptr);
    rec["k"] = spec.num_states;
    if (spec.kind == NodeKind::Leaf) {
      rec["x_dim"] = spec.x_dim;
      rec["y_dim"] = spec.y_dim;
    }
    nodes.push_back(std::move(rec));
  }
  json params = json::object();
  for (NodeId id = 0; id < topo.size(); ++id) {
    json p;
    if (!topo.is_leaf(id)) {
      const AggregatorParams& agg = model.aggregator(id);
      p["phi0"] = matrix_json(agg.initial);
      p["phi"] = table_json(agg.transition);
    } else {
      const LeafParams& leaf = model.leaf(id);
      p["psi0"] = matrix_json(leaf.initial);
      p["psi"] = table_json(leaf.transition);
      json mu0 = json::array(), q0 = json::array(), a = json::array(), q = json::array();
      for (std::size_t j = 0; j < leaf.A.size(); ++j) {
        mu0.push_back(vector_json(leaf.mu0[j]));
        q0.push_back(matrix_json(leaf.q0[j]));
        a.push_back(matrix_json(leaf.A[j]));
        q.push_back(matrix_json(leaf.Q[j]));
      }
      p["mu0"] = std::move(mu0);
      p["q0"] = std::move(q0);
      p["A"] = std::move(a);
      p["Q"] = std::move(q);
      p["C"] = matrix_json(leaf.C);
      p["R"] = matrix_json(leaf.R);
    }
    params[std::to_string(id)] = std::move(p);
  }
  json doc;
  doc["topology"] = std::move(nodes);
  doc["params"] = std::move(params);
  return doc.dump(2) + "\n";
}

ObservationSet decode_observations(std::string_view text) {
  const json doc = parse(text, "data");
  ObservationSet obs;
  obs.steps = as_int(require(doc, "T", "$"), "T");
  if (obs.steps < 0) throw DataError("T: must be nonnegative");
  const auto rows = static_cast<std::size_t>(obs.steps) + 1;
  const json& leaves = require(doc, "leaves", "$");
  if (!leaves.is_object()) throw DataError("leaves: expected an object keyed by leaf id");
  for (const auto& [key, rec] : leaves.items()) {
    const std::string path = "leaves." + key;
    NodeId id = 0;
    try {
      std::size_t used = 0;
      const long parsed = std::stol(key, &used);
      if (used != key.size() || parsed < 0) throw std::invalid_argument(key);
      id = static_cast<NodeId>(parsed);
    } catch (const std::exception&) {
      throw DataError(path + ": leaf key must be a nonnegative integer");
    }
    const json& y = require(rec, "y", path);
    if (!y.is_array() || y.size() != rows)
      throw DataError(path + ".y: expected " + std::to_string(rows) + " rows");
    Eigen::Index dim = -1;
    for (const json& row : y)
      if (row.is_array()) {
        dim = static_cast<Eigen::Index>(row.size());
        break;
      }
    if (rec.contains("y_dim")) {
      const int declared = as_int(rec["y_dim"], path + ".y_dim");
      if (dim >= 0 && declared != dim) throw DataError(path + ".y_dim: disagrees with the rows of y");
      dim = declared;
    }
    if (dim < 0) throw DataError(path + ".y: every row is missing; give y_dim");
    LeafSeries series;
    series.y = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows), dim);
    series.observed.assign(rows, 1);
    for (std::size_t t = 0; t < rows; ++t) {
      const std::string row_path = path + ".y[" + std::to_string(t) + "]";
      if (y[t].is_null()) {
        series.observed[t] = 0;
        continue;
      }
      series.y.row(static_cast<Eigen::Index>(t)) = as_vector(y[t], dim, row_path).transpose();
    }
    if (rec.contains("observed")) {
      const json& mask = rec["observed"];
      if (!mask.is_array() || mask.size() != rows)
        throw DataError(path + ".observed: expected " + std::to_string(rows) + " booleans");
      for (std::size_t t = 0; t < rows; ++t) {
        if (!mask[t].is_boolean()) throw DataError(path + ".observed[" + std::to_string(t) + "]: expected a boolean");
        if (!mask[t].get<bool>()) series.observed[t] = 0;
      }
    }
    obs.leaves.emplace(id, std::move(series));
  }
  return obs;
}

std::string encode_observations(const ObservationSet& obs) {
  json leaves = json::object();
  for (const auto& [id, series] : obs.leaves) {
    json y = json::array();
    json mask = json::array();
    for (Eigen::Index t = 0; t < series.y.rows(); ++t) {
      const bool seen = series.observed[t] != 0;
      mask.push_back(seen);
      if (!seen) {
        y.push_back(nullptr);
        continue;
      }
      json row = json::array();
      for (Eigen::Index c = 0; c < series.y.cols(); ++c) row.push_back(series.y(t, c));
      y.push_back(std::move(row));
    }
    leaves[std::to_string(id)] = {
        {"y_dim", series.y.cols()}, {"y", std::move(y)}, {"observed", std::move(mask)}};
  }
  json doc;
  doc["T"] = obs.steps;
  doc["leaves"] = std::move(leaves);
  return doc.dump() + "\n";
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file_atomic(const std::string& path, const std::string& contents) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write file: " + tmp.string());
    out << contents;
    out.flush();
    if (!out) throw DataError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw DataError("cannot rename into place: " + path);
  }
}

std::vector<NamedSequence> load_data_path(const std::string& path) {
  namespace fs = std::filesystem;
  std::vector<NamedSequence> out;
  std::error_code ec;
  if (fs::is_directory(path, ec)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(path))
      if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("data directory contains no .json files: " + path);
    for (const auto& f : files) {
      try {
        out.push_back({f.filename().string(), decode_observations(read_file(f.string()))});
      } catch (const DataError& e) {
        throw DataError(f.string() + ": " + e.what());
      }
    }
  } else {
    out.push_back({fs::path(path).filename().string(), decode_observations(read_file(path))});
  }
  return out;
}

void offset_origin(ObservationSet& obs) {
  for (auto& [id, series] : obs.leaves) {
    const auto first = std::find(series.observed.begin(), series.observed.end(), 1);
    if (first == series.observed.end()) continue;
    const Eigen::RowVectorXd origin = series.y.row(first - series.observed.begin());
    for (Eigen::Index t = 0; t < series.y.rows(); ++t)
      if (series.observed[t]) series.y.row(t) -= origin;
  }
}

}  // namespace dst::io
