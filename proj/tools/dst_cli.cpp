// dst: command-line front end over the C API.
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "dst/dst.h"

namespace {

using nlohmann::json;

struct CliError {
  int code;
  std::string message;
};

void check(dst_status status) {
  if (status != DST_OK) throw CliError{static_cast<int>(status), dst_last_error()};
}

template <class T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using ModelPtr = std::unique_ptr<dst_model, Deleter<dst_model, dst_model_free>>;
using TopologyPtr = std::unique_ptr<dst_topology, Deleter<dst_topology, dst_topology_free>>;
using DatasetPtr = std::unique_ptr<dst_dataset, Deleter<dst_dataset, dst_dataset_free>>;
using ReportPtr = std::unique_ptr<dst_fit_report, Deleter<dst_fit_report, dst_fit_report_free>>;

// Output numbers carry 9 significant digits.
double sig9(double x) {
  if (!std::isfinite(x)) return x;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return std::strtod(buf, nullptr);
}

std::string fmt9(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

ModelPtr load_model(const std::string& path) {
  dst_model* m = nullptr;
  check(dst_model_load(path.c_str(), &m));
  return ModelPtr(m);
}

DatasetPtr load_data(const std::string& path, bool offset) {
  dst_dataset* d = nullptr;
  check(dst_dataset_load(path.c_str(), &d));
  DatasetPtr data(d);
  if (offset) check(dst_dataset_offset_origin(data.get()));
  return data;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

struct InferenceFlags {
  uint64_t seed = 0;
  double e_tol = 1e-6;
  int max_sweeps = 200;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--seed", seed, "Random seed")->envname("DST_SEED");
    cmd->add_option("--e-tol", e_tol, "Mean-field tolerance")->check(CLI::PositiveNumber);
    cmd->add_option("--max-sweeps", max_sweeps, "Mean-field sweep limit")->check(CLI::PositiveNumber);
  }

  dst_em_config config() const {
    dst_em_config c;
    dst_em_config_default(&c);
    c.seed = seed;
    c.e_tol = e_tol;
    c.max_sweeps = max_sweeps;
    return c;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamical systems trees: sampling, training, evaluation and classification"};
  app.require_subcommand(1);

  // sample
  auto* sample = app.add_subcommand("sample", "Draw synthetic sequences from a model");
  std::string s_model, s_out;
  int s_steps = 0;
  uint64_t s_seed = 0;
  std::size_t s_sequences = 1;
  sample->add_option("--model", s_model, "Model file")->required();
  sample->add_option("--steps", s_steps, "T (sequences have T+1 points)")->required()->check(CLI::NonNegativeNumber);
  sample->add_option("--seed", s_seed, "Random seed")->envname("DST_SEED");
  sample->add_option("--out", s_out, "Output data file (directory when --sequences > 1)")->required();
  sample->add_option("--sequences", s_sequences, "Number of sequences")->check(CLI::PositiveNumber);

  // train
  auto* train = app.add_subcommand("train", "Initialize from data and fit by variational EM");
  std::string t_topology, t_data, t_out, t_report;
  InferenceFlags t_inf;
  double t_em_tol = 1e-5, t_floor = 1e-6;
  int t_max_iters = 100;
  bool t_overrelax = false, t_offset = false, t_csv = false;
  train->add_option("--topology", t_topology, "Topology file")->required();
  train->add_option("--data", t_data, "Data file or directory")->required();
  train->add_option("--out", t_out, "Output model file")->required();
  t_inf.add_to(train);
  train->add_option("--em-tol", t_em_tol, "Relative EM tolerance")->envname("DST_EM_TOL")->check(CLI::PositiveNumber);
  train->add_option("--max-iters", t_max_iters, "EM iteration limit")->check(CLI::NonNegativeNumber);
  train->add_flag("--overrelax", t_overrelax, "Adaptive over-relaxed EM steps");
  train->add_option("--floor", t_floor, "Covariance eigenvalue floor, relative to data variance")
      ->check(CLI::PositiveNumber);
  train->add_flag("--offset-origin", t_offset, "Subtract each leaf's first observed point");
  train->add_flag("--csv", t_csv, "Print the bound trace as CSV");
  train->add_option("--report", t_report, "Write the fit report (JSON) here");

  // eval
  auto* eval = app.add_subcommand("eval", "Evidence bound of each sequence");
  std::string e_model, e_data;
  bool e_offset = false;
  InferenceFlags e_inf;
  eval->add_option("--model", e_model, "Model file")->required();
  eval->add_option("--data", e_data, "Data file or directory")->required();
  eval->add_flag("--offset-origin", e_offset, "Subtract each leaf's first observed point");
  e_inf.add_to(eval);

  // classify
  auto* classify = app.add_subcommand("classify", "Label sequences by the largest bound");
  std::string c_models, c_data;
  bool c_offset = false;
  InferenceFlags c_inf;
  classify->add_option("--models", c_models, "Comma-separated model files")->required();
  classify->add_option("--data", c_data, "Data file or directory")->required();
  classify->add_flag("--offset-origin", c_offset, "Subtract each leaf's first observed point");
  c_inf.add_to(classify);

  // oracle
  auto* oracle = app.add_subcommand("oracle", "Exact log-likelihood by enumeration (tiny models)");
  std::string o_model, o_data;
  uint64_t o_max_paths = 100000;
  oracle->add_option("--model", o_model, "Model file")->required();
  oracle->add_option("--data", o_data, "Data file or directory")->required();
  oracle->add_option("--max-paths", o_max_paths, "Limit on enumerated discrete paths")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << json{{"error", {{"code", 1}, {"message", e.what()}}}}.dump() << "\n";
    return 1;
  }

  try {
    if (*sample) {
      ModelPtr model = load_model(s_model);
      dst_dataset* d = nullptr;
      check(dst_sample(model.get(), s_steps, s_seed, s_sequences, &d));
      DatasetPtr data(d);
      json written = json::array();
      if (s_sequences == 1) {
        check(dst_dataset_save(data.get(), 0, s_out.c_str()));
        written.push_back(s_out);
      } else {
        std::error_code ec;
        std::filesystem::create_directories(s_out, ec);
        if (ec) throw CliError{2, "cannot create output directory: " + s_out};
        for (std::size_t i = 0; i < dst_dataset_size(data.get()); ++i) {
          const std::string path = (std::filesystem::path(s_out) / dst_dataset_name(data.get(), i)).string();
          check(dst_dataset_save(data.get(), i, path.c_str()));
          written.push_back(path);
        }
      }
      std::cout << json{{"written", written}}.dump() << "\n";
    } else if (*train) {
      dst_topology* tp = nullptr;
      check(dst_topology_load(t_topology.c_str(), &tp));
      TopologyPtr topology(tp);
      DatasetPtr data = load_data(t_data, t_offset);
      dst_model* start_raw = nullptr;
      check(dst_initialize(topology.get(), data.get(), t_inf.seed, &start_raw));
      ModelPtr start(start_raw);
      dst_em_config config = t_inf.config();
      config.em_tol = t_em_tol;
      config.max_em_iters = t_max_iters;
      config.overrelax = t_overrelax ? 1 : 0;
      config.covariance_floor = t_floor;
      dst_model* fitted_raw = nullptr;
      dst_fit_report* report_raw = nullptr;
      check(dst_train(start.get(), data.get(), &config, &fitted_raw, &report_raw));
      ModelPtr fitted(fitted_raw);
      ReportPtr report(report_raw);
      check(dst_model_save(fitted.get(), t_out.c_str()));

      char* report_text = dst_fit_report_to_json(report.get());
      json report_doc = json::parse(report_text);
      dst_string_free(report_text);
      for (auto& v : report_doc["bound_per_iter"]) v = sig9(v.get<double>());
      for (auto& v : report_doc["eta_trace"]) v = sig9(v.get<double>());
      if (!t_report.empty()) {
        const std::string tmp = t_report + ".tmp";
        {
          std::ofstream out(tmp);
          out << report_doc.dump(2) << "\n";
          if (!out) throw CliError{2, "cannot write report: " + t_report};
        }
        std::filesystem::rename(tmp, t_report);
      }
      if (t_csv) {
        std::cout << "iter,bound\n";
        for (std::size_t i = 0; i < dst_fit_report_length(report.get()); ++i)
          std::cout << i << "," << fmt9(dst_fit_report_bound(report.get(), i)) << "\n";
      } else {
        std::cout << report_doc.dump() << "\n";
      }
    } else if (*eval) {
      ModelPtr model = load_model(e_model);
      DatasetPtr data = load_data(e_data, e_offset);
      const std::size_t n = dst_dataset_size(data.get());
      std::vector<double> bounds(n);
      const dst_em_config config = e_inf.config();
      check(dst_eval(model.get(), data.get(), &config, bounds.data(), bounds.size()));
      json seqs = json::array();
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        seqs.push_back({{"name", dst_dataset_name(data.get(), i)}, {"bound", sig9(bounds[i])}});
        total += bounds[i];
      }
      std::cout << json{{"sequences", seqs}, {"total", sig9(total)}}.dump() << "\n";
    } else if (*classify) {
      std::vector<ModelPtr> models;
      for (const std::string& path : split_commas(c_models)) models.push_back(load_model(path));
      if (models.empty()) throw CliError{1, "--models lists no files"};
      std::vector<const dst_model*> handles;
      for (const auto& m : models) handles.push_back(m.get());
      DatasetPtr data = load_data(c_data, c_offset);
      const dst_em_config config = c_inf.config();
      json results = json::array();
      for (std::size_t i = 0; i < dst_dataset_size(data.get()); ++i) {
        std::size_t label = 0;
        int32_t tie = 0;
        std::vector<double> scores(handles.size());
        check(dst_classify(handles.data(), handles.size(), data.get(), i, &config, &label, &tie, scores.data()));
        json row = json::array();
        for (double s : scores) row.push_back(sig9(s));
        results.push_back(
            {{"name", dst_dataset_name(data.get(), i)}, {"label", label}, {"tie", tie != 0}, {"scores", row}});
      }
      std::cout << json{{"results", results}}.dump() << "\n";
    } else if (*oracle) {
      ModelPtr model = load_model(o_model);
      DatasetPtr data = load_data(o_data, false);
      json seqs = json::array();
      for (std::size_t i = 0; i < dst_dataset_size(data.get()); ++i) {
        double ll = 0.0;
        check(dst_oracle_loglik(model.get(), data.get(), i, o_max_paths, &ll));
        seqs.push_back({{"name", dst_dataset_name(data.get(), i)}, {"loglik", sig9(ll)}});
      }
      std::cout << json{{"sequences", seqs}}.dump() << "\n";
    }
  } catch (const CliError& e) {
    std::cerr << json{{"error", {{"code", e.code}, {"message", e.message}}}}.dump() << "\n";
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"code", 2}, {"message", e.what()}}}}.dump() << "\n";
    return 2;
  }
  return 0;
}
