#include "dst/dst.h"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <cstdio>
#include <limits>
#include <memory>
#include <new>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dst/error.hpp"
#include "dst/inference.hpp"
#include "dst/io.hpp"
#include "dst/learning.hpp"
#include "dst/oracle.hpp"

struct dst_topology {
  dst::Topology value;
};

struct dst_model {
  dst::Model value;
};

struct dst_dataset {
  std::vector<dst::io::NamedSequence> sequences;
};

struct dst_fit_report {
  dst::FitReport value;
};

namespace {

thread_local std::string last_error;

dst_status fail(dst_status code, const std::string& message) {
  last_error = message;
  return code;
}

template <class F>
dst_status guarded(F&& body) {
  try {
    body();
    last_error.clear();
    return DST_OK;
  } catch (const dst::Error& e) {
    return fail(static_cast<dst_status>(e.kind()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(DST_ERROR_NUMERICAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(DST_ERROR_DATA, e.what());
  }
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

dst::EmConfig to_config(const dst_em_config* c) {
  dst::EmConfig out;
  if (!c) return out;
  out.e_tol = c->e_tol;
  out.em_tol = c->em_tol;
  out.max_em_iters = c->max_em_iters;
  out.max_sweeps = c->max_sweeps;
  out.overrelax = c->overrelax != 0;
  out.eta_init = c->eta_init;
  out.eta_grow = c->eta_grow;
  out.eta_shrink = c->eta_shrink;
  out.seed = c->seed;
  out.covariance_floor = c->covariance_floor;
  return out;
}

dst::Dataset to_dataset(const dst_dataset& data) {
  dst::Dataset out;
  for (const auto& seq : data.sequences) out.sequences.push_back(seq.obs);
  return out;
}

void require(bool ok, const char* what) {
  if (!ok) throw dst::Error(dst::ErrorKind::Usage, what);
}

}  // namespace

extern "C" {

const char* dst_version(void) { return "0.1.0"; }

const char* dst_last_error(void) { return last_error.c_str(); }

void dst_string_free(char* text) { std::free(text); }

void dst_em_config_default(dst_em_config* config) {
  if (!config) return;
  const dst::EmConfig d;
  config->e_tol = d.e_tol;
  config->em_tol = d.em_tol;
  config->max_em_iters = d.max_em_iters;
  config->max_sweeps = d.max_sweeps;
  config->overrelax = d.overrelax ? 1 : 0;
  config->eta_init = d.eta_init;
  config->eta_grow = d.eta_grow;
  config->eta_shrink = d.eta_shrink;
  config->seed = d.seed;
  config->covariance_floor = d.covariance_floor;
}

dst_status dst_topology_load(const char* path, dst_topology** out) {
  return guarded([&] {
    require(path && out, "dst_topology_load: null argument");
    *out = new dst_topology{dst::io::decode_topology(dst::io::read_file(path))};
  });
}

void dst_topology_free(dst_topology* topology) { delete topology; }

dst_status dst_model_load(const char* path, dst_model** out) {
  return guarded([&] {
    require(path && out, "dst_model_load: null argument");
    *out = new dst_model{dst::io::decode_model(dst::io::read_file(path))};
  });
}

dst_status dst_model_from_json(const char* text, dst_model** out) {
  return guarded([&] {
    require(text && out, "dst_model_from_json: null argument");
    *out = new dst_model{dst::io::decode_model(text)};
  });
}

dst_status dst_model_save(const dst_model* model, const char* path) {
  return guarded([&] {
    require(model && path, "dst_model_save: null argument");
    dst::io::write_file_atomic(path, dst::io::encode_model(model->value));
  });
}

char* dst_model_to_json(const dst_model* model) {
  if (!model) return nullptr;
  return copy_string(dst::io::encode_model(model->value));
}

size_t dst_model_num_nodes(const dst_model* model) { return model ? model->value.topology().size() : 0; }

void dst_model_free(dst_model* model) { delete model; }

dst_status dst_dataset_load(const char* path, dst_dataset** out) {
  return guarded([&] {
    require(path && out, "dst_dataset_load: null argument");
    *out = new dst_dataset{dst::io::load_data_path(path)};
  });
}

size_t dst_dataset_size(const dst_dataset* data) { return data ? data->sequences.size() : 0; }

const char* dst_dataset_name(const dst_dataset* data, size_t index) {
  if (!data || index >= data->sequences.size()) return nullptr;
  return data->sequences[index].name.c_str();
}

dst_status dst_dataset_offset_origin(dst_dataset* data) {
  return guarded([&] {
    require(data, "dst_dataset_offset_origin: null argument");
    for (auto& seq : data->sequences) dst::io::offset_origin(seq.obs);
  });
}

dst_status dst_dataset_save(const dst_dataset* data, size_t index, const char* path) {
  return guarded([&] {
    require(data && path, "dst_dataset_save: null argument");
    require(index < data->sequences.size(), "dst_dataset_save: index out of range");
    dst::io::write_file_atomic(path, dst::io::encode_observations(data->sequences[index].obs));
  });
}

void dst_dataset_free(dst_dataset* data) { delete data; }

dst_status dst_sample(const dst_model* model, int32_t steps, uint64_t seed, size_t sequences, dst_dataset** out) {
  return guarded([&] {
    require(model && out, "dst_sample: null argument");
    require(steps >= 0, "dst_sample: steps must be nonnegative");
    require(sequences >= 1, "dst_sample: at least one sequence required");
    auto data = std::make_unique<dst_dataset>();
    for (size_t s = 0; s < sequences; ++s) {
      const uint64_t stream_seed = sequences == 1 ? seed : dst::derive_seed(seed, s);
      auto [hidden, obs] = dst::sample_sequence(model->value, steps, stream_seed);
      char name[32];
      std::snprintf(name, sizeof name, "seq_%04zu.json", s);
      data->sequences.push_back({name, std::move(obs)});
    }
    *out = data.release();
  });
}

dst_status dst_initialize(const dst_topology* topology, const dst_dataset* data, uint64_t seed, dst_model** out) {
  return guarded([&] {
    require(topology && data && out, "dst_initialize: null argument");
    *out = new dst_model{dst::initialize_params(topology->value, to_dataset(*data), seed)};
  });
}

dst_status dst_train(const dst_model* start, const dst_dataset* data, const dst_em_config* config, dst_model** out,
                     dst_fit_report** report) {
  return guarded([&] {
    require(start && data && out, "dst_train: null argument");
    auto [model, fit] = dst::em_fit(start->value, to_dataset(*data), to_config(config));
    *out = new dst_model{std::move(model)};
    if (report) *report = new dst_fit_report{std::move(fit)};
  });
}

size_t dst_fit_report_length(const dst_fit_report* report) {
  return report ? report->value.bound_per_iter.size() : 0;
}

double dst_fit_report_bound(const dst_fit_report* report, size_t index) {
  if (!report || index >= report->value.bound_per_iter.size()) return std::numeric_limits<double>::quiet_NaN();
  return report->value.bound_per_iter[index];
}

int32_t dst_fit_report_iterations(const dst_fit_report* report) { return report ? report->value.iters_run : 0; }

int32_t dst_fit_report_converged(const dst_fit_report* report) {
  return report && report->value.converged ? 1 : 0;
}

char* dst_fit_report_to_json(const dst_fit_report* report) {
  if (!report) return nullptr;
  const dst::FitReport& r = report->value;
  nlohmann::json doc;
  doc["bound_per_iter"] = r.bound_per_iter;
  doc["iters_run"] = r.iters_run;
  doc["converged"] = r.converged;
  doc["eta_trace"] = r.eta_trace;
  doc["rejected_steps"] = r.rejected_steps;
  return copy_string(doc.dump());
}

void dst_fit_report_free(dst_fit_report* report) { delete report; }

dst_status dst_eval(const dst_model* model, const dst_dataset* data, const dst_em_config* config, double* bounds,
                    size_t capacity) {
  return guarded([&] {
    require(model && data && bounds, "dst_eval: null argument");
    require(capacity >= data->sequences.size(), "dst_eval: output buffer too small");
    const dst::EmConfig cfg = to_config(config);
    dst::check_config(cfg);
    dst::InferenceOptions options;
    options.tol = cfg.e_tol;
    options.max_sweeps = cfg.max_sweeps;
    for (size_t s = 0; s < data->sequences.size(); ++s)
      bounds[s] =
          dst::fit_variational(model->value, data->sequences[s].obs, options, dst::derive_seed(cfg.seed, s)).trace.back();
  });
}

dst_status dst_classify(const dst_model* const* models, size_t num_models, const dst_dataset* data, size_t index,
                        const dst_em_config* config, size_t* label, int32_t* tie, double* scores) {
  return guarded([&] {
    require(models && data && label && scores && num_models > 0, "dst_classify: null argument");
    require(index < data->sequences.size(), "dst_classify: index out of range");
    std::vector<dst::Model> list;
    for (size_t m = 0; m < num_models; ++m) {
      require(models[m] != nullptr, "dst_classify: null model");
      list.push_back(models[m]->value);
    }
    const dst::Classification result = dst::classify(list, data->sequences[index].obs, to_config(config));
    *label = result.label;
    if (tie) *tie = result.tie ? 1 : 0;
    for (size_t m = 0; m < num_models; ++m) scores[m] = result.scores[m];
  });
}

dst_status dst_oracle_loglik(const dst_model* model, const dst_dataset* data, size_t index, uint64_t max_paths,
                             double* out) {
  return guarded([&] {
    require(model && data && out, "dst_oracle_loglik: null argument");
    require(index < data->sequences.size(), "dst_oracle_loglik: index out of range");
    dst::oracle::TinyLimits limits;
    if (max_paths > 0) limits.max_total_discrete_paths = max_paths;
    *out = dst::oracle::exact_loglik_enumerate(model->value, data->sequences[index].obs, limits);
  });
}

}  // extern "C"
