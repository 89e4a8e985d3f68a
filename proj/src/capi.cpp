#include "hivaug/hivaug.h"

#include <algorithm>
#include <cstring>
#include <exception>
#include <string>
#include <vector>

#include "hivaug/augmentation.hpp"
#include "hivaug/config.hpp"
#include "hivaug/dynamics.hpp"
#include "hivaug/error.hpp"
#include "hivaug/pipeline.hpp"

struct hivaug_config {
  hivaug::PipelineConfig value;
};

struct hivaug_result {
  hivaug::StageReport report;
};

namespace {

thread_local std::string last_error;

template <class F>
hivaug_status guarded(F&& body) {
  try {
    body();
    return HIVAUG_OK;
  } catch (const hivaug::ValidationError& e) {
    last_error = e.what();
    return HIVAUG_ERR_VALIDATION;
  } catch (const hivaug::NumericalError& e) {
    last_error = e.what();
    return HIVAUG_ERR_NUMERICAL;
  } catch (const std::exception& e) {
    last_error = e.what();
    return HIVAUG_ERR_INTERNAL;
  } catch (...) {
    last_error = "unknown error";
    return HIVAUG_ERR_INTERNAL;
  }
}

hivaug_status null_argument(const char* what) {
  last_error = std::string("null argument: ") + what;
  return HIVAUG_ERR_USAGE;
}

hivaug_status copy_out(const std::string& s, char* buf, size_t len, size_t* needed) {
  if (needed) *needed = s.size() + 1;
  if (buf && len > 0) {
    const size_t n = std::min(len - 1, s.size());
    std::memcpy(buf, s.data(), n);
    buf[n] = '\0';
  }
  return HIVAUG_OK;
}

}  // namespace

extern "C" {

const char* hivaug_version(void) { return hivaug::kVersion; }

const char* hivaug_last_error(void) { return last_error.c_str(); }

hivaug_status hivaug_config_new(hivaug_config** out) {
  if (!out) return null_argument("out");
  return guarded([&] { *out = new hivaug_config{}; });
}

hivaug_status hivaug_config_load(const char* path, hivaug_config** out) {
  if (!path || !out) return null_argument("path/out");
  *out = nullptr;
  return guarded([&] { *out = new hivaug_config{hivaug::load_config(path)}; });
}

void hivaug_config_free(hivaug_config* config) { delete config; }

hivaug_status hivaug_config_set(hivaug_config* config, const char* key, const char* value) {
  if (!config || !key || !value) return null_argument("config/key/value");
  return guarded([&] { config->value.set(key, value); });
}

hivaug_status hivaug_config_validate(const hivaug_config* config) {
  if (!config) return null_argument("config");
  return guarded([&] { config->value.validate(); });
}

hivaug_status hivaug_config_apply_environment(hivaug_config* config) {
  if (!config) return null_argument("config");
  return guarded([&] { hivaug::apply_environment(config->value); });
}

hivaug_status hivaug_config_hash(const hivaug_config* config, char* buf, size_t len, size_t* needed) {
  if (!config) return null_argument("config");
  return copy_out(config->value.hash(), buf, len, needed);
}

hivaug_status hivaug_config_canonical(const hivaug_config* config, char* buf, size_t len, size_t* needed) {
  if (!config) return null_argument("config");
  return copy_out(config->value.canonical(), buf, len, needed);
}

size_t hivaug_config_key_count(void) { return hivaug::config_keys().size(); }

const char* hivaug_config_key_name(size_t index) {
  const auto& k = hivaug::config_keys();
  return index < k.size() ? k[index].name.c_str() : nullptr;
}

const char* hivaug_config_key_help(size_t index) {
  const auto& k = hivaug::config_keys();
  return index < k.size() ? k[index].help.c_str() : nullptr;
}

size_t hivaug_stage_count(void) { return hivaug::stage_names().size(); }

const char* hivaug_stage_name(size_t index) {
  const auto& s = hivaug::stage_names();
  return index < s.size() ? s[index].c_str() : nullptr;
}

hivaug_status hivaug_run_stage(const hivaug_config* config, const char* stage, int force, hivaug_result** out) {
  if (!config || !stage) return null_argument("config/stage");
  if (out) *out = nullptr;
  const auto& names = hivaug::stage_names();
  if (std::find(names.begin(), names.end(), stage) == names.end()) {
    last_error = std::string("unknown stage '") + stage + "'";
    return HIVAUG_ERR_USAGE;
  }
  auto* result = new hivaug_result{};
  result->report.stage = stage;
  const hivaug_status st = guarded([&] {
    hivaug::StageOptions opts;
    opts.force = force != 0;
    result->report = hivaug::run_stage(stage, config->value, opts);
  });
  if (out) *out = result;
  else delete result;
  return st;
}

void hivaug_result_free(hivaug_result* result) { delete result; }

const char* hivaug_result_text(const hivaug_result* result) { return result ? result->report.text.c_str() : ""; }

size_t hivaug_result_output_count(const hivaug_result* result) { return result ? result->report.outputs.size() : 0; }

const char* hivaug_result_output(const hivaug_result* result, size_t index) {
  if (!result || index >= result->report.outputs.size()) return nullptr;
  return result->report.outputs[index].c_str();
}

hivaug_status hivaug_simulate_prevalence(const double params[7], int first_year, int last_year, double* prevalence,
                                         size_t len) {
  if (!params || !prevalence) return null_argument("params/prevalence");
  return guarded([&] {
    if (last_year < first_year || len < static_cast<size_t>(last_year - first_year + 1))
      throw hivaug::ValidationError("output buffer too small for the year range");
    hivaug::RTrendParams p{params[0], params[1], params[2], params[3], params[4], params[5], params[6], 0.0};
    const auto res = hivaug::simulate(p, hivaug::DemographicSchedule::flat_default(), first_year, last_year);
    if (!res.usable()) throw hivaug::NumericalError("trajectory rejected");
    std::copy(res.trajectory.prevalence.begin(), res.trajectory.prevalence.end(), prevalence);
  });
}

hivaug_status hivaug_gaussian_kl(size_t dim, const double* mean_p, const double* cov_p, const double* mean_q,
                                 const double* cov_q, double* out) {
  if (!mean_p || !cov_p || !mean_q || !cov_q || !out) return null_argument("kl inputs");
  return guarded([&] {
    const auto d = static_cast<Eigen::Index>(dim);
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const Eigen::VectorXd mp = Eigen::Map<const Eigen::VectorXd>(mean_p, d);
    const Eigen::VectorXd mq = Eigen::Map<const Eigen::VectorXd>(mean_q, d);
    const Eigen::MatrixXd sp = Eigen::Map<const RowMajor>(cov_p, d, d);
    const Eigen::MatrixXd sq = Eigen::Map<const RowMajor>(cov_q, d, d);
    *out = hivaug::gaussian_kl(mp, sp, mq, sq);
  });
}

}  // extern "C"
