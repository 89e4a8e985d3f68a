#pragma once

#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hivaug/augmentation.hpp"
#include "hivaug/evaluation.hpp"
#include "hivaug/glmm.hpp"
#include "hivaug/inference.hpp"
#include "hivaug/synthetic.hpp"

namespace hivaug {

struct SimulateSettings {
  RTrendParams params;
  int first_year = 1970;
  int last_year = 2010;
};

struct PpcSettings {
  int replicates = 1;  // held-out splits per run
  double ks_level = 0.01;
};

// Everything a pipeline stage reads. Keys are "section.name"; see
// `config_keys()` for the full list with defaults.
struct PipelineConfig {
  std::optional<std::uint64_t> seed;
  int workers = 1;
  std::string output = "out";
  std::string surveillance;  // CSV paths; empty means "not given"
  std::string npbs;
  std::string demography;

  int epp_first_year = 1970;
  int epp_last_year = 0;  // 0: last data year
  EppFitOptions epp;
  McmcOptions glmm;
  GlmmPriors glmm_priors;
  int n_basis = 7;
  KSelectionOptions augment;
  CrossValidationOptions crossval;
  SyntheticSpec synth;
  SimulateSettings simulate;
  PpcSettings ppc;

  // Assign one key from its text value; throws ValidationError.
  void set(const std::string& key, const std::string& value);
  // Seed present, paths exist, option blocks consistent.
  void validate() const;
  // Sorted key=value lines over every hashed key. Excludes run.workers and
  // run.output, which never change results.
  std::string canonical() const;
  std::string hash() const;  // 16 hex digits of fnv1a64(canonical())
  std::uint64_t master_seed() const;
  DemographicSchedule demography_schedule() const;
};

struct ConfigKey {
  std::string name;
  std::string help;
  bool hashed = true;
};
const std::vector<ConfigKey>& config_keys();

// INI text: [section] headers, name = value lines, ';' or '#' comments.
PipelineConfig parse_config(std::istream& in, const std::string& source = "config");
PipelineConfig load_config(const std::string& path);

// HIVAUG_WORKERS overrides run.workers when set.
void apply_environment(PipelineConfig& config);

}  // namespace hivaug
