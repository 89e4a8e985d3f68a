#pragma once

#include <map>
#include <string>
#include <vector>

#include "hivaug/config.hpp"

namespace hivaug {

inline constexpr const char* kVersion = "0.1.0";

const std::vector<std::string>& stage_names();

struct StageOptions {
  bool force = false;  // keep going past unconverged fits
};

struct StageReport {
  std::string stage;
  std::string status = "ok";  // ok | validation | numerical
  std::vector<std::string> outputs;           // file names inside the output directory
  std::map<std::string, double> runtimes;     // seconds
  std::map<std::string, std::string> summary; // short diagnostics for the manifest
  std::string text;                           // for stdout
};

// Runs one stage and writes its outputs plus manifest.json under
// config.output. Throws ValidationError or NumericalError; the manifest is
// written in both cases.
StageReport run_stage(const std::string& stage, const PipelineConfig& config, const StageOptions& options = {});

// Files excluded from rerun byte-identity: they carry wall-clock times.
bool is_timing_artifact(const std::string& file_name);

}  // namespace hivaug
