#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hivaug/hivaug.h"

namespace {

struct Flags {
  std::string config;
  std::optional<std::string> seed, out, data, npbs, demography;
  std::optional<int> workers;
  std::vector<std::string> sets;
  bool force = false;
};

void add_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config,-c", f.config, "INI config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "master seed (run.seed)");
  cmd->add_option("--out,-o", f.out, "output directory (run.output)");
  cmd->add_option("--data", f.data, "surveillance CSV (data.surveillance)");
  cmd->add_option("--npbs", f.npbs, "population survey CSV (data.npbs)");
  cmd->add_option("--demography", f.demography, "demographic schedule CSV (data.demography)");
  cmd->add_option("--workers,-j", f.workers, "worker threads (run.workers)")->check(CLI::PositiveNumber);
  cmd->add_option("--set", f.sets, "override a config key: section.name=value")->allow_extra_args(false);
  cmd->add_flag("--force", f.force, "continue past unconverged fits");
}

int fail(hivaug_status st) {
  std::fprintf(stderr, "error: %s\n", hivaug_last_error());
  return static_cast<int>(st);
}

int run(const std::string& stage, const Flags& f) {
  hivaug_config* cfg = nullptr;
  hivaug_status st = f.config.empty() ? hivaug_config_new(&cfg) : hivaug_config_load(f.config.c_str(), &cfg);
  if (st != HIVAUG_OK) return fail(st);
  auto set = [&](const char* key, const std::string& value) {
    if (st == HIVAUG_OK) st = hivaug_config_set(cfg, key, value.c_str());
  };
  for (const auto& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "error: --set expects key=value, got '%s'\n", kv.c_str());
      hivaug_config_free(cfg);
      return HIVAUG_ERR_USAGE;
    }
    set(kv.substr(0, eq).c_str(), kv.substr(eq + 1));
  }
  if (st == HIVAUG_OK) st = hivaug_config_apply_environment(cfg);
  if (f.seed) set("run.seed", *f.seed);
  if (f.out) set("run.output", *f.out);
  if (f.data) set("data.surveillance", *f.data);
  if (f.npbs) set("data.npbs", *f.npbs);
  if (f.demography) set("data.demography", *f.demography);
  if (f.workers) set("run.workers", std::to_string(*f.workers));
  if (st != HIVAUG_OK) {
    const int code = fail(st);
    hivaug_config_free(cfg);
    return code;
  }

  hivaug_result* result = nullptr;
  st = hivaug_run_stage(cfg, stage.c_str(), f.force ? 1 : 0, &result);
  if (result) std::fputs(hivaug_result_text(result), stdout);
  if (st == HIVAUG_OK && result) {
    for (size_t i = 0; i < hivaug_result_output_count(result); ++i)
      std::fprintf(stderr, "wrote %s\n", hivaug_result_output(result, i));
  }
  const int code = st == HIVAUG_OK ? 0 : fail(st);
  hivaug_result_free(result);
  hivaug_config_free(cfg);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Augmented-data HIV prevalence estimation"};
  app.set_version_flag("--version", hivaug_version());
  app.require_subcommand(1);
  bool list_keys = false;
  app.add_flag("--list-keys", list_keys, "print every config key and exit");

  const char* about[] = {"simulate one r-trend trajectory",
                         "fit the r-trend model per area by IMIS",
                         "fit the cross-area spline mixed model",
                         "choose K per area and write pseudo-records",
                         "independent vs augmented cross-validation",
                         "held-out posterior predictive quantiles and KS",
                         "generate the synthetic benchmark",
                         "print the cross-validation table"};
  Flags flags;
  std::vector<CLI::App*> subs;
  for (size_t i = 0; i < hivaug_stage_count(); ++i) {
    CLI::App* cmd = app.add_subcommand(hivaug_stage_name(i), i < 8 ? about[i] : "");
    add_flags(cmd, flags);
    subs.push_back(cmd);
  }

  if (argc == 2 && std::string(argv[1]) == "--list-keys") {
    for (size_t i = 0; i < hivaug_config_key_count(); ++i)
      std::printf("%-34s %s\n", hivaug_config_key_name(i), hivaug_config_key_help(i));
    return 0;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return HIVAUG_ERR_USAGE;
  }
  for (CLI::App* cmd : subs)
    if (cmd->parsed()) return run(cmd->get_name(), flags);
  return HIVAUG_ERR_USAGE;
}
