#include "hivaug/pipeline.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include <json.hpp>

#include "hivaug/error.hpp"
#include "hivaug/io.hpp"
#include "hivaug/stats.hpp"

namespace hivaug {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

class Stage {
 public:
  Stage(const std::string& name, const PipelineConfig& config, const StageOptions& options)
      : config_(config), options_(options), dir_(config.output) {
    report_.stage = name;
    fs::create_directories(dir_);
  }

  const PipelineConfig& config() const { return config_; }
  const StageOptions& options() const { return options_; }
  StageReport& report() { return report_; }
  std::uint64_t seed() const { return config_.master_seed(); }
  int workers() const { return resolve_workers(config_.workers); }

  void write(const std::string& name, const std::function<void(std::ostream&)>& body) {
    std::ofstream out(dir_ / name, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + (dir_ / name).string());
    body(out);
    if (!out) throw ValidationError("write failed for " + (dir_ / name).string());
    report_.outputs.push_back(name);
  }

  std::string input_path(const std::string& name) const { return (dir_ / name).string(); }

  SurveillanceDataset surveillance() const {
    if (config_.surveillance.empty()) throw ValidationError(report_.stage + " needs data.surveillance (--data)");
    SurveillanceDataset data = ingest(config_.surveillance);
    if (!config_.npbs.empty()) data.npbs = ingest_npbs(config_.npbs);
    if (data.records.empty()) throw ValidationError(config_.surveillance + ": no surveillance records");
    return data;
  }

  void timed(const std::string& label, const std::function<void()>& body) {
    const auto t0 = Clock::now();
    body();
    report_.runtimes[label] += seconds_since(t0);
  }

  void finish(const std::string& status, const std::string& message) {
    report_.status = status;
    nlohmann::ordered_json j;
    j["stage"] = report_.stage;
    j["version"] = kVersion;
    j["config_hash"] = config_.hash();
    j["seed"] = config_.seed ? nlohmann::ordered_json(*config_.seed) : nlohmann::ordered_json(nullptr);
    j["workers"] = workers();
    j["status"] = status;
    if (!message.empty()) j["message"] = message;
    j["outputs"] = report_.outputs;
    j["runtimes"] = report_.runtimes;
    j["diagnostics"] = report_.summary;
    nlohmann::ordered_json inputs = nlohmann::ordered_json::object();
    for (const std::string* path : {&config_.surveillance, &config_.npbs, &config_.demography}) {
      if (path->empty() || !fs::exists(*path)) continue;
      std::ifstream in(*path, std::ios::binary);
      std::stringstream buf;
      buf << in.rdbuf();
      char digest[17];
      std::snprintf(digest, sizeof digest, "%016llx", static_cast<unsigned long long>(fnv1a64(buf.str())));
      inputs[*path] = digest;
    }
    j["inputs"] = inputs;
    j["config"] = config_.canonical();
    std::ofstream(dir_ / "manifest.json") << j.dump(2) << '\n';
    std::ofstream rt(dir_ / "runtime.csv");
    rt << "name,seconds\n";
    for (const auto& [k, v] : report_.runtimes) rt << k << ',' << format_double(v) << '\n';
  }

 private:
  const PipelineConfig& config_;
  StageOptions options_;
  fs::path dir_;
  StageReport report_;
};

void stage_simulate(Stage& s) {
  const auto& c = s.config();
  const auto demog = c.demography_schedule();
  SimulationResult res;
  s.timed("simulate", [&] { res = simulate(c.simulate.params, demog, c.simulate.first_year, c.simulate.last_year, c.epp.sim); });
  s.write("trajectory.csv", [&](std::ostream& o) { write_trajectory(o, res.trajectory); });
  s.report().summary["rejected"] = res.rejected ? "true" : "false";
  s.report().summary["clamped"] = res.clamped ? "true" : "false";
  if (!res.usable()) throw NumericalError("simulation was rejected: non-finite or negative compartments");
}

void stage_synth(Stage& s) {
  const auto& c = s.config();
  const auto demog = c.demography_schedule();
  SyntheticData d;
  s.timed("synth", [&] { d = generate_synthetic(c.synth, demog, s.seed()); });
  s.write("surveillance.csv", [&](std::ostream& o) { write_surveillance(o, d.data.records); });
  s.write("npbs.csv", [&](std::ostream& o) { write_npbs(o, d.data.npbs); });
  s.write("truth_params.csv", [&](std::ostream& o) { write_resamples(o, "", {}, true);
    for (std::size_t a = 0; a < d.truth.area_ids.size(); ++a) write_resamples(o, d.truth.area_ids[a], {d.truth.params[a]}, false);
  });
  s.write("truth_prevalence.csv", [&](std::ostream& o) {
    o << "area_id,year,prevalence\n";
    for (std::size_t a = 0; a < d.truth.area_ids.size(); ++a) {
      const Trajectory& t = d.truth.trajectories[a];
      for (std::size_t i = 0; i < t.size(); ++i)
        o << d.truth.area_ids[a] << ',' << t.first_year + static_cast<int>(i) << ',' << format_double(t.prevalence[i]) << '\n';
    }
  });
  s.write("truth_sites.csv", [&](std::ostream& o) {
    o << "site,effect\n";
    for (const auto& [k, v] : d.truth.site_effects) o << k << ',' << format_double(v) << '\n';
  });
  s.report().summary["records"] = std::to_string(d.data.records.size());
  s.report().summary["extinct_areas"] = std::to_string(d.truth.extinct_areas);
  for (const auto& w : d.warnings) s.report().text += "warning: " + w + "\n";
}

void stage_fit_epp(Stage& s) {
  const auto& c = s.config();
  const auto data = s.surveillance();
  const auto demog = c.demography_schedule();
  const int last = c.epp_last_year > 0 ? c.epp_last_year : data.max_year();
  const auto areas = data.area_ids();
  std::vector<EppFit> fits(areas.size());
  EppFitOptions epp = c.epp;
  epp.workers = 1;
  s.timed("fit-epp", [&] {
    parallel_for(areas.size(), s.workers(), [&](std::size_t a) {
      fits[a] = fit_epp(data.for_area(areas[a]), demog, c.epp_first_year, last, epp,
                        substream(s.seed(), stream_name(areas[a], "epp", 0)));
    });
  });
  s.write("summary.csv", [&](std::ostream& o) {
    for (std::size_t a = 0; a < fits.size(); ++a) write_summary(o, areas[a], fits[a].summary, a == 0);
  });
  s.write("resamples.csv", [&](std::ostream& o) {
    for (std::size_t a = 0; a < fits.size(); ++a) write_resamples(o, areas[a], fits[a].resampled, a == 0);
  });
  s.write("imis.csv", [&](std::ostream& o) {
    o << "area_id,stages,final_ess,unique_fraction,target_reached,likelihood_evaluations\n";
    for (std::size_t a = 0; a < fits.size(); ++a) {
      const auto& d = fits[a].diagnostics;
      o << areas[a] << ',' << d.stages_run << ',' << format_double(d.ess_by_stage.back()) << ','
        << format_double(d.unique_fraction_by_stage.back()) << ',' << (d.target_reached ? 1 : 0) << ','
        << d.n_likelihood_evaluations << '\n';
    }
  });
  s.write("series.csv", [&](std::ostream& o) {
    std::vector<Series> all;
    for (std::size_t a = 0; a < fits.size(); ++a) {
      auto part = series_from_summary(areas[a], fits[a].summary);
      all.insert(all.end(), part.begin(), part.end());
    }
    write_series(o, all);
  });
  int reached = 0;
  for (const auto& f : fits) reached += f.diagnostics.target_reached ? 1 : 0;
  s.report().summary["areas"] = std::to_string(areas.size());
  s.report().summary["imis_target_reached"] = std::to_string(reached);
}

GlmmFit run_full_glmm(Stage& s, const SurveillanceDataset& data, SplineBasis& basis) {
  const auto& c = s.config();
  basis = build_basis(data.min_year(), data.max_year(), knots_for_basis_size(c.n_basis));
  McmcOptions m = c.glmm;
  m.workers = s.workers();
  GlmmFit fit;
  s.timed("fit-glmm", [&] { fit = fit_glmm(data, basis, m, substream(s.seed(), stream_name("all", "glmm", 0)), c.glmm_priors); });
  s.report().summary["max_rhat"] = format_double(fit.diagnostics.max_rhat);
  s.report().summary["min_ess"] = format_double(fit.diagnostics.min_ess);
  s.report().summary["converged"] = fit.converged() ? "true" : "false";
  s.write("diagnostics.csv", [&](std::ostream& o) { write_diagnostics(o, fit.diagnostics); });
  return fit;
}

std::string unconverged_message(const GlmmFit& fit) {
  return "spline model did not converge: max R-hat " + format_double(fit.diagnostics.max_rhat) + ", min ESS " +
         format_double(fit.diagnostics.min_ess) + " (use --force to continue)";
}

void stage_fit_glmm(Stage& s) {
  const auto data = s.surveillance();
  SplineBasis basis;
  const GlmmFit fit = run_full_glmm(s, data, basis);
  s.write("draws.csv", [&](std::ostream& o) { write_draws(o, fit.draws); });
  if (!fit.converged() && !s.options().force) throw NumericalError(unconverged_message(fit));
  std::vector<AreaPosterior> posts;
  for (const auto& area : fit.design.areas)
    posts.push_back(extract_area_posterior(fit, area, PosteriorScale::Natural, s.config().glmm.quadrature_order,
                                           s.options().force));
  s.write("mu.csv", [&](std::ostream& o) { write_mu(o, posts); });
  s.write("sigma.csv", [&](std::ostream& o) { write_sigma(o, posts); });
}

void stage_augment(Stage& s) {
  const auto& c = s.config();
  const auto data = s.surveillance();
  SplineBasis basis;
  const GlmmFit fit = run_full_glmm(s, data, basis);
  if (!fit.converged() && !s.options().force) throw NumericalError(unconverged_message(fit));
  const auto& areas = fit.design.areas;
  std::vector<KSelection> sel(areas.size());
  KSelectionOptions kopt = c.augment;
  kopt.priors = c.glmm_priors;
  kopt.mcmc.quadrature_order = c.glmm.quadrature_order;
  kopt.mcmc.aux_quadrature_order = c.glmm.aux_quadrature_order;
  kopt.workers = 1;
  s.timed("select-k", [&] {
    parallel_for(areas.size(), s.workers(), [&](std::size_t a) {
      const AreaPosterior post =
          extract_area_posterior(fit, areas[a], PosteriorScale::Natural, c.glmm.quadrature_order, s.options().force);
      const std::uint64_t k_seed = substream(s.seed(), stream_name(areas[a], "select-k", 0)).key();
      if (kopt.scale == PosteriorScale::Probit) {
        const AreaPosterior ref =
            extract_area_posterior(fit, areas[a], PosteriorScale::Probit, c.glmm.quadrature_order, s.options().force);
        sel[a] = select_k(data.for_area(areas[a]), post, basis, kopt, k_seed, &ref);
      } else {
        sel[a] = select_k(data.for_area(areas[a]), post, basis, kopt, k_seed);
      }
    });
  });
  std::vector<KLReport> reports;
  std::vector<SurveillanceRecord> aux;
  for (const auto& k : sel) {
    reports.push_back(k.report);
    aux.insert(aux.end(), k.auxiliary.records.begin(), k.auxiliary.records.end());
  }
  s.write("kl.csv", [&](std::ostream& o) { write_kl(o, reports); });
  s.write("aux.csv", [&](std::ostream& o) { write_surveillance(o, aux); });
  s.write("augmented.csv", [&](std::ostream& o) {
    std::vector<SurveillanceRecord> all = data.records;
    all.insert(all.end(), aux.begin(), aux.end());
    write_surveillance(o, all);
  });
  s.write("series.csv", [&](std::ostream& o) { write_series(o, series_from_kl(reports)); });
  double worst = 0;
  for (const auto& r : reports) worst = std::max(worst, r.selected_kl);
  s.report().summary["max_selected_kl"] = format_double(worst);
}

CrossValidationOptions crossval_options(const Stage& s) {
  const auto& c = s.config();
  CrossValidationOptions o = c.crossval;
  o.epp = c.epp;
  o.glmm = c.glmm;
  o.glmm_priors = c.glmm_priors;
  o.n_basis = c.n_basis;
  o.k_selection = c.augment;
  o.k_selection.priors = c.glmm_priors;
  o.k_selection.mcmc.quadrature_order = c.glmm.quadrature_order;
  o.k_selection.mcmc.aux_quadrature_order = c.glmm.aux_quadrature_order;
  o.force = s.options().force;
  o.workers = s.workers();
  return o;
}

void stage_crossval(Stage& s) {
  const auto data = s.surveillance();
  const auto demog = s.config().demography_schedule();
  CrossValidationResult r;
  s.timed("crossval", [&] { r = run_crossval(data, demog, crossval_options(s), s.seed()); });
  s.report().runtimes[r.independent.model] = r.independent.runtime_seconds;
  s.report().runtimes[r.augmented.model] = r.augmented.runtime_seconds;
  const std::vector<CVReport> pooled = {r.independent, r.augmented};
  s.write("cv_report.csv", [&](std::ostream& o) { write_cv_summary(o, pooled); });
  s.write("cv_areas.csv", [&](std::ostream& o) { write_cv_areas(o, r); });
  s.write("predictions.csv", [&](std::ostream& o) { write_predictions(o, r); });
  s.write("mae_change.csv", [&](std::ostream& o) { write_mae_change(o, r); });
  std::vector<KLReport> kl;
  for (const auto& rep : r.replicates) kl.insert(kl.end(), rep.kl.begin(), rep.kl.end());
  s.write("kl.csv", [&](std::ostream& o) { write_kl(o, kl); });
  s.write("series.csv", [&](std::ostream& o) {
    std::vector<Series> all = series_from_kl(r.replicates.front().kl);
    all.push_back(series_from_mae_change(relative_mae_change(r.independent, r.augmented)));
    write_series(o, all);
  });
  const std::map<std::string, double> times = {{r.independent.model, r.independent.runtime_seconds},
                                               {r.augmented.model, r.augmented.runtime_seconds}};
  s.report().text = format_cv_table(pooled, times);
  s.write("table.txt", [&](std::ostream& o) { o << s.report().text; });
  s.report().summary["independent_mae"] = format_double(r.independent.overall.mae);
  s.report().summary["augmented_mae"] = format_double(r.augmented.overall.mae);
}

void stage_ppc(Stage& s) {
  const auto& c = s.config();
  const auto data = s.surveillance();
  const auto demog = c.demography_schedule();
  const auto areas = data.area_ids();
  const auto plans = make_splits(data, c.ppc.replicates, s.seed());
  EppFitOptions epp = c.epp;
  epp.workers = 1;
  struct Row {
    SurveillanceRecord record;
    double q;
  };
  std::vector<std::vector<Row>> rows(plans.size());
  std::vector<KsResult> ks(plans.size());
  s.timed("ppc", [&] {
    for (std::size_t r = 0; r < plans.size(); ++r) {
      const auto train = plans[r].training(data);
      const auto test = plans[r].testing(data);
      std::vector<std::vector<Row>> per_area(areas.size());
      parallel_for(areas.size(), s.workers(), [&](std::size_t a) {
        const auto area_train = train.for_area(areas[a]);
        const auto area_test = test.for_area(areas[a]);
        if (area_test.records.empty()) return;
        const EppFit fit = fit_epp(area_train, demog, data.min_year(), data.max_year(), epp,
                                   substream(s.seed(), stream_name(areas[a], "ppc-epp", plans[r].replicate)));
        const AreaLikelihood lik(area_train, epp.sigma2_prior, epp.aux_routing);
        const PredictiveModel model(fit, lik);
        Philox rng = substream(s.seed(), stream_name(areas[a], "ppc", plans[r].replicate));
        const auto q = ppc_quantiles(model, area_test.records, rng, c.crossval.predictive_replicates);
        for (std::size_t i = 0; i < q.size(); ++i) per_area[a].push_back({area_test.records[i], q[i]});
      });
      std::vector<double> pooled;
      for (auto& part : per_area)
        for (auto& row : part) {
          pooled.push_back(row.q);
          rows[r].push_back(std::move(row));
        }
      if (pooled.empty()) throw ValidationError("ppc: no held-out records");
      ks[r] = ks_uniform(pooled);
    }
  });
  s.write("ppc_quantiles.csv", [&](std::ostream& o) {
    o << "replicate,area_id,site_id,year,tested,positive,quantile\n";
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (const auto& row : rows[r])
        o << plans[r].replicate << ',' << row.record.area_id << ',' << row.record.site_id << ',' << row.record.year
          << ',' << row.record.tested << ',' << row.record.positive << ',' << format_double(row.q) << '\n';
  });
  int passed = 0;
  s.write("ppc_ks.csv", [&](std::ostream& o) {
    o << "replicate,n,statistic,p_value,pass\n";
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const bool pass = ks[r].p_value >= c.ppc.ks_level;
      passed += pass ? 1 : 0;
      o << plans[r].replicate << ',' << rows[r].size() << ',' << format_double(ks[r].statistic) << ','
        << format_double(ks[r].p_value) << ',' << (pass ? 1 : 0) << '\n';
    }
  });
  s.write("series.csv", [&](std::ostream& o) {
    std::vector<double> q;
    for (const auto& part : rows)
      for (const auto& row : part) q.push_back(row.q);
    write_series(o, {series_from_ppc(q)});
  });
  s.report().summary["ks_passed"] = std::to_string(passed) + "/" + std::to_string(rows.size());
  std::ostringstream text;
  for (std::size_t r = 0; r < rows.size(); ++r)
    text << "replicate " << plans[r].replicate << ": KS D = " << format_double(ks[r].statistic)
         << ", p = " << format_double(ks[r].p_value) << '\n';
  s.report().text = text.str();
}

void stage_report(Stage& s) {
  const std::string path = s.input_path("cv_report.csv");
  if (!fs::exists(path)) throw ValidationError("report needs " + path + "; run crossval first");
  std::ifstream in(path);
  const auto reports = parse_cv_summary(in);
  std::map<std::string, double> times;
  const std::string rt = s.input_path("runtime.csv");
  if (fs::exists(rt)) {
    const CsvTable t = read_csv_file(rt);
    for (const auto& row : t.rows)
      for (const auto& r : reports)
        if (row.size() == 2 && row[0] == r.model) times[r.model] = std::stod(row[1]);
  }
  s.report().text = format_cv_table(reports, times);
  s.report().runtimes = times;
  s.write("table.txt", [&](std::ostream& o) { o << s.report().text; });
}

const std::map<std::string, std::function<void(Stage&)>>& stages() {
  static const std::map<std::string, std::function<void(Stage&)>> m = {
      {"simulate", stage_simulate}, {"synth", stage_synth},       {"fit-epp", stage_fit_epp},
      {"fit-glmm", stage_fit_glmm}, {"augment", stage_augment},   {"crossval", stage_crossval},
      {"ppc", stage_ppc},           {"report", stage_report}};
  return m;
}

}  // namespace

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {"simulate", "fit-epp", "fit-glmm", "augment",
                                                 "crossval", "ppc",     "synth",    "report"};
  return names;
}

bool is_timing_artifact(const std::string& file_name) {
  return file_name == "manifest.json" || file_name == "runtime.csv" || file_name == "table.txt";
}

StageReport run_stage(const std::string& stage, const PipelineConfig& config, const StageOptions& options) {
  const auto it = stages().find(stage);
  if (it == stages().end()) throw ValidationError("unknown stage '" + stage + "'");
  config.validate();
  Stage s(stage, config, options);
  const auto t0 = Clock::now();
  try {
    it->second(s);
  } catch (const NumericalError& e) {
    s.report().runtimes["total"] = seconds_since(t0);
    s.finish("numerical", e.what());
    throw;
  } catch (const ValidationError& e) {
    s.report().runtimes["total"] = seconds_since(t0);
    s.finish("validation", e.what());
    throw;
  }
  if (stage != "report") s.report().runtimes["total"] = seconds_since(t0);
  s.finish("ok", "");
  return s.report();
}

}  // namespace hivaug
