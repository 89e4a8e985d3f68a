#include "hivaug/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "hivaug/error.hpp"
#include "hivaug/io.hpp"

namespace hivaug {

namespace {

struct Entry {
  ConfigKey key;
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, const std::string&)> set;
};

std::string trimmed(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& what) {
  throw ValidationError("config " + key + " = '" + value + "': expected " + what);
}

long long to_integer(const std::string& key, const std::string& text) {
  const std::string v = trimmed(text);
  long long out;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, text, "an integer");
  return out;
}

double to_real(const std::string& key, const std::string& text) {
  const std::string v = trimmed(text);
  double out;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty() || !std::isfinite(out))
    bad_value(key, text, "a finite number");
  return out;
}

bool to_bool(const std::string& key, const std::string& text) {
  const std::string v = trimmed(text);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad_value(key, text, "true or false");
}

std::string prior_text(const ParamPrior& p) {
  if (p.kind == ParamPrior::Kind::Uniform) return "uniform(" + format_double(p.a) + "," + format_double(p.b) + ")";
  std::string s = "normal(" + format_double(p.a) + "," + format_double(p.b);
  if (std::isfinite(p.lower) || std::isfinite(p.upper))
    s += "," + format_double(p.lower) + "," + format_double(p.upper);
  return s + ")";
}

ParamPrior parse_prior(const std::string& key, const std::string& text) {
  const std::string v = trimmed(text);
  const auto open = v.find('(');
  if (open == std::string::npos || v.back() != ')') bad_value(key, text, "uniform(lo,hi) or normal(mean,sd[,lo,hi])");
  const std::string kind = trimmed(v.substr(0, open));
  std::vector<double> args;
  std::stringstream body(v.substr(open + 1, v.size() - open - 2));
  std::string part;
  while (std::getline(body, part, ',')) args.push_back(to_real(key, part));
  ParamPrior p;
  if (kind == "uniform" && args.size() == 2) p = ParamPrior::uniform(args[0], args[1]);
  else if (kind == "normal" && args.size() == 2) p = ParamPrior::normal(args[0], args[1]);
  else if (kind == "normal" && args.size() == 4) p = ParamPrior::normal(args[0], args[1], args[2], args[3]);
  else bad_value(key, text, "uniform(lo,hi) or normal(mean,sd[,lo,hi])");
  p.validate(key);
  return p;
}


template <class T>
Entry make_entry(std::string name, std::string help, std::function<T&(PipelineConfig&)> ref, bool hashed = true);

template <>
Entry make_entry<int>(std::string name, std::string help, std::function<int&(PipelineConfig&)> ref, bool hashed) {
  return {{name, help, hashed},
          [ref](const PipelineConfig& c) { return std::to_string(ref(const_cast<PipelineConfig&>(c))); },
          [ref, name](PipelineConfig& c, const std::string& v) {
            const long long x = to_integer(name, v);
            if (x < INT32_MIN || x > INT32_MAX) bad_value(name, v, "a 32-bit integer");
            ref(c) = static_cast<int>(x);
          }};
}

template <>
Entry make_entry<double>(std::string name, std::string help, std::function<double&(PipelineConfig&)> ref,
                         bool hashed) {
  return {{name, help, hashed},
          [ref](const PipelineConfig& c) { return format_double(ref(const_cast<PipelineConfig&>(c))); },
          [ref, name](PipelineConfig& c, const std::string& v) { ref(c) = to_real(name, v); }};
}

template <>
Entry make_entry<bool>(std::string name, std::string help, std::function<bool&(PipelineConfig&)> ref, bool hashed) {
  return {{name, help, hashed},
          [ref](const PipelineConfig& c) { return std::string(ref(const_cast<PipelineConfig&>(c)) ? "true" : "false"); },
          [ref, name](PipelineConfig& c, const std::string& v) { ref(c) = to_bool(name, v); }};
}

template <>
Entry make_entry<std::string>(std::string name, std::string help, std::function<std::string&(PipelineConfig&)> ref,
                              bool hashed) {
  return {{name, help, hashed},
          [ref](const PipelineConfig& c) { return ref(const_cast<PipelineConfig&>(c)); },
          [ref](PipelineConfig& c, const std::string& v) { ref(c) = trimmed(v); }};
}

template <>
Entry make_entry<ParamPrior>(std::string name, std::string help, std::function<ParamPrior&(PipelineConfig&)> ref,
                             bool hashed) {
  return {{name, help, hashed},
          [ref](const PipelineConfig& c) { return prior_text(ref(const_cast<PipelineConfig&>(c))); },
          [ref, name](PipelineConfig& c, const std::string& v) { ref(c) = parse_prior(name, v); }};
}

#define KEY(type, name, help, expr) make_entry<type>(name, help, [](PipelineConfig& c) -> type& { return expr; })

std::vector<Entry> build_registry() {
  std::vector<Entry> r = {
      {{"run.seed", "master seed; required, no clock default", true},
       [](const PipelineConfig& c) { return c.seed ? std::to_string(*c.seed) : std::string(); },
       [](PipelineConfig& c, const std::string& v) {
         const std::string t = trimmed(v);
         std::uint64_t x;
         auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), x);
         if (ec != std::errc() || p != t.data() + t.size() || t.empty()) bad_value("run.seed", v, "a non-negative integer");
         c.seed = x;
       }},
      make_entry<int>("run.workers", "worker threads", [](PipelineConfig& c) -> int& { return c.workers; }, false),
      make_entry<std::string>("run.output", "output directory",
                              [](PipelineConfig& c) -> std::string& { return c.output; }, false),
      KEY(std::string, "data.surveillance", "surveillance CSV", c.surveillance),
      KEY(std::string, "data.npbs", "population survey CSV", c.npbs),
      KEY(std::string, "data.demography", "demographic schedule CSV; empty uses the flat default", c.demography),

      KEY(int, "epp.first_year", "first reported year", c.epp_first_year),
      KEY(int, "epp.last_year", "last reported year; 0 means last data year", c.epp_last_year),
      KEY(int, "epp.n_initial", "prior-stage draws", c.epp.budget.n_initial),
      KEY(int, "epp.n_per_stage", "draws per adaptive stage", c.epp.budget.n_per_stage),
      KEY(int, "epp.n_stages", "maximum adaptive stages", c.epp.budget.n_stages),
      KEY(int, "epp.n_resample", "final resample size", c.epp.budget.n_resample),
      KEY(double, "epp.unique_fraction", "stop once the expected unique fraction reaches this",
          c.epp.budget.unique_fraction_target),
      KEY(double, "epp.step", "ODE step in years", c.epp.sim.step),
      {{"epp.aux_routing", "bias | pseudo-site", true},
       [](const PipelineConfig& c) {
         return std::string(c.epp.aux_routing == AuxRouting::BiasOnly ? "bias" : "pseudo-site");
       },
       [](PipelineConfig& c, const std::string& v) {
         const std::string t = trimmed(v);
         if (t == "bias") c.epp.aux_routing = AuxRouting::BiasOnly;
         else if (t == "pseudo-site") c.epp.aux_routing = AuxRouting::PseudoSite;
         else bad_value("epp.aux_routing", v, "bias or pseudo-site");
       }},

      KEY(ParamPrior, "prior.t0", "epidemic start year (placeholder)", c.epp.prior.t0),
      KEY(ParamPrior, "prior.t1_offset", "t1 - t0 (placeholder)", c.epp.prior.t1_offset),
      KEY(ParamPrior, "prior.log_r0", "log initial infection rate (placeholder)", c.epp.prior.log_r0),
      KEY(ParamPrior, "prior.beta0", "placeholder", c.epp.prior.beta0),
      KEY(ParamPrior, "prior.beta1", "placeholder", c.epp.prior.beta1),
      KEY(ParamPrior, "prior.beta2", "placeholder", c.epp.prior.beta2),
      KEY(ParamPrior, "prior.beta3", "placeholder", c.epp.prior.beta3),
      KEY(ParamPrior, "prior.alpha", "ANC bias, probit scale (placeholder)", c.epp.prior.alpha),

      KEY(double, "sigma2.shape", "inverse-gamma shape", c.epp.sigma2_prior.shape),
      KEY(double, "sigma2.rate", "inverse-gamma rate", c.epp.sigma2_prior.rate),
      KEY(double, "sigma2.lower", "truncation", c.epp.sigma2_prior.lower),
      KEY(double, "sigma2.upper", "truncation", c.epp.sigma2_prior.upper),
      KEY(int, "sigma2.order", "Gauss-Legendre nodes in log sigma^2", c.epp.sigma2_prior.order),

      KEY(int, "glmm.n_basis", "cubic B-spline basis size", c.n_basis),
      KEY(int, "glmm.n_chains", "chains", c.glmm.n_chains),
      KEY(int, "glmm.n_iter", "iterations per chain including warmup", c.glmm.n_iter),
      KEY(int, "glmm.warmup", "warmup iterations", c.glmm.warmup),
      KEY(int, "glmm.max_extensions", "extra sampling blocks while unconverged", c.glmm.max_extensions),
      KEY(double, "glmm.rhat_max", "convergence gate", c.glmm.rhat_max),
      KEY(double, "glmm.ess_min", "convergence gate", c.glmm.ess_min),
      KEY(int, "glmm.quadrature_order", "Gauss-Hermite nodes for site marginalisation", c.glmm.quadrature_order),
      KEY(int, "glmm.aux_quadrature_order", "same, for pseudo-records", c.glmm.aux_quadrature_order),
      KEY(double, "glmm.fixed_variance", "prior variance of fixed effects", c.glmm_priors.fixed_variance),
      KEY(double, "glmm.scale_dof", "half-t degrees of freedom for scales", c.glmm_priors.scale_dof),
      KEY(double, "glmm.scale_scale", "half-t scale", c.glmm_priors.scale_scale),

      {{"augment.grid", "comma-separated K values", true},
       [](const PipelineConfig& c) {
         std::string s;
         for (int k : c.augment.grid) s += (s.empty() ? "" : ",") + std::to_string(k);
         return s;
       },
       [](PipelineConfig& c, const std::string& v) {
         std::vector<int> grid;
         std::stringstream in(v);
         std::string part;
         while (std::getline(in, part, ',')) grid.push_back(static_cast<int>(to_integer("augment.grid", part)));
         c.augment.grid = grid;
       }},
      {{"augment.scale", "natural | probit", true},
       [](const PipelineConfig& c) {
         return std::string(c.augment.scale == PosteriorScale::Natural ? "natural" : "probit");
       },
       [](PipelineConfig& c, const std::string& v) {
         const std::string t = trimmed(v);
         if (t == "natural") c.augment.scale = PosteriorScale::Natural;
         else if (t == "probit") c.augment.scale = PosteriorScale::Probit;
         else bad_value("augment.scale", v, "natural or probit");
       }},
      KEY(bool, "augment.include_baseline", "also fit K = 0 (reported, never selected)", c.augment.include_baseline),
      KEY(int, "augment.n_iter", "refit iterations per chain", c.augment.mcmc.n_iter),
      KEY(int, "augment.warmup", "refit warmup", c.augment.mcmc.warmup),
      KEY(int, "augment.max_extensions", "refit extension blocks", c.augment.mcmc.max_extensions),

      KEY(int, "crossval.replicates", "train/test splits", c.crossval.n_replicates),
      {{"crossval.point", "median | mean", true},
       [](const PipelineConfig& c) {
         return std::string(c.crossval.point == PointPredictor::Median ? "median" : "mean");
       },
       [](PipelineConfig& c, const std::string& v) {
         const std::string t = trimmed(v);
         if (t == "median") c.crossval.point = PointPredictor::Median;
         else if (t == "mean") c.crossval.point = PointPredictor::Mean;
         else bad_value("crossval.point", v, "median or mean");
       }},
      KEY(int, "crossval.predictive_replicates", "binomial draws per posterior draw", c.crossval.predictive_replicates),

      KEY(int, "ppc.replicates", "held-out splits", c.ppc.replicates),
      KEY(double, "ppc.ks_level", "KS test level", c.ppc.ks_level),

      KEY(int, "synth.n_areas", "areas", c.synth.n_areas),
      KEY(int, "synth.sites_per_area", "sites per area", c.synth.sites_per_area),
      KEY(int, "synth.first_year", "first survey year", c.synth.first_year),
      KEY(int, "synth.last_year", "last survey year", c.synth.last_year),
      KEY(double, "synth.t0", "mean epidemic start", c.synth.mean.t0),
      KEY(double, "synth.t1", "mean stabilisation onset", c.synth.mean.t1),
      KEY(double, "synth.r0", "mean r0", c.synth.mean.r0),
      KEY(double, "synth.beta0", "mean", c.synth.mean.beta0),
      KEY(double, "synth.beta1", "mean", c.synth.mean.beta1),
      KEY(double, "synth.beta2", "mean", c.synth.mean.beta2),
      KEY(double, "synth.beta3", "mean", c.synth.mean.beta3),
      KEY(double, "synth.alpha", "mean ANC bias", c.synth.mean.alpha),
      KEY(double, "synth.sd_t0", "between-area sd", c.synth.sd_t0),
      KEY(double, "synth.sd_t1", "between-area sd", c.synth.sd_t1),
      KEY(double, "synth.sd_log_r0", "between-area sd", c.synth.sd_log_r0),
      KEY(double, "synth.sd_beta0", "between-area sd", c.synth.sd_beta0),
      KEY(double, "synth.sd_beta1", "between-area sd", c.synth.sd_beta1),
      KEY(double, "synth.sd_beta2", "between-area sd", c.synth.sd_beta2),
      KEY(double, "synth.sd_beta3", "between-area sd", c.synth.sd_beta3),
      KEY(double, "synth.sd_alpha", "between-area sd", c.synth.sd_alpha),
      KEY(double, "synth.site_sd", "probit-scale site effect sd", c.synth.site_sd),
      KEY(int, "synth.tested_min", "tested per record, lower", c.synth.tested_min),
      KEY(int, "synth.tested_max", "tested per record, upper", c.synth.tested_max),
      KEY(double, "synth.missingness", "probability a site-year is unobserved", c.synth.missingness),
      KEY(int, "synth.npbs_year", "survey year; 0 disables", c.synth.npbs_year),
      KEY(int, "synth.npbs_size", "survey sample size", c.synth.npbs_size),

      KEY(double, "simulate.t0", "r-trend t0", c.simulate.params.t0),
      KEY(double, "simulate.t1", "r-trend t1", c.simulate.params.t1),
      KEY(double, "simulate.r0", "r-trend r0", c.simulate.params.r0),
      KEY(double, "simulate.beta0", "r-trend", c.simulate.params.beta0),
      KEY(double, "simulate.beta1", "r-trend", c.simulate.params.beta1),
      KEY(double, "simulate.beta2", "r-trend", c.simulate.params.beta2),
      KEY(double, "simulate.beta3", "r-trend", c.simulate.params.beta3),
      KEY(int, "simulate.first_year", "first reported year", c.simulate.first_year),
      KEY(int, "simulate.last_year", "last reported year", c.simulate.last_year),
  };
  return r;
}

#undef KEY

const std::vector<Entry>& registry() {
  static const std::vector<Entry> r = build_registry();
  return r;
}

const Entry& find_entry(const std::string& key) {
  for (const auto& e : registry())
    if (e.key.name == key) return e;
  throw ValidationError("unknown config key '" + key + "'");
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& e : registry()) out.push_back(e.key);
    return out;
  }();
  return keys;
}

void PipelineConfig::set(const std::string& key, const std::string& value) { find_entry(trimmed(key)).set(*this, value); }

void PipelineConfig::validate() const {
  if (!seed) throw ValidationError("config: run.seed is required");
  if (workers < 1) throw ValidationError("config: run.workers must be >= 1");
  for (const std::string* path : {&surveillance, &npbs, &demography})
    if (!path->empty() && !std::filesystem::exists(*path)) throw ValidationError("config: path does not exist: " + *path);
  const auto& b = epp.budget;
  if (b.n_initial < 1 || b.n_per_stage < 1 || b.n_stages < 0 || b.n_resample < 1)
    throw ValidationError("config: IMIS budgets must be positive (n_stages may be 0)");
  if (!(b.unique_fraction_target > 0 && b.unique_fraction_target <= 1))
    throw ValidationError("config: epp.unique_fraction must lie in (0, 1]");
  if (!(epp.sim.step > 0 && epp.sim.step <= 1)) throw ValidationError("config: epp.step must lie in (0, 1]");
  epp.prior.validate();
  const auto& s2 = epp.sigma2_prior;
  if (!(s2.shape > 0 && s2.rate > 0 && s2.lower > 0 && s2.upper > s2.lower && s2.order >= 2))
    throw ValidationError("config: sigma2 prior needs shape, rate > 0, 0 < lower < upper, order >= 2");
  for (const McmcOptions* m : {&glmm, &augment.mcmc})
    if (m->n_chains < 1 || m->warmup < 0 || m->n_iter <= m->warmup || m->quadrature_order < 1 ||
        m->aux_quadrature_order < 1 || m->max_extensions < 0)
      throw ValidationError("config: MCMC settings need n_chains >= 1, n_iter > warmup >= 0, orders >= 1");
  if (n_basis < 4) throw ValidationError("config: glmm.n_basis must be >= 4");
  if (augment.grid.empty()) throw ValidationError("config: augment.grid is empty");
  for (int k : augment.grid)
    if (k < 1) throw ValidationError("config: augment.grid values must be >= 1");
  if (crossval.n_replicates < 1 || crossval.predictive_replicates < 1)
    throw ValidationError("config: crossval replicates must be >= 1");
  if (ppc.replicates < 1 || !(ppc.ks_level > 0 && ppc.ks_level < 1))
    throw ValidationError("config: ppc.replicates >= 1 and ppc.ks_level in (0, 1)");
  hivaug::validate(synth);
  if (simulate.last_year < simulate.first_year) throw ValidationError("config: simulate years are reversed");
}

std::string PipelineConfig::canonical() const {
  std::vector<std::string> lines;
  for (const auto& e : registry())
    if (e.key.hashed) lines.push_back(e.key.name + "=" + e.get(*this));
  std::sort(lines.begin(), lines.end());
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

std::string PipelineConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical())));
  return buf;
}

std::uint64_t PipelineConfig::master_seed() const {
  if (!seed) throw ValidationError("config: run.seed is required");
  return *seed;
}

DemographicSchedule PipelineConfig::demography_schedule() const {
  return demography.empty() ? DemographicSchedule::flat_default() : load_demography(demography);
}

PipelineConfig parse_config(std::istream& in, const std::string& source) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ValidationError(source + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  PipelineConfig config;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ValidationError(source + ": key '" + section + "' outside a section");
    for (const auto& [name, value] : body) {
      std::string text = value.get_value<std::string>();
      for (const char* marker : {" ;", " #", "\t;", "\t#"}) {
        const auto pos = text.find(marker);
        if (pos != std::string::npos) text = text.substr(0, pos);
      }
      config.set(section + "." + name, text);
    }
  }
  return config;
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path);
  return parse_config(in, path);
}

void apply_environment(PipelineConfig& config) {
  if (const char* w = std::getenv("HIVAUG_WORKERS"); w && *w) config.set("run.workers", w);
}

}  // namespace hivaug
