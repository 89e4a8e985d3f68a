#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "hivaug/config.hpp"
#include "hivaug/error.hpp"
#include "hivaug/hivaug.h"
#include "hivaug/io.hpp"
#include "hivaug/pipeline.hpp"

using namespace hivaug;
namespace fs = std::filesystem;

namespace {

const char* kHeader = "area_id,site_id,year,tested,positive\n";

std::string error_of(const std::string& csv) {
  std::istringstream in(csv);
  try {
    parse_surveillance(in, "t.csv");
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hivaug_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(HIVAUG_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("surveillance ingest accepts a header-only file and one row") {
  std::istringstream empty(kHeader);
  CHECK(parse_surveillance(empty).records.empty());

  std::istringstream one(std::string(kHeader) + "A01,S1,2001,300,27\n");
  const auto d = parse_surveillance(one);
  REQUIRE(d.records.size() == 1);
  CHECK(d.records[0] == SurveillanceRecord{"A01", "S1", 2001, 300, 27, false});

  std::istringstream aux(std::string(kHeader) + "A01,aux:3,2001,300,27\n");
  CHECK(parse_surveillance(aux).records[0].is_auxiliary);
}

TEST_CASE("surveillance ingest rejects bad rows with line numbers") {
  const std::string dup = error_of(std::string(kHeader) + "A,S1,2001,100,5\nA,S2,2001,100,5\nA,S1,2001,120,6\n");
  CHECK(dup.find("line 4") != std::string::npos);
  CHECK(dup.find("duplicate of line 2") != std::string::npos);

  const std::string over = error_of(std::string(kHeader) + "A,S1,2001,100,5\nA,S1,2002,100,101\n");
  CHECK(over.find("line 3") != std::string::npos);
  CHECK(over.find("exceeds tested") != std::string::npos);

  const std::string many = error_of(std::string(kHeader) + "A,S1,x,100,5\nA,S1,2002,0,0\n");
  CHECK(many.find("2 invalid row(s)") != std::string::npos);

  CHECK(error_of("area,site,year,n,y\n").find("expected header") != std::string::npos);
  CHECK_THROWS_AS(ingest("/nonexistent/file.csv"), ValidationError);
}

TEST_CASE("numbers round-trip through their text form") {
  for (double x : {0.1, 1.0 / 3.0, 1e-300, -2.5e17, 0.0}) CHECK(std::stod(format_double(x)) == x);
}

TEST_CASE("surveillance and NPBS round trip") {
  SurveillanceDataset d;
  d.records = {{"A", "S1", 2000, 150, 12}, {"A", "aux:1", 2001, 800, 77, true}, {"B", "S 2", 2003, 99, 0}};
  std::ostringstream out;
  write_surveillance(out, d.records);
  std::istringstream in(out.str());
  CHECK(parse_surveillance(in).records == d.records);

  const std::vector<NPBSRecord> npbs = {{"A", 2004, 0.123, 0.01}, {"B", 2005, 1.0 / 7.0, 0.02}};
  std::ostringstream o2;
  write_npbs(o2, npbs);
  std::istringstream i2(o2.str());
  CHECK(parse_npbs(i2) == npbs);
}

TEST_CASE("resamples, posteriors and KL tables round trip") {
  std::vector<RTrendParams> draws(3);
  draws[1].t0 = 1977.25;
  draws[2].alpha = -0.3;
  std::ostringstream out;
  write_resamples(out, "A01", draws);
  write_resamples(out, "A02", {draws[0]}, false);
  std::istringstream in(out.str());
  const auto back = parse_resamples(in);
  REQUIRE(back.size() == 2);
  REQUIRE(back.at("A01").size() == 3);
  CHECK(back.at("A01")[1].t0 == 1977.25);
  CHECK(back.at("A01")[2].alpha == -0.3);

  AreaPosterior p;
  p.area_id = "A03";
  p.years = {2000, 2001, 2002};
  p.mu = Eigen::Vector3d(0.1, 0.11, 1.0 / 9.0);
  p.sigma = Eigen::Matrix3d::Identity() * 1e-4;
  p.sigma(0, 2) = p.sigma(2, 0) = 3e-5;
  std::ostringstream mu, sg;
  write_mu(mu, {p});
  write_sigma(sg, {p});
  std::istringstream mi(mu.str()), si(sg.str());
  const auto posts = parse_area_posteriors(mi, si);
  REQUIRE(posts.size() == 1);
  CHECK(posts[0].years == p.years);
  CHECK(posts[0].mu == p.mu);
  CHECK(posts[0].sigma == p.sigma);

  KLReport r;
  r.area_id = "A01";
  r.entries = {{0, 4.5, true}, {25, 2.125, true}, {100, 0.0, false}, {400, 0.75, true, true}};
  r.selected_k = 400;
  r.selected_kl = 0.75;
  std::ostringstream k;
  write_kl(k, {r});
  CHECK(k.str().find("A01,100,NA,0") != std::string::npos);
  std::istringstream ki(k.str());
  const auto kl = parse_kl(ki);
  REQUIRE(kl.size() == 1);
  CHECK(kl[0].selected_k == 400);
  CHECK(kl[0].entry(25).kl == 2.125);
  CHECK_FALSE(kl[0].entry(100).converged);
}

TEST_CASE("summary series carry median and band per quantity") {
  PosteriorTrajectorySummary s;
  s.first_year = 2000;
  for (auto* band : {&s.prevalence, &s.incidence, &s.mortality}) {
    band->q025 = {0.1, 0.2};
    band->median = {0.15, 0.25};
    band->q975 = {0.2, 0.3};
  }
  const auto series = series_from_summary("A01", s);
  CHECK(series.size() == 9);
  std::ostringstream out;
  write_series(out, series);
  std::istringstream in(out.str());
  const auto back = parse_series(in);
  REQUIRE(back.size() == series.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].name == series[i].name);
    CHECK(back[i].x == series[i].x);
    CHECK(back[i].y == series[i].y);
  }
}

TEST_CASE("cross-validation summary round trip and table") {
  CVReport a, b;
  a.model = "Independent Model";
  a.overall = {1.5, 6.25, 0.9, 40};
  b.model = "Augmented Data Model";
  b.overall = {1.25, 5.5, 0.925, 40};
  std::ostringstream out;
  write_cv_summary(out, {a, b});
  std::istringstream in(out.str());
  const auto back = parse_cv_summary(in);
  REQUIRE(back.size() == 2);
  CHECK(back[1].model == b.model);
  CHECK(back[1].overall.mae == 1.25);
  CHECK(back[0].overall.n == 40);
  const std::string table = format_cv_table(back);
  CHECK(table.find("Coverage") != std::string::npos);
  CHECK(table.find("Augmented Data Model") != std::string::npos);
}

TEST_CASE("config keys, precedence inputs and hash") {
  std::istringstream ini(
      "[run]\nseed = 42\nworkers = 3 ; comment\n[glmm]\nn_iter = 1200\nwarmup = 400\n[augment]\ngrid = 25,100\n");
  PipelineConfig c = parse_config(ini);
  CHECK(c.master_seed() == 42);
  CHECK(c.workers == 3);
  CHECK(c.glmm.n_iter == 1200);
  CHECK(c.augment.grid == std::vector<int>{25, 100});
  c.validate();

  const std::string h = c.hash();
  CHECK(h.size() == 16);
  c.set("run.workers", "1");
  c.set("run.output", "elsewhere");
  CHECK(c.hash() == h);
  c.set("glmm.n_iter", "1300");
  CHECK(c.hash() != h);

  CHECK_THROWS_AS(c.set("glmm.bogus", "1"), ValidationError);
  CHECK_THROWS_AS(c.set("glmm.n_iter", "many"), ValidationError);
  PipelineConfig no_seed;
  CHECK_THROWS_AS(no_seed.validate(), ValidationError);
  std::istringstream stray("seed = 1\n");
  CHECK_THROWS_AS(parse_config(stray), ValidationError);

  for (const auto& k : config_keys()) CHECK(k.name.find('.') != std::string::npos);
}

TEST_CASE("C interface") {
  CHECK(std::string(hivaug_version()) == kVersion);
  hivaug_config* cfg = nullptr;
  REQUIRE(hivaug_config_new(&cfg) == HIVAUG_OK);
  CHECK(hivaug_config_validate(cfg) == HIVAUG_ERR_VALIDATION);
  CHECK(std::string(hivaug_last_error()).find("seed") != std::string::npos);
  CHECK(hivaug_config_set(cfg, "run.seed", "5") == HIVAUG_OK);
  CHECK(hivaug_config_validate(cfg) == HIVAUG_OK);
  CHECK(hivaug_config_set(cfg, "nope.key", "1") == HIVAUG_ERR_VALIDATION);

  size_t needed = 0;
  char small[4];
  CHECK(hivaug_config_hash(cfg, small, sizeof small, &needed) == HIVAUG_OK);
  CHECK(needed == 17);
  CHECK(std::string(small).size() == 3);
  std::string full(needed, '\0');
  hivaug_config_hash(cfg, full.data(), full.size(), &needed);
  PipelineConfig same;
  same.set("run.seed", "5");
  CHECK(std::string(full.c_str()) == same.hash());

  CHECK(hivaug_config_key_count() == config_keys().size());
  CHECK(hivaug_stage_count() == stage_names().size());
  CHECK(std::string(hivaug_stage_name(0)) == stage_names()[0]);
  CHECK(hivaug_stage_name(hivaug_stage_count()) == nullptr);

  hivaug_result* res = nullptr;
  CHECK(hivaug_run_stage(cfg, "no-such-stage", 0, &res) == HIVAUG_ERR_USAGE);
  hivaug_result_free(res);
  hivaug_config_free(cfg);

  const double params[7] = {1978, 1992, 1.2, 0.45, 0.15, -1.5, -0.5};
  std::vector<double> prev(41);
  REQUIRE(hivaug_simulate_prevalence(params, 1970, 2010, prev.data(), prev.size()) == HIVAUG_OK);
  const auto direct =
      simulate(RTrendParams{1978, 1992, 1.2, 0.45, 0.15, -1.5, -0.5, 0.0}, DemographicSchedule::flat_default(), 1970,
               2010);
  CHECK(prev == direct.trajectory.prevalence);
  CHECK(hivaug_simulate_prevalence(params, 1970, 2010, prev.data(), 3) == HIVAUG_ERR_VALIDATION);

  const double mp[1] = {0.3}, cp[1] = {1.0}, cq[1] = {2.0};
  double kl = 0;
  REQUIRE(hivaug_gaussian_kl(1, mp, cp, mp, cq, &kl) == HIVAUG_OK);
  CHECK(std::abs(kl - 0.5 * (0.5 - 1.0 + std::log(2.0))) < 1e-12);
  CHECK(hivaug_gaussian_kl(1, nullptr, cp, mp, cq, &kl) == HIVAUG_ERR_USAGE);
}

TEST_CASE("command line exit codes and reproducible synthesis") {
  const fs::path dir = scratch("cli");
  CHECK(run_cli("simulate --no-such-flag") == 64);
  CHECK(run_cli("not-a-command") == 64);

  {
    std::ofstream bad(dir / "bad.csv");
    bad << kHeader << "A01,S1,2001,100,5\nA01,S1,2002,100,500\n";
  }
  CHECK(run_cli("fit-glmm --seed 1 --data " + (dir / "bad.csv").string() + " --out " + (dir / "g").string()) == 1);
  CHECK(run_cli("fit-glmm --out " + (dir / "g").string()) == 1);

  const std::string a = (dir / "a").string(), b = (dir / "b").string();
  REQUIRE(run_cli("synth --seed 7 --set synth.n_areas=2 --out " + a) == 0);
  REQUIRE(run_cli("synth --seed 7 --set synth.n_areas=2 -j 2 --out " + b) == 0);
  for (const char* f : {"surveillance.csv", "npbs.csv", "truth_params.csv"}) {
    CHECK(fs::exists(fs::path(a) / f));
    CHECK(slurp(fs::path(a) / f) == slurp(fs::path(b) / f));
  }
  CHECK(fs::exists(fs::path(a) / "manifest.json"));

  REQUIRE(run_cli("simulate --seed 1 --out " + (dir / "s").string()) == 0);
  std::ifstream traj(dir / "s" / "trajectory.csv");
  std::string header;
  std::getline(traj, header);
  CHECK(header == "year,prevalence,incidence,hiv_mortality,infection_rate");
  fs::remove_all(dir);
}
