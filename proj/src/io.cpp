#include "hivaug/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "hivaug/error.hpp"

namespace hivaug {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  return in;
}

bool parse_int(const std::string& s, int& out) {
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end && !s.empty();
}

bool parse_double(const std::string& s, double& out) {
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end && !s.empty() && std::isfinite(out);
}

void require_header(const CsvTable& t, const std::vector<std::string>& cols, const std::string& source) {
  if (t.header != cols) {
    std::string want, got;
    for (const auto& c : cols) want += (want.empty() ? "" : ",") + c;
    for (const auto& c : t.header) got += (got.empty() ? "" : ",") + c;
    throw ValidationError(source + ": expected header '" + want + "', found '" + got + "'");
  }
}

[[noreturn]] void throw_itemized(const std::string& source, const std::vector<std::string>& errors) {
  std::string msg = source + ": " + std::to_string(errors.size()) + " invalid row(s)";
  for (const auto& e : errors) msg += "\n  " + e;
  throw ValidationError(msg);
}

double number(const CsvTable& t, std::size_t row, int col, const std::string& source) {
  double v;
  if (col < 0 || !parse_double(t.rows[row].at(col), v))
    throw ValidationError(source + " line " + std::to_string(t.line_numbers[row]) + ": bad number");
  return v;
}

}  // namespace

int CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  return it == header.end() ? -1 : static_cast<int>(it - header.begin());
}

CsvTable parse_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  int line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_line(line);
    if (!have_header) {
      t.header = std::move(fields);
      have_header = true;
    } else {
      t.rows.push_back(std::move(fields));
      t.line_numbers.push_back(line_no);
    }
  }
  return t;
}

CsvTable read_csv_file(const std::string& path) {
  auto in = open_in(path);
  return parse_csv(in);
}

std::string format_double(double x) {
  if (!std::isfinite(x)) return std::isnan(x) ? "nan" : (x > 0 ? "inf" : "-inf");
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, p);
}

SurveillanceDataset parse_surveillance(std::istream& in, const std::string& source) {
  const CsvTable t = parse_csv(in);
  SurveillanceDataset data;
  if (t.header.empty()) throw ValidationError(source + ": missing header");
  require_header(t, {"area_id", "site_id", "year", "tested", "positive"}, source);
  std::vector<std::string> errors;
  std::map<std::tuple<std::string, std::string, int>, int> seen;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    const int line = t.line_numbers[i];
    const std::string where = "line " + std::to_string(line) + ": ";
    if (row.size() != 5) {
      errors.push_back(where + "expected 5 fields, found " + std::to_string(row.size()));
      continue;
    }
    SurveillanceRecord r;
    r.area_id = row[0];
    r.site_id = row[1];
    bool ok = true;
    if (r.area_id.empty() || r.site_id.empty()) {
      errors.push_back(where + "empty area_id or site_id");
      ok = false;
    }
    if (!parse_int(row[2], r.year)) {
      errors.push_back(where + "year '" + row[2] + "' is not an integer");
      ok = false;
    }
    if (!parse_int(row[3], r.tested)) {
      errors.push_back(where + "tested '" + row[3] + "' is not an integer");
      ok = false;
    }
    if (!parse_int(row[4], r.positive)) {
      errors.push_back(where + "positive '" + row[4] + "' is not an integer");
      ok = false;
    }
    if (!ok) continue;
    if (r.tested < 1) {
      errors.push_back(where + "tested must be >= 1");
      continue;
    }
    if (r.positive < 0) {
      errors.push_back(where + "positive must be >= 0");
      continue;
    }
    if (r.positive > r.tested) {
      errors.push_back(where + "positive (" + std::to_string(r.positive) + ") exceeds tested (" +
                       std::to_string(r.tested) + ")");
      continue;
    }
    const auto key = std::make_tuple(r.area_id, r.site_id, r.year);
    const auto [it, inserted] = seen.emplace(key, line);
    if (!inserted) {
      errors.push_back(where + "duplicate of line " + std::to_string(it->second) + " (" + r.area_id + ", " +
                       r.site_id + ", " + std::to_string(r.year) + ")");
      continue;
    }
    r.is_auxiliary = is_aux_site_id(r.site_id);
    data.records.push_back(std::move(r));
  }
  if (!errors.empty()) throw_itemized(source, errors);
  return data;
}

SurveillanceDataset ingest(const std::string& path) {
  auto in = open_in(path);
  return parse_surveillance(in, path);
}

std::vector<NPBSRecord> parse_npbs(std::istream& in, const std::string& source) {
  const CsvTable t = parse_csv(in);
  std::vector<NPBSRecord> out;
  if (t.header.empty()) throw ValidationError(source + ": missing header");
  require_header(t, {"area_id", "year", "prevalence", "std_err"}, source);
  std::vector<std::string> errors;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    const std::string where = "line " + std::to_string(t.line_numbers[i]) + ": ";
    NPBSRecord r;
    if (row.size() != 4 || row[0].empty() || !parse_int(row[1], r.year) || !parse_double(row[2], r.prevalence) ||
        !parse_double(row[3], r.std_err)) {
      errors.push_back(where + "malformed NPBS row");
      continue;
    }
    r.area_id = row[0];
    if (!(r.prevalence > 0 && r.prevalence < 1)) errors.push_back(where + "prevalence must lie in (0, 1)");
    else if (!(r.std_err > 0)) errors.push_back(where + "std_err must be > 0");
    else out.push_back(std::move(r));
  }
  if (!errors.empty()) throw_itemized(source, errors);
  return out;
}

std::vector<NPBSRecord> ingest_npbs(const std::string& path) {
  auto in = open_in(path);
  return parse_npbs(in, path);
}

void write_surveillance(std::ostream& out, const std::vector<SurveillanceRecord>& records) {
  out << "area_id,site_id,year,tested,positive\n";
  for (const auto& r : records)
    out << r.area_id << ',' << r.site_id << ',' << r.year << ',' << r.tested << ',' << r.positive << '\n';
}

void write_npbs(std::ostream& out, const std::vector<NPBSRecord>& npbs) {
  out << "area_id,year,prevalence,std_err\n";
  for (const auto& r : npbs)
    out << r.area_id << ',' << r.year << ',' << format_double(r.prevalence) << ',' << format_double(r.std_err)
        << '\n';
}

DemographicSchedule parse_demography(std::istream& in, const std::string& source) {
  const CsvTable t = parse_csv(in);
  require_header(t, {"year", "entrants", "mu", "a50", "migration"}, source);
  if (t.rows.empty()) throw ValidationError(source + ": no demographic rows");
  std::map<int, std::array<double, 4>> rows;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    int year;
    if (t.rows[i].size() != 5 || !parse_int(t.rows[i][0], year))
      throw ValidationError(source + " line " + std::to_string(t.line_numbers[i]) + ": bad year");
    std::array<double, 4> v{};
    for (int c = 0; c < 4; ++c) v[c] = number(t, i, c + 1, source);
    if (!rows.emplace(year, v).second)
      throw ValidationError(source + " line " + std::to_string(t.line_numbers[i]) + ": duplicate year");
  }
  DemographicSchedule d = DemographicSchedule::flat_default();
  d.first_year = rows.begin()->first;
  const int last = rows.rbegin()->first;
  d.entrants.clear();
  d.mu.clear();
  d.a50.clear();
  d.migration.clear();
  auto hi = rows.begin();
  for (int y = d.first_year; y <= last; ++y) {
    while (hi->first < y) ++hi;
    std::array<double, 4> v;
    if (hi->first == y) {
      v = hi->second;
    } else {
      const auto lo = std::prev(hi);
      const double w = double(y - lo->first) / (hi->first - lo->first);
      for (int c = 0; c < 4; ++c) v[c] = (1 - w) * lo->second[c] + w * hi->second[c];
    }
    d.entrants.push_back(v[0]);
    d.mu.push_back(v[1]);
    d.a50.push_back(v[2]);
    d.migration.push_back(v[3]);
  }
  d.validate();
  return d;
}

DemographicSchedule load_demography(const std::string& path) {
  auto in = open_in(path);
  return parse_demography(in, path);
}

void write_trajectory(std::ostream& out, const Trajectory& traj) {
  out << "year,prevalence,incidence,hiv_mortality,infection_rate\n";
  for (std::size_t i = 0; i < traj.size(); ++i)
    out << traj.first_year + static_cast<int>(i) << ',' << format_double(traj.prevalence[i]) << ','
        << format_double(traj.incidence[i]) << ',' << format_double(traj.hiv_mortality[i]) << ','
        << format_double(traj.infection_rate[i]) << '\n';
}

void write_summary(std::ostream& out, const std::string& area_id, const PosteriorTrajectorySummary& s, bool header) {
  if (header) out << "area_id,year,quantity,q025,median,q975\n";
  const std::pair<const char*, const QuantileBand*> bands[] = {
      {"prevalence", &s.prevalence}, {"incidence", &s.incidence}, {"mortality", &s.mortality}};
  for (const auto& [name, band] : bands)
    for (std::size_t i = 0; i < band->median.size(); ++i)
      out << area_id << ',' << s.first_year + static_cast<int>(i) << ',' << name << ','
          << format_double(band->q025[i]) << ',' << format_double(band->median[i]) << ','
          << format_double(band->q975[i]) << '\n';
}

void write_resamples(std::ostream& out, const std::string& area_id, const std::vector<RTrendParams>& draws,
                     bool header) {
  if (header) out << "area_id,draw,t0,t1,r0,beta0,beta1,beta2,beta3,alpha\n";
  for (std::size_t i = 0; i < draws.size(); ++i) {
    const auto& p = draws[i];
    out << area_id << ',' << i;
    for (double v : {p.t0, p.t1, p.r0, p.beta0, p.beta1, p.beta2, p.beta3, p.alpha}) out << ',' << format_double(v);
    out << '\n';
  }
}

std::map<std::string, std::vector<RTrendParams>> parse_resamples(std::istream& in) {
  const CsvTable t = parse_csv(in);
  require_header(t, {"area_id", "draw", "t0", "t1", "r0", "beta0", "beta1", "beta2", "beta3", "alpha"},
                 "resamples");
  std::map<std::string, std::vector<RTrendParams>> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    RTrendParams p;
    double* fields[] = {&p.t0, &p.t1, &p.r0, &p.beta0, &p.beta1, &p.beta2, &p.beta3, &p.alpha};
    for (int c = 0; c < 8; ++c) *fields[c] = number(t, i, c + 2, "resamples");
    out[t.rows[i][0]].push_back(p);
  }
  return out;
}

void write_draws(std::ostream& out, const GlmmDraws& draws) {
  out << "chain,iteration";
  for (const auto& c : draws.columns) out << ',' << c;
  out << '\n';
  for (Eigen::Index r = 0; r < draws.values.rows(); ++r) {
    out << r / draws.per_chain << ',' << r % draws.per_chain;
    for (Eigen::Index c = 0; c < draws.values.cols(); ++c) out << ',' << format_double(draws.values(r, c));
    out << '\n';
  }
}

void write_diagnostics(std::ostream& out, const ChainDiagnostics& diag) {
  out << "parameter,rhat,ess\n";
  for (std::size_t i = 0; i < diag.names.size(); ++i)
    out << diag.names[i] << ',' << format_double(diag.rhat[i]) << ',' << format_double(diag.ess[i]) << '\n';
}

void write_mu(std::ostream& out, const std::vector<AreaPosterior>& posts) {
  out << "area_id,year,mu\n";
  for (const auto& p : posts)
    for (std::size_t t = 0; t < p.years.size(); ++t)
      out << p.area_id << ',' << p.years[t] << ',' << format_double(p.mu(static_cast<Eigen::Index>(t))) << '\n';
}

void write_sigma(std::ostream& out, const std::vector<AreaPosterior>& posts) {
  out << "area_id,year_i,year_j,sigma\n";
  for (const auto& p : posts)
    for (std::size_t i = 0; i < p.years.size(); ++i)
      for (std::size_t j = 0; j < p.years.size(); ++j)
        out << p.area_id << ',' << p.years[i] << ',' << p.years[j] << ','
            << format_double(p.sigma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) << '\n';
}

std::vector<AreaPosterior> parse_area_posteriors(std::istream& mu_in, std::istream& sigma_in) {
  const CsvTable mu = parse_csv(mu_in);
  const CsvTable sg = parse_csv(sigma_in);
  require_header(mu, {"area_id", "year", "mu"}, "mu.csv");
  require_header(sg, {"area_id", "year_i", "year_j", "sigma"}, "sigma.csv");
  std::vector<AreaPosterior> out;
  std::map<std::string, std::size_t> index;
  std::map<std::string, std::vector<double>> means;
  for (std::size_t i = 0; i < mu.rows.size(); ++i) {
    const std::string& area = mu.rows[i][0];
    if (!index.count(area)) {
      index[area] = out.size();
      out.push_back({area, {}, {}, {}});
    }
    int year;
    if (!parse_int(mu.rows[i][1], year)) throw ValidationError("mu.csv: bad year");
    out[index[area]].years.push_back(year);
    means[area].push_back(number(mu, i, 2, "mu.csv"));
  }
  for (auto& p : out) {
    p.mu = Eigen::Map<const Eigen::VectorXd>(means[p.area_id].data(), static_cast<Eigen::Index>(p.years.size()));
    p.sigma = Eigen::MatrixXd::Zero(p.mu.size(), p.mu.size());
  }
  for (std::size_t i = 0; i < sg.rows.size(); ++i) {
    const auto it = index.find(sg.rows[i][0]);
    if (it == index.end()) throw ValidationError("sigma.csv: area without mean");
    AreaPosterior& p = out[it->second];
    int yi, yj;
    if (!parse_int(sg.rows[i][1], yi) || !parse_int(sg.rows[i][2], yj)) throw ValidationError("sigma.csv: bad year");
    const auto a = std::find(p.years.begin(), p.years.end(), yi) - p.years.begin();
    const auto b = std::find(p.years.begin(), p.years.end(), yj) - p.years.begin();
    if (a >= p.mu.size() || b >= p.mu.size()) throw ValidationError("sigma.csv: year not in mu.csv");
    p.sigma(a, b) = number(sg, i, 3, "sigma.csv");
  }
  return out;
}

void write_kl(std::ostream& out, const std::vector<KLReport>& reports) {
  out << "area_id,k,kl,selected\n";
  for (const auto& r : reports)
    for (const auto& e : r.entries)
      out << r.area_id << ',' << e.k << ',' << (e.converged ? format_double(e.kl) : std::string("NA")) << ','
          << (e.selected ? 1 : 0) << '\n';
}

std::vector<KLReport> parse_kl(std::istream& in) {
  const CsvTable t = parse_csv(in);
  require_header(t, {"area_id", "k", "kl", "selected"}, "kl.csv");
  std::vector<KLReport> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    if (out.empty() || out.back().area_id != row[0]) out.push_back({row[0], {}, 0, 0.0});
    KLEntry e;
    if (!parse_int(row[1], e.k)) throw ValidationError("kl.csv: bad K");
    e.converged = row[2] != "NA";
    if (e.converged) e.kl = number(t, i, 2, "kl.csv");
    e.selected = row[3] == "1";
    if (e.selected) {
      out.back().selected_k = e.k;
      out.back().selected_kl = e.kl;
    }
    out.back().entries.push_back(e);
  }
  return out;
}

void write_cv_summary(std::ostream& out, const std::vector<CVReport>& reports) {
  out << "model,mae,width,coverage,n\n";
  for (const auto& r : reports)
    out << r.model << ',' << format_double(r.overall.mae) << ',' << format_double(r.overall.width) << ','
        << format_double(r.overall.coverage) << ',' << r.overall.n << '\n';
}

std::vector<CVReport> parse_cv_summary(std::istream& in) {
  const CsvTable t = parse_csv(in);
  require_header(t, {"model", "mae", "width", "coverage", "n"}, "cv_report.csv");
  std::vector<CVReport> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    CVReport r;
    r.model = t.rows[i][0];
    r.overall.mae = number(t, i, 1, "cv_report.csv");
    r.overall.width = number(t, i, 2, "cv_report.csv");
    r.overall.coverage = number(t, i, 3, "cv_report.csv");
    r.overall.n = static_cast<std::size_t>(number(t, i, 4, "cv_report.csv"));
    out.push_back(r);
  }
  return out;
}

void write_cv_areas(std::ostream& out, const CrossValidationResult& result) {
  out << "replicate,area_id,model,mae,width,coverage,n\n";
  for (const auto& rep : result.replicates)
    for (const CVReport* r : {&rep.independent, &rep.augmented})
      for (const auto& [area, m] : r->by_area)
        out << rep.plan.replicate << ',' << area << ',' << r->model << ',' << format_double(m.mae) << ','
            << format_double(m.width) << ',' << format_double(m.coverage) << ',' << m.n << '\n';
}

void write_predictions(std::ostream& out, const CrossValidationResult& result) {
  out << "replicate,model,area_id,site_id,year,tested,positive,observed,point,lower,upper\n";
  for (const auto& rep : result.replicates) {
    const std::pair<const char*, const std::vector<Prediction>*> sets[] = {
        {"independent", &rep.independent_predictions}, {"augmented", &rep.augmented_predictions}};
    for (const auto& [model, preds] : sets)
      for (const auto& p : *preds)
        out << rep.plan.replicate << ',' << model << ',' << p.record.area_id << ',' << p.record.site_id << ','
            << p.record.year << ',' << p.record.tested << ',' << p.record.positive << ','
            << format_double(p.observed) << ',' << format_double(p.point) << ',' << format_double(p.lower) << ','
            << format_double(p.upper) << '\n';
  }
}

void write_mae_change(std::ostream& out, const CrossValidationResult& result) {
  out << "replicate,area_id,relative_change\n";
  for (const auto& rep : result.replicates)
    for (const auto& [area, change] : relative_mae_change(rep.independent, rep.augmented))
      out << rep.plan.replicate << ',' << area << ',' << format_double(change) << '\n';
}

std::string format_cv_table(const std::vector<CVReport>& reports, const std::map<std::string, double>& runtimes) {
  std::ostringstream out;
  out << std::left << std::setw(24) << "" << std::right << std::setw(8) << "MAE" << std::setw(9) << "Width"
      << std::setw(11) << "Coverage";
  if (!runtimes.empty()) out << std::setw(11) << "Time (s)";
  out << '\n';
  out << std::fixed;
  for (const auto& r : reports) {
    out << std::left << std::setw(24) << r.model << std::right << std::setprecision(2) << std::setw(8)
        << r.overall.mae << std::setw(9) << r.overall.width << std::setprecision(1) << std::setw(10)
        << 100.0 * r.overall.coverage << '%';
    const auto it = runtimes.find(r.model);
    if (it != runtimes.end()) out << std::setprecision(1) << std::setw(11) << it->second;
    out << '\n';
  }
  return out.str();
}

std::vector<Series> series_from_summary(const std::string& area_id, const PosteriorTrajectorySummary& s) {
  std::vector<Series> out;
  const std::pair<const char*, const QuantileBand*> bands[] = {
      {"prevalence", &s.prevalence}, {"incidence", &s.incidence}, {"mortality", &s.mortality}};
  for (const auto& [name, band] : bands) {
    const std::pair<const char*, const std::vector<double>*> parts[] = {
        {"median", &band->median}, {"lo", &band->q025}, {"hi", &band->q975}};
    for (const auto& [part, values] : parts) {
      Series ser;
      ser.name = area_id + ":" + name + ":" + part;
      for (std::size_t i = 0; i < values->size(); ++i) {
        ser.x.push_back(s.first_year + static_cast<double>(i));
        ser.y.push_back((*values)[i]);
      }
      out.push_back(std::move(ser));
    }
  }
  return out;
}

std::vector<Series> series_from_kl(const std::vector<KLReport>& reports) {
  std::map<int, Series> by_k;
  for (std::size_t a = 0; a < reports.size(); ++a)
    for (const auto& e : reports[a].entries) {
      if (e.k == 0 || !e.converged) continue;
      Series& s = by_k[e.k];
      s.name = "kl:K=" + std::to_string(e.k);
      s.x.push_back(static_cast<double>(a + 1));
      s.y.push_back(e.kl);
    }
  std::vector<Series> out;
  for (auto& [_, s] : by_k) out.push_back(std::move(s));
  Series sel{"kl:selected", {}, {}};
  for (std::size_t a = 0; a < reports.size(); ++a) {
    sel.x.push_back(static_cast<double>(a + 1));
    sel.y.push_back(reports[a].selected_kl);
  }
  out.push_back(std::move(sel));
  return out;
}

Series series_from_mae_change(const std::map<std::string, double>& change) {
  Series s{"mae_change", {}, {}};
  double i = 1;
  for (const auto& [_, v] : change) {
    s.x.push_back(i++);
    s.y.push_back(v);
  }
  return s;
}

Series series_from_ppc(const std::vector<double>& quantiles) {
  Series s{"ppc", {}, {}};
  std::vector<double> q = quantiles;
  std::sort(q.begin(), q.end());
  for (std::size_t i = 0; i < q.size(); ++i) {
    s.x.push_back((i + 1.0) / (q.size() + 1.0));
    s.y.push_back(q[i]);
  }
  return s;
}

void write_series(std::ostream& out, const std::vector<Series>& series) {
  out << "series,x,y\n";
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i)
      out << s.name << ',' << format_double(s.x[i]) << ',' << format_double(s.y[i]) << '\n';
}

std::vector<Series> parse_series(std::istream& in) {
  const CsvTable t = parse_csv(in);
  require_header(t, {"series", "x", "y"}, "series");
  std::vector<Series> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (out.empty() || out.back().name != t.rows[i][0]) out.push_back({t.rows[i][0], {}, {}});
    out.back().x.push_back(number(t, i, 1, "series"));
    out.back().y.push_back(number(t, i, 2, "series"));
  }
  return out;
}

}  // namespace hivaug
