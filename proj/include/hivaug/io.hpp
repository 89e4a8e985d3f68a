#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "hivaug/augmentation.hpp"
#include "hivaug/data.hpp"
#include "hivaug/dynamics.hpp"
#include "hivaug/evaluation.hpp"
#include "hivaug/glmm.hpp"
#include "hivaug/inference.hpp"

namespace hivaug {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> line_numbers;  // source line of each row

  int column(const std::string& name) const;  // -1 if absent
};

// Comma-separated, optional double-quoted fields, blank lines skipped.
CsvTable parse_csv(std::istream& in);
CsvTable read_csv_file(const std::string& path);

// Shortest round-trip decimal form.
std::string format_double(double x);

SurveillanceDataset parse_surveillance(std::istream& in, const std::string& source = "<input>");
SurveillanceDataset ingest(const std::string& path);
std::vector<NPBSRecord> parse_npbs(std::istream& in, const std::string& source = "<input>");
std::vector<NPBSRecord> ingest_npbs(const std::string& path);
void write_surveillance(std::ostream& out, const std::vector<SurveillanceRecord>& records);
void write_npbs(std::ostream& out, const std::vector<NPBSRecord>& npbs);

// CSV `year,entrants,mu,a50,migration`; gaps between listed years are
// filled by linear interpolation.
DemographicSchedule parse_demography(std::istream& in, const std::string& source = "<input>");
DemographicSchedule load_demography(const std::string& path);

void write_trajectory(std::ostream& out, const Trajectory& traj);
void write_summary(std::ostream& out, const std::string& area_id, const PosteriorTrajectorySummary& summary,
                   bool header = true);
void write_resamples(std::ostream& out, const std::string& area_id, const std::vector<RTrendParams>& draws,
                     bool header = true);
std::map<std::string, std::vector<RTrendParams>> parse_resamples(std::istream& in);

void write_draws(std::ostream& out, const GlmmDraws& draws);
void write_diagnostics(std::ostream& out, const ChainDiagnostics& diag);
void write_mu(std::ostream& out, const std::vector<AreaPosterior>& posts);
void write_sigma(std::ostream& out, const std::vector<AreaPosterior>& posts);
std::vector<AreaPosterior> parse_area_posteriors(std::istream& mu, std::istream& sigma);

void write_kl(std::ostream& out, const std::vector<KLReport>& reports);
std::vector<KLReport> parse_kl(std::istream& in);

void write_cv_summary(std::ostream& out, const std::vector<CVReport>& reports);
void write_cv_areas(std::ostream& out, const CrossValidationResult& result);
void write_predictions(std::ostream& out, const CrossValidationResult& result);
void write_mae_change(std::ostream& out, const CrossValidationResult& result);
std::vector<CVReport> parse_cv_summary(std::istream& in);
// MAE / Width / Coverage / Time table, one row per model.
std::string format_cv_table(const std::vector<CVReport>& reports, const std::map<std::string, double>& runtimes = {});

// Long-format plot data: `series,x,y`.
struct Series {
  std::string name;
  std::vector<double> x, y;
};
std::vector<Series> series_from_summary(const std::string& area_id, const PosteriorTrajectorySummary& summary);
std::vector<Series> series_from_kl(const std::vector<KLReport>& reports);
Series series_from_mae_change(const std::map<std::string, double>& change);
Series series_from_ppc(const std::vector<double>& quantiles);
void write_series(std::ostream& out, const std::vector<Series>& series);
std::vector<Series> parse_series(std::istream& in);

}  // namespace hivaug
