#pragma once

#include <string>
#include <vector>

namespace hivaug {

// One ANC site-year observation. Auxiliary pseudo-records use a site id
// prefixed "aux:" and carry is_auxiliary = true.
struct SurveillanceRecord {
  std::string area_id;
  std::string site_id;
  int year = 0;
  int tested = 1;
  int positive = 0;
  bool is_auxiliary = false;

  double proportion() const { return static_cast<double>(positive) / tested; }
  bool operator==(const SurveillanceRecord&) const = default;
};

// National population-based survey point for one area.
struct NPBSRecord {
  std::string area_id;
  int year = 0;
  double prevalence = 0.0;
  double std_err = 0.0;
  bool operator==(const NPBSRecord&) const = default;
};

struct SurveillanceDataset {
  std::vector<SurveillanceRecord> records;
  std::vector<NPBSRecord> npbs;

  bool empty() const { return records.empty(); }
  // Sorted unique area ids across records and NPBS points.
  std::vector<std::string> area_ids() const;
  SurveillanceDataset for_area(const std::string& area_id) const;
  int min_year() const;
  int max_year() const;
};

inline constexpr const char* kAuxSitePrefix = "aux:";

bool is_aux_site_id(const std::string& site_id);

}  // namespace hivaug
