#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "rsdg/error.hpp"

namespace rsdg {

// One defense variant's metric row. NaN fields render as "n/a".
struct ReportRow {
  std::string defense;
  double iterations_to_collapse = std::numeric_limits<double>::quiet_NaN();
  double modes = std::numeric_limits<double>::quiet_NaN();
  double gc = std::numeric_limits<double>::quiet_NaN();
  double wer_pct = std::numeric_limits<double>::quiet_NaN();
  double sla_pct = std::numeric_limits<double>::quiet_NaN();
  double seg_snr_db = std::numeric_limits<double>::quiet_NaN();
  double stoi = std::numeric_limits<double>::quiet_NaN();
};

// Published reference results kept for side-by-side context in reports.
// Values are display-scaled as published: iterations x12,500 and modes
// x16.5; gc is per batch. DPS column set.
inline std::vector<ReportRow> reference_rows() {
  const double na = std::numeric_limits<double>::quiet_NaN();
  return {
      {"MRCA (ref)", na, na, na, 29.01, 56.67, 16.09, 0.74},
      {"Dompteur (ref)", na, na, na, 18.29, 61.91, 18.35, 0.77},
      {"A-GAN (ref)", 0.71, 1.19, 619, 24.77, 65.19, 22.49, 0.81},
      {"CCD-GAN (ref)", 1.76, 2.98, 433, 9.33, 68.41, 22.76, 0.88},
      {"CD-GAN (ref)", 1.87, 2.91, 512, 8.91, 71.07, 25.17, 0.87},
      {"SD-GAN (ref)", 2.04, 3.85, 451, 8.22, 71.39, 26.34, 0.89},
      {"RSD-GAN (ref)", 2.89, 4.18, 211, 6.11, 75.88, 34.12, 0.96},
  };
}

namespace report_detail {

struct Agg {
  std::vector<double> values;
  double mean() const {
    double acc = 0.0;
    int n = 0;
    for (double v : values)
      if (!std::isnan(v)) {
        acc += v;
        ++n;
      }
    return n > 0 ? acc / n : std::numeric_limits<double>::quiet_NaN();
  }
  double stddev() const {
    int n = 0;
    for (double v : values)
      if (!std::isnan(v)) ++n;
    if (n < 2) return std::numeric_limits<double>::quiet_NaN();
    const double m = mean();
    double acc = 0.0;
    for (double v : values)
      if (!std::isnan(v)) acc += (v - m) * (v - m);
    return std::sqrt(acc / (n - 1));
  }
};

inline std::string fmt(double v, int decimals) {
  if (std::isnan(v)) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

}  // namespace report_detail

struct RenderedReport {
  std::string csv;
  std::string text;
};

// Aggregates rows by defense name (mean plus sample standard deviation over
// repetitions) and renders both a CSV and an aligned text table. Column
// order follows the accountability-then-accuracy-then-quality grouping.
inline RenderedReport render_report(const std::vector<ReportRow>& rows,
                                    const std::string& config_hash = "") {
  require(!rows.empty(), "render_report: no rows");

  std::vector<std::string> order;
  std::map<std::string, std::vector<ReportRow>> groups;
  for (const ReportRow& r : rows) {
    if (groups.find(r.defense) == groups.end()) order.push_back(r.defense);
    groups[r.defense].push_back(r);
  }

  struct Col {
    const char* name;
    double ReportRow::* field;
    int decimals;
  };
  const Col cols[] = {
      {"iterations", &ReportRow::iterations_to_collapse, 2},
      {"modes", &ReportRow::modes, 2},
      {"gc", &ReportRow::gc, 0},
      {"wer_pct", &ReportRow::wer_pct, 2},
      {"sla_pct", &ReportRow::sla_pct, 2},
      {"seg_snr_db", &ReportRow::seg_snr_db, 2},
      {"stoi", &ReportRow::stoi, 2},
  };

  std::string csv;
  if (!config_hash.empty()) csv += "# config_hash=" + config_hash + "\n";
  csv += "defense";
  for (const Col& c : cols) {
    csv += ",";
    csv += c.name;
    csv += ",";
    csv += c.name;
    csv += "_std";
  }
  csv += "\n";

  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header = {"defense"};
  for (const Col& c : cols) header.push_back(c.name);
  cells.push_back(header);

  for (const std::string& name : order) {
    const std::vector<ReportRow>& g = groups[name];
    csv += name;
    std::vector<std::string> line = {name};
    for (const Col& c : cols) {
      report_detail::Agg agg;
      for (const ReportRow& r : g) agg.values.push_back(r.*(c.field));
      const double mean = agg.mean();
      const double sd = agg.stddev();
      csv += "," + report_detail::fmt(mean, c.decimals) + "," + report_detail::fmt(sd, c.decimals);
      std::string cell = report_detail::fmt(mean, c.decimals);
      if (!std::isnan(sd)) cell += " +/- " + report_detail::fmt(sd, c.decimals);
      line.push_back(cell);
    }
    csv += "\n";
    cells.push_back(line);
  }

  // Aligned text table.
  std::vector<std::size_t> widths(cells[0].size(), 0);
  for (const auto& line : cells)
    for (std::size_t i = 0; i < line.size(); ++i) widths[i] = std::max(widths[i], line[i].size());
  std::string text;
  for (std::size_t li = 0; li < cells.size(); ++li) {
    for (std::size_t i = 0; i < cells[li].size(); ++i) {
      std::string cell = cells[li][i];
      cell.resize(widths[i], ' ');
      text += cell;
      if (i + 1 < cells[li].size()) text += "  ";
    }
    text += "\n";
    if (li == 0) {
      for (std::size_t i = 0; i < widths.size(); ++i) {
        text += std::string(widths[i], '-');
        if (i + 1 < widths.size()) text += "  ";
      }
      text += "\n";
    }
  }
  text += "(reference rows: iterations x12,500 and modes x16.5 as published)\n";
  if (!config_hash.empty()) text += "config_hash=" + config_hash + "\n";
  return {std::move(csv), std::move(text)};
}

inline void save_report(const RenderedReport& report, const std::string& csv_path,
                        const std::string& text_path) {
  std::ofstream csv(csv_path);
  require(static_cast<bool>(csv), "cannot write report csv: " + csv_path);
  csv << report.csv;
  std::ofstream txt(text_path);
  require(static_cast<bool>(txt), "cannot write report text: " + text_path);
  txt << report.text;
}

}  // namespace rsdg
