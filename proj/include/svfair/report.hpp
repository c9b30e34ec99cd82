#pragma once

#include <cmath>
#include <cstdio>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "svfair/core_model.hpp"
#include "svfair/error.hpp"
#include "svfair/fairness.hpp"

namespace svfair {

/// Version of every JSON document emitted below.
inline constexpr int kReportSchemaVersion = 1;

using Json = nlohmann::ordered_json;

struct MetricTriple {
  double statistical_parity = 0.0;
  double equalized_odds = 0.0;
  double equal_opportunity = 0.0;
};

/// Systems as rows, losses as columns, three fairness metrics per cell.
struct ExperimentGrid {
  std::vector<std::string> rows;
  std::vector<std::string> columns;
  std::vector<std::vector<MetricTriple>> cells;  // cells[row][column]
};

enum class GridFormat { kMarkdown, kCsv, kJson };
enum class SeriesFormat { kCsv, kJson };

namespace detail {

inline constexpr std::string_view kMetricNames[] = {"statistical_parity", "equalized_odds",
                                                    "equal_opportunity"};
inline constexpr std::string_view kMetricTitles[] = {"Statistical parity", "Equalized odds",
                                                     "Equal opportunity"};

inline double metric_at(const MetricTriple& m, std::size_t k) {
  return k == 0 ? m.statistical_parity : k == 1 ? m.equalized_odds : m.equal_opportunity;
}

// Fixed three decimals; a value that rounds to zero never prints a sign.
inline std::string three_decimals(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  std::string s(buf);
  if (s == "-0.000") s = "0.000";
  return s;
}

inline void validate_grid(const ExperimentGrid& g) {
  if (g.rows.empty() || g.columns.empty()) throw Error(ErrorKind::kEmptyGrid, "grid has no rows or no columns");
  if (g.cells.size() != g.rows.size()) throw Error(ErrorKind::kLengthMismatch, "one cell row per system required");
  for (const auto& row : g.cells) {
    if (row.size() != g.columns.size()) throw Error(ErrorKind::kLengthMismatch, "one cell per loss required");
    for (const auto& cell : row) {
      for (std::size_t k = 0; k < 3; ++k) {
        const double v = metric_at(cell, k);
        if (!(v >= 0.0 && v <= 1.0)) {
          throw Error(ErrorKind::kInvalidConfig, "metric outside [0, 1] in grid cell");
        }
      }
    }
  }
}

inline Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace detail

/// Markdown and CSV print three decimals; JSON keeps full precision. Metric
/// blocks come first, losses within each block.
inline std::string render_grid(const ExperimentGrid& grid, GridFormat format) {
  detail::validate_grid(grid);
  std::ostringstream out;
  switch (format) {
    case GridFormat::kMarkdown: {
      out << "| System |";
      for (std::size_t k = 0; k < 3; ++k) {
        for (const auto& col : grid.columns) out << ' ' << detail::kMetricTitles[k] << ": " << col << " |";
      }
      out << "\n|---|";
      for (std::size_t i = 0; i < 3 * grid.columns.size(); ++i) out << "---:|";
      out << '\n';
      for (std::size_t r = 0; r < grid.rows.size(); ++r) {
        out << "| " << grid.rows[r] << " |";
        for (std::size_t k = 0; k < 3; ++k) {
          for (const auto& cell : grid.cells[r]) out << ' ' << detail::three_decimals(detail::metric_at(cell, k)) << " |";
        }
        out << '\n';
      }
      break;
    }
    case GridFormat::kCsv: {
      out << "system";
      for (std::size_t k = 0; k < 3; ++k) {
        for (const auto& col : grid.columns) out << ',' << detail::kMetricNames[k] << ':' << col;
      }
      out << '\n';
      for (std::size_t r = 0; r < grid.rows.size(); ++r) {
        out << grid.rows[r];
        for (std::size_t k = 0; k < 3; ++k) {
          for (const auto& cell : grid.cells[r]) out << ',' << detail::three_decimals(detail::metric_at(cell, k));
        }
        out << '\n';
      }
      break;
    }
    case GridFormat::kJson: {
      Json doc;
      doc["schema_version"] = kReportSchemaVersion;
      doc["columns"] = grid.columns;
      Json rows = Json::array();
      for (std::size_t r = 0; r < grid.rows.size(); ++r) {
        Json cells = Json::array();
        for (std::size_t c = 0; c < grid.columns.size(); ++c) {
          const auto& m = grid.cells[r][c];
          cells.push_back({{"loss", grid.columns[c]},
                           {"statistical_parity", m.statistical_parity},
                           {"equalized_odds", m.equalized_odds},
                           {"equal_opportunity", m.equal_opportunity}});
        }
        rows.push_back({{"system", grid.rows[r]}, {"cells", std::move(cells)}});
      }
      doc["rows"] = std::move(rows);
      out << doc.dump(2) << '\n';
      break;
    }
  }
  return out.str();
}

/// One record per nationality in sweep order. Inestimable metrics are an
/// empty CSV field or a JSON null, never 0.
inline std::string render_nationality_series(std::span<const SweepEntry> sweep, SeriesFormat format) {
  if (sweep.empty()) throw Error(ErrorKind::kEmptySweep, "nothing to render");
  std::ostringstream out;
  if (format == SeriesFormat::kCsv) {
    auto field = [](const std::optional<double>& v) {
      return v ? detail::three_decimals(*v) : std::string();
    };
    out << "nationality,speaker_count,statistical_parity,equalized_odds,equal_opportunity\n";
    for (const auto& e : sweep) {
      out << e.nationality << ',' << e.speaker_count << ',' << field(e.report.statistical_parity) << ','
          << field(e.report.equalized_odds) << ',' << field(e.report.equal_opportunity) << '\n';
    }
    return out.str();
  }
  Json doc;
  doc["schema_version"] = kReportSchemaVersion;
  doc["threshold"] = sweep.front().report.threshold;
  Json series = Json::array();
  for (const auto& e : sweep) {
    series.push_back({{"nationality", e.nationality},
                      {"speaker_count", e.speaker_count},
                      {"statistical_parity", detail::optional_number(e.report.statistical_parity)},
                      {"equalized_odds", detail::optional_number(e.report.equalized_odds)},
                      {"equal_opportunity", detail::optional_number(e.report.equal_opportunity)}});
  }
  doc["series"] = std::move(series);
  out << doc.dump(2) << '\n';
  return out.str();
}

inline std::string_view to_string(AssignmentPolicy p) {
  return p == AssignmentPolicy::kByEnrollmentSpeaker ? "enrollment" : "both";
}

inline std::string_view to_string(OddsAggregation a) {
  return a == OddsAggregation::kMean ? "mean" : "max";
}

/// FairnessReport document (schema_version 1):
///   scheme{kind, attribute, protected_value, assignment}, threshold,
///   eer (null or {eer, threshold, flat_scores}), metrics{statistical_parity,
///   equalized_odds, equal_opportunity, equalized_odds_aggregation},
///   signed{statistical_parity, tpr_gap, fpr_gap, equal_opportunity},
///   confidence_intervals (when bootstrapped), confusion{protected,
///   unprotected: {tp, fp, tn, fn}}, excluded_trials.
inline Json report_to_json(const FairnessReport& r) {
  Json doc;
  doc["schema_version"] = kReportSchemaVersion;
  doc["scheme"] = {{"kind", r.scheme.kind == SchemeKind::kBinary ? "binary" : "one_vs_rest"},
                   {"attribute", r.scheme.attribute == Attribute::kGender ? "gender" : "nationality"},
                   {"protected_value", r.scheme.protected_value},
                   {"assignment", to_string(r.scheme.policy)}};
  doc["threshold"] = r.threshold;
  doc["eer"] = r.eer ? Json{{"eer", r.eer->eer}, {"threshold", r.eer->threshold}, {"flat_scores", r.eer->flat_scores}}
                     : Json(nullptr);
  doc["metrics"] = {{"statistical_parity", detail::optional_number(r.statistical_parity)},
                    {"equalized_odds", detail::optional_number(r.equalized_odds)},
                    {"equal_opportunity", detail::optional_number(r.equal_opportunity)},
                    {"equalized_odds_aggregation", to_string(r.odds_aggregation)}};
  doc["signed"] = {{"statistical_parity", detail::optional_number(r.statistical_parity_signed)},
                   {"tpr_gap", detail::optional_number(r.tpr_gap_signed)},
                   {"fpr_gap", detail::optional_number(r.fpr_gap_signed)},
                   {"equal_opportunity", detail::optional_number(r.equal_opportunity_signed)}};
  if (r.statistical_parity_ci || r.equalized_odds_ci || r.equal_opportunity_ci) {
    auto ci = [](const std::optional<Interval>& i) {
      return i ? Json::array({i->lower, i->upper}) : Json(nullptr);
    };
    doc["confidence_intervals"] = {{"statistical_parity", ci(r.statistical_parity_ci)},
                                   {"equalized_odds", ci(r.equalized_odds_ci)},
                                   {"equal_opportunity", ci(r.equal_opportunity_ci)}};
  }
  auto cell = [](const ConfusionCell& c) {
    return Json{{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}};
  };
  doc["confusion"] = {{"protected", cell(r.confusion.protected_group)},
                      {"unprotected", cell(r.confusion.unprotected_group)}};
  doc["excluded_trials"] = r.excluded_trials;
  return doc;
}

inline std::string render_report_markdown(const FairnessReport& r) {
  auto value = [](const std::optional<double>& v) { return v ? detail::three_decimals(*v) : std::string("n/a"); };
  std::ostringstream out;
  out << "Scheme: " << (r.scheme.attribute == Attribute::kGender ? "gender" : "nationality") << ':'
      << r.scheme.protected_value << " (" << (r.scheme.kind == SchemeKind::kBinary ? "binary" : "one-vs-rest")
      << ", assignment " << to_string(r.scheme.policy) << ")\n";
  out << "Threshold: " << r.threshold;
  if (r.eer) out << " (EER " << detail::three_decimals(r.eer->eer) << ")";
  out << "\n\n| Metric | Value | Signed |\n|---|---:|---:|\n";
  out << "| Statistical parity | " << value(r.statistical_parity) << " | "
      << value(r.statistical_parity_signed) << " |\n";
  out << "| Equalized odds (" << to_string(r.odds_aggregation) << ") | " << value(r.equalized_odds)
      << " | TPR " << value(r.tpr_gap_signed) << ", FPR " << value(r.fpr_gap_signed) << " |\n";
  out << "| Equal opportunity | " << value(r.equal_opportunity) << " | "
      << value(r.equal_opportunity_signed) << " |\n";
  const auto& p = r.confusion.protected_group;
  const auto& u = r.confusion.unprotected_group;
  out << "\n| Group | TP | FP | TN | FN |\n|---|---:|---:|---:|---:|\n";
  out << "| protected | " << p.tp << " | " << p.fp << " | " << p.tn << " | " << p.fn << " |\n";
  out << "| unprotected | " << u.tp << " | " << u.fp << " | " << u.tn << " | " << u.fn << " |\n";
  out << "\nExcluded trials: " << r.excluded_trials << '\n';
  return out.str();
}

}  // namespace svfair
