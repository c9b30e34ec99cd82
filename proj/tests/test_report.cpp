#include <gtest/gtest.h>

#include <sstream>

#include "svfair/report.hpp"

using namespace svfair;

namespace {

ExperimentGrid resnet34v2_row() {
  // Published gender-audit figures for one system, used as a layout fixture.
  ExperimentGrid g;
  g.rows = {"ResNet34V2"};
  g.columns = {"softmax", "am_softmax", "aam_softmax", "triplet", "prototypical"};
  const double sp[] = {0.126, 0.121, 0.119, 0.132, 0.121};
  const double eo[] = {0.079, 0.075, 0.072, 0.085, 0.075};
  const double eopp[] = {0.065, 0.062, 0.057, 0.068, 0.061};
  g.cells.emplace_back();
  for (int i = 0; i < 5; ++i) g.cells[0].push_back({sp[i], eo[i], eopp[i]});
  return g;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::kIo;
}

FairnessReport sample_report(std::optional<double> eopp) {
  FairnessReport r;
  r.scheme = GroupScheme::nationality("NZ");
  r.threshold = 0.25;
  r.statistical_parity = 0.21;
  r.statistical_parity_signed = -0.21;
  r.equalized_odds = 0.12;
  r.tpr_gap_signed = 0.1;
  r.fpr_gap_signed = -0.14;
  r.equal_opportunity = eopp;
  r.equal_opportunity_signed = eopp;
  r.confusion.protected_group = {3, 1, 4, 1};
  r.confusion.unprotected_group = {5, 9, 2, 6};
  return r;
}

}  // namespace

TEST(RenderGrid, CsvMatchesPublishedLayout) {
  const std::string csv = render_grid(resnet34v2_row(), GridFormat::kCsv);
  std::istringstream in(csv);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header.substr(0, 64), "system,statistical_parity:softmax,statistical_parity:am_softmax,");
  EXPECT_EQ(row,
            "ResNet34V2,0.126,0.121,0.119,0.132,0.121,0.079,0.075,0.072,0.085,0.075,0.065,0.062,0.057,0.068,0.061");
}

TEST(RenderGrid, MarkdownAndZeros) {
  ExperimentGrid g = resnet34v2_row();
  for (auto& cell : g.cells[0]) cell = {0.0, -0.0, 1e-9};
  const std::string md = render_grid(g, GridFormat::kMarkdown);
  EXPECT_NE(md.find("| Statistical parity: softmax |"), std::string::npos);
  EXPECT_EQ(md.find("-0.000"), std::string::npos);
  std::size_t zeros = 0;
  for (std::size_t p = md.find("0.000"); p != std::string::npos; p = md.find("0.000", p + 1)) ++zeros;
  EXPECT_EQ(zeros, 15u);
}

TEST(RenderGrid, JsonKeepsFullPrecisionAndIsStable) {
  ExperimentGrid g = resnet34v2_row();
  g.cells[0][0].statistical_parity = 0.1234567891234;
  const std::string a = render_grid(g, GridFormat::kJson);
  EXPECT_EQ(a, render_grid(g, GridFormat::kJson));
  const Json doc = Json::parse(a);
  EXPECT_EQ(doc["schema_version"], kReportSchemaVersion);
  EXPECT_EQ(doc["rows"][0]["cells"][0]["statistical_parity"].get<double>(), 0.1234567891234);
  EXPECT_EQ(doc["rows"][0]["cells"][3]["loss"], "triplet");
}

TEST(RenderGrid, Errors) {
  EXPECT_EQ(kind_of([] { render_grid(ExperimentGrid{}, GridFormat::kCsv); }), ErrorKind::kEmptyGrid);
  ExperimentGrid g = resnet34v2_row();
  g.cells[0].pop_back();
  EXPECT_THROW(render_grid(g, GridFormat::kCsv), Error);
  g = resnet34v2_row();
  g.cells[0][0].equalized_odds = 1.5;
  EXPECT_THROW(render_grid(g, GridFormat::kMarkdown), Error);
}

TEST(RenderSeries, CsvOrderAndInestimableFields) {
  std::vector<SweepEntry> sweep{{"US", 700, sample_report(0.04)}, {"NZ", 10, sample_report(std::nullopt)}};
  const std::string csv = render_nationality_series(sweep, SeriesFormat::kCsv);
  EXPECT_EQ(csv,
            "nationality,speaker_count,statistical_parity,equalized_odds,equal_opportunity\n"
            "US,700,0.210,0.120,0.040\n"
            "NZ,10,0.210,0.120,\n");
  EXPECT_EQ(kind_of([] { render_nationality_series({}, SeriesFormat::kCsv); }), ErrorKind::kEmptySweep);
}

TEST(RenderSeries, JsonRoundTripsWithNulls) {
  std::vector<SweepEntry> sweep{{"US", 700, sample_report(0.04)}, {"NZ", 10, sample_report(std::nullopt)}};
  const Json doc = Json::parse(render_nationality_series(sweep, SeriesFormat::kJson));
  EXPECT_EQ(doc["schema_version"], 1);
  EXPECT_EQ(doc["series"][0]["nationality"], "US");
  EXPECT_EQ(doc["series"][0]["equal_opportunity"].get<double>(), 0.04);
  EXPECT_TRUE(doc["series"][1]["equal_opportunity"].is_null());
  EXPECT_EQ(doc["series"][1]["speaker_count"], 10);
}

TEST(ReportJson, SchemaFields) {
  const Json doc = report_to_json(sample_report(0.04));
  EXPECT_EQ(doc["schema_version"], 1);
  EXPECT_EQ(doc["scheme"]["kind"], "one_vs_rest");
  EXPECT_EQ(doc["scheme"]["protected_value"], "NZ");
  EXPECT_EQ(doc["scheme"]["assignment"], "enrollment");
  EXPECT_TRUE(doc["eer"].is_null());
  EXPECT_EQ(doc["metrics"]["equalized_odds_aggregation"], "mean");
  EXPECT_EQ(doc["signed"]["fpr_gap"].get<double>(), -0.14);
  EXPECT_EQ(doc["confusion"]["unprotected"]["fp"], 9);
  EXPECT_FALSE(doc.contains("confidence_intervals"));
  const std::string md = render_report_markdown(sample_report(std::nullopt));
  EXPECT_NE(md.find("| Equal opportunity | n/a | n/a |"), std::string::npos);
}
