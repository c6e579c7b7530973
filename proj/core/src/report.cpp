// SPDX-License-Identifier: Apache-2.0
#include "emforge/report.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

namespace emforge {

ReportFormat report_format_from_string(const std::string& name) {
  if (name == "json") return ReportFormat::json;
  if (name == "csv") return ReportFormat::csv;
  if (name == "plotdata") return ReportFormat::plotdata;
  throw ConfigError("unknown report format '" + name + "' (expected json, csv or plotdata)");
}

std::string to_string(ReportFormat format) {
  switch (format) {
    case ReportFormat::json: return "json";
    case ReportFormat::csv: return "csv";
    case ReportFormat::plotdata: return "plotdata";
  }
  return "?";
}

namespace {

nlohmann::json group_json(const std::optional<GroupScore>& g) {
  return g ? nlohmann::json(g->p_at_1) : nlohmann::json(nullptr);
}

std::string shortest(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw DataError("report: bad number '" + s + "'");
  return v;
}

std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", std::round(fraction * 1000.0) / 10.0);
  return buf;
}

}  // namespace

nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json datasets = nlohmann::json::array();
  for (const auto& d : r.datasets) {
    datasets.push_back({{"name", d.name}, {"meta_task", to_string(d.meta_task)}, {"ood", d.ood}, {"p_at_1", d.p_at_1}, {"n", d.n}});
  }
  nlohmann::json meta = nlohmann::json::object(), meta_counts = nlohmann::json::object();
  for (const auto& [m, g] : r.meta) {
    meta[to_string(m)] = g.p_at_1;
    meta_counts[to_string(m)] = g.datasets;
  }
  return {{"datasets", datasets},
          {"meta", meta},
          {"counts",
           {{"meta", meta_counts},
            {"ind", r.ind ? r.ind->datasets : 0},
            {"ood", r.ood ? r.ood->datasets : 0},
            {"overall", r.overall.datasets}}},
          {"ind", group_json(r.ind)},
          {"ood", group_json(r.ood)},
          {"overall", r.overall.p_at_1}};
}

EvalReport report_from_json(const nlohmann::json& j) {
  try {
    if (!j.is_object() || !j.contains("datasets")) throw DataError("report: missing 'datasets'");
    std::vector<DatasetScore> datasets;
    for (const auto& d : j.at("datasets")) {
      datasets.push_back({d.at("name").get<std::string>(), meta_task_from_string(d.at("meta_task").get<std::string>()),
                          d.at("ood").get<bool>(), d.at("p_at_1").get<double>(), d.at("n").get<std::size_t>()});
    }
    EvalReport r = aggregate(datasets);
    // Stored aggregates must agree with the recomputed ones.
    if (report_to_json(r) != j) throw DataError("report: aggregate fields are inconsistent with the dataset rows");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("report: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("report: ") + e.what());
  }
}

std::string report_to_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "kind,name,meta_task,ood,p_at_1,n\n";
  for (const auto& d : r.datasets) {
    out << "dataset," << d.name << ',' << to_string(d.meta_task) << ',' << (d.ood ? "true" : "false") << ','
        << shortest(d.p_at_1) << ',' << d.n << '\n';
  }
  for (const auto& [m, g] : r.meta) out << "meta," << to_string(m) << ",,," << shortest(g.p_at_1) << ',' << g.datasets << '\n';
  if (r.ind) out << "ind,IND,,false," << shortest(r.ind->p_at_1) << ',' << r.ind->datasets << '\n';
  if (r.ood) out << "ood,OOD,,true," << shortest(r.ood->p_at_1) << ',' << r.ood->datasets << '\n';
  out << "overall,Overall,,," << shortest(r.overall.p_at_1) << ',' << r.overall.datasets << '\n';
  return out.str();
}

EvalReport report_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "kind,name,meta_task,ood,p_at_1,n") throw DataError("report csv: bad header");
  std::vector<DatasetScore> datasets;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 6) throw DataError("report csv line " + std::to_string(line_no) + ": expected 6 fields");
    if (cells[0] != "dataset") continue;
    if (cells[3] != "true" && cells[3] != "false") throw DataError("report csv line " + std::to_string(line_no) + ": bad ood flag");
    try {
      datasets.push_back({cells[1], meta_task_from_string(cells[2]), cells[3] == "true", parse_double(cells[4]),
                          static_cast<std::size_t>(std::stoull(cells[5]))});
    } catch (const ConfigError& e) {
      throw DataError("report csv line " + std::to_string(line_no) + ": " + e.what());
    } catch (const std::logic_error&) {
      throw DataError("report csv line " + std::to_string(line_no) + ": bad count");
    }
  }
  EvalReport r = aggregate(datasets);
  if (report_to_csv(r) != text) throw DataError("report csv: aggregate rows are inconsistent with the dataset rows");
  return r;
}

std::string report_to_plotdata(const EvalReport& r) {
  std::string out;
  for (const auto& [m, g] : r.meta) out += to_string(m) + "\t" + percent(g.p_at_1) + "\n";
  if (r.ind) out += "IND\t" + percent(r.ind->p_at_1) + "\n";
  if (r.ood) out += "OOD\t" + percent(r.ood->p_at_1) + "\n";
  out += "Overall\t" + percent(r.overall.p_at_1) + "\n";
  return out;
}

std::string render_report(const EvalReport& report, ReportFormat format) {
  switch (format) {
    case ReportFormat::json: return report_to_json(report).dump(2) + "\n";
    case ReportFormat::csv: return report_to_csv(report);
    case ReportFormat::plotdata: return report_to_plotdata(report);
  }
  return {};
}

void write_report(const std::filesystem::path& path, const EvalReport& report, ReportFormat format) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw DataError("cannot write report " + path.string());
  out << render_report(report, format);
  if (!out) throw DataError("write failed for " + path.string());
}

EvalReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open report " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  if (text.rfind("kind,", 0) == 0) return report_from_csv(text);
  try {
    return report_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("report " + path.string() + ": " + e.what());
  }
}

}  // namespace emforge
