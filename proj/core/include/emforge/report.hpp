// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "emforge/eval.hpp"

namespace emforge {

enum class ReportFormat { json, csv, plotdata };
ReportFormat report_format_from_string(const std::string& name);
std::string to_string(ReportFormat format);

// Canonical nested form: {datasets, meta, counts, ind, ood, overall}; scores
// are fractions, empty groups are null.
nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

// Header, one row per dataset, then one row per present aggregate group.
std::string report_to_csv(const EvalReport& report);
// Rebuilds the report from the dataset rows; aggregate rows are checked.
EvalReport report_from_csv(const std::string& text);

// "group<TAB>score" lines, scores x100 with one decimal: meta-tasks, then
// IND, OOD and Overall.
std::string report_to_plotdata(const EvalReport& report);

std::string render_report(const EvalReport& report, ReportFormat format);
void write_report(const std::filesystem::path& path, const EvalReport& report, ReportFormat format);
// Accepts json or csv, chosen by content.
EvalReport read_report(const std::filesystem::path& path);

}  // namespace emforge
