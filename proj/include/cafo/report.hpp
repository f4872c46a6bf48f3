#pragma once

#include "cafo/harness.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <vector>

namespace cafo {

struct ReportInputs {
    std::vector<std::filesystem::path> runs;
    std::optional<std::filesystem::path> roar;
};

/// Expands each path into run directories (a run dir, or a parent holding
/// fold_* runs) and at most one ROAR directory. Throws DataError listing
/// whatever is missing.
ReportInputs collect_report_inputs(const std::vector<std::filesystem::path>& paths);

/// Writes report.json, gi_table.csv, cwri_heatmap.csv and the SVG plots into
/// `out`. Nothing is written unless every input parses.
nlohmann::json write_report(const ReportInputs& in, const std::optional<GroundTruthMask>& gt,
                            const std::filesystem::path& out);

std::string roar_svg(const RoarCurve& curve, double abc_value);
std::string gi_trajectory_svg(const std::vector<std::vector<double>>& traj, const std::vector<std::string>& names);

} // namespace cafo
