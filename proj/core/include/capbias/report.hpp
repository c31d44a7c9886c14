#pragma once

#include "capbias/audit.hpp"
#include "capbias/caption_analysis.hpp"
#include "capbias/correlation.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace capbias {

struct ScatterPoint {
    Concept subject;
    double x = 0.0;  // man accuracy
    double y = 0.0;  // woman accuracy
    BiasLabel label = BiasLabel::neutral;
};

inline constexpr std::string_view kManBiasedColor = "#1f77b4";
inline constexpr std::string_view kWomanBiasedColor = "#2ca02c";
inline constexpr std::string_view kNeutralColor = "#ff7f0e";

std::string_view color_of(BiasLabel label);

/// Points of one audit, optionally restricted to a category.
std::vector<ScatterPoint> scatter_points(const MetricAudit& audit, std::optional<Category> category = std::nullopt);

/// Unit-square scatter with a diagonal. Concepts farther than 0.1 from the
/// diagonal are labelled. Throws InvalidInput for points outside the square.
std::string render_scatter(std::span<const ScatterPoint> points, std::string_view title);

struct ReportBundle {
    std::vector<MetricAudit> audits;
    std::vector<std::pair<std::string, ErrorReport>> error_reports;
    std::vector<std::pair<std::string, WinReport>> win_reports;
    std::vector<CorrelationRow> correlations;
};

nlohmann::ordered_json bundle_json(const ReportBundle& b);

/// Text tables rendered from a bundle's JSON: bias percentages, gender
/// errors, win rates and correlations. Empty sections are omitted.
std::string render_tables(const nlohmann::ordered_json& bundle);

/// Writes report.json, tables.txt and scatter_{category}_{metric}.svg.
void write_report(const ReportBundle& b, const std::filesystem::path& dir);

/// Same, from a previously written bundle (scatter points taken from its audits).
void write_report(const nlohmann::ordered_json& bundle, const std::filesystem::path& dir);

} // namespace capbias
