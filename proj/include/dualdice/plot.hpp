#pragma once

#include "dualdice/harness.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace dualdice {

/// Which sweep dimension is split into separate panels; the other one is the x-axis.
enum class PanelAxis { kTrajectories, kHorizon };

std::string to_string(PanelAxis axis);
PanelAxis parse_panel_axis(const std::string& name);

/// One line of a panel CSV. Values are log10 of the per-seed absolute error
/// percentiles (floored like the summary).
struct PlotRow {
    double x = 0.0;
    std::string estimator;
    double median = 0.0;
    double p25 = 0.0;
    double p75 = 0.0;
};

struct PlotPanel {
    /// File stem, e.g. "trajectories_50" or "training_n50_h100".
    std::string stem;
    std::string title;
    std::string x_label;
    std::vector<PlotRow> rows;
};

/// Error-vs-size panels, one per value of `axis`.
std::vector<PlotPanel> error_panels(const ExperimentResult& result, PanelAxis axis);

/// Training-curve panels (estimate error against step), one per data size with traces.
std::vector<PlotPanel> training_panels(const ExperimentResult& result);

/// Columns: x,estimator,median,p25,p75 with 9 significant digits.
void write_plot_csv(std::ostream& out, const PlotPanel& panel);
std::vector<PlotRow> read_plot_csv(std::istream& in);

/// Minimal line chart with p25/p75 bars.
std::string render_svg(const PlotPanel& panel);

/**
 * Writes `<stem>.csv` and `<stem>.svg` for every panel into `directory`
 * (created if needed) and returns the CSV paths. Throws without writing
 * anything when the result holds no estimators.
 */
std::vector<std::filesystem::path> emit_plot_data(const ExperimentResult& result,
                                                  const std::filesystem::path& directory,
                                                  PanelAxis axis = PanelAxis::kTrajectories);

}  // namespace dualdice
