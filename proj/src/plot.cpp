#include "dualdice/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace dualdice {

namespace {

std::string g9(double value) {
    if (std::isnan(value)) return "nan";
    char buffer[64];
    std::snprintf(buffer, sizeof buffer, "%.9g", value);
    return buffer;
}

std::string fixed(double value, int digits) {
    char buffer[64];
    std::snprintf(buffer, sizeof buffer, "%.*f", digits, value);
    return buffer;
}

std::string xml_escape(const std::string& text) {
    std::string out;
    for (char c : text) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

double parse_field(const std::string& text) {
    if (text == "nan") return std::numeric_limits<double>::quiet_NaN();
    std::size_t used = 0;
    const double value = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument("trailing characters in '" + text + "'");
    return value;
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << contents;
    if (!out) throw std::runtime_error("error while writing '" + path.string() + "'");
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

}  // namespace

std::string to_string(PanelAxis axis) {
    return axis == PanelAxis::kTrajectories ? "trajectories" : "horizon";
}

PanelAxis parse_panel_axis(const std::string& name) {
    if (name == "trajectories") return PanelAxis::kTrajectories;
    if (name == "horizon") return PanelAxis::kHorizon;
    throw InvalidArgument("unknown panel axis '" + name + "' (trajectories, horizon)");
}

std::vector<PlotPanel> error_panels(const ExperimentResult& result, PanelAxis axis) {
    const std::vector<CellSummary> summary = rmse_aggregate(result.cells);
    std::map<Index, PlotPanel> panels;
    for (const auto& s : summary) {
        const bool by_count = axis == PanelAxis::kTrajectories;
        const Index key = by_count ? s.trajectories : s.horizon;
        PlotPanel& panel = panels[key];
        if (panel.stem.empty()) {
            panel.stem = (by_count ? "trajectories_" : "horizon_") + std::to_string(key);
            panel.title = (by_count ? "#trajectories = " : "trajectory length = ") + std::to_string(key);
            panel.x_label = by_count ? "trajectory length" : "#trajectories";
        }
        panel.rows.push_back({static_cast<double>(by_count ? s.horizon : s.trajectories), s.estimator,
                              s.log_median_abs_error, floored_log10(s.p25_abs_error),
                              floored_log10(s.p75_abs_error)});
    }
    std::vector<PlotPanel> out;
    for (auto& [key, panel] : panels) {
        std::stable_sort(panel.rows.begin(), panel.rows.end(),
                         [](const PlotRow& a, const PlotRow& b) { return a.x < b.x; });
        out.push_back(std::move(panel));
    }
    return out;
}

std::vector<PlotPanel> training_panels(const ExperimentResult& result) {
    // (trajectories, horizon) -> estimator order, then step -> errors over seeds.
    std::map<std::pair<Index, Index>, std::vector<std::string>> order;
    std::map<std::tuple<Index, Index, std::string, Index>, std::vector<double>> errors;
    for (const auto& c : result.cells) {
        if (c.trace.empty()) continue;
        auto& names = order[{c.trajectories, c.horizon}];
        if (std::find(names.begin(), names.end(), c.estimator) == names.end()) names.push_back(c.estimator);
        for (const auto& p : c.trace) {
            errors[{c.trajectories, c.horizon, c.estimator, p.step}].push_back(std::abs(p.estimate - c.truth));
        }
    }
    std::vector<PlotPanel> out;
    for (const auto& [size, names] : order) {
        PlotPanel panel;
        panel.stem = "training_n" + std::to_string(size.first) + "_h" + std::to_string(size.second);
        panel.title = "#trajectories = " + std::to_string(size.first) +
                      ", trajectory length = " + std::to_string(size.second);
        panel.x_label = "training step";
        for (const auto& name : names) {
            for (const auto& [key, values] : errors) {
                if (std::get<0>(key) != size.first || std::get<1>(key) != size.second ||
                    std::get<2>(key) != name) {
                    continue;
                }
                panel.rows.push_back({static_cast<double>(std::get<3>(key)), name,
                                      floored_log10(percentile(values, 50.0)),
                                      floored_log10(percentile(values, 25.0)),
                                      floored_log10(percentile(values, 75.0))});
            }
        }
        out.push_back(std::move(panel));
    }
    return out;
}

void write_plot_csv(std::ostream& out, const PlotPanel& panel) {
    out << "x,estimator,median,p25,p75\n";
    for (const auto& r : panel.rows) {
        out << g9(r.x) << "," << r.estimator << "," << g9(r.median) << "," << g9(r.p25) << ","
            << g9(r.p75) << "\n";
    }
}

std::vector<PlotRow> read_plot_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "x,estimator,median,p25,p75") {
        throw std::runtime_error("plot CSV: unexpected header");
    }
    std::vector<PlotRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::istringstream fs(line);
        std::string field;
        while (std::getline(fs, field, ',')) fields.push_back(field);
        if (fields.size() != 5) throw std::runtime_error("plot CSV: expected 5 fields in '" + line + "'");
        rows.push_back({parse_field(fields[0]), fields[1], parse_field(fields[2]), parse_field(fields[3]),
                        parse_field(fields[4])});
    }
    return rows;
}

std::string render_svg(const PlotPanel& panel) {
    constexpr double width = 560, height = 360, left = 60, right = 150, top = 40, bottom = 50;
    const double plot_w = width - left - right;
    const double plot_h = height - top - bottom;

    std::vector<double> xs;
    std::vector<std::string> names;
    double y_min = std::numeric_limits<double>::infinity();
    double y_max = -std::numeric_limits<double>::infinity();
    for (const auto& r : panel.rows) {
        if (std::find(xs.begin(), xs.end(), r.x) == xs.end()) xs.push_back(r.x);
        if (std::find(names.begin(), names.end(), r.estimator) == names.end()) names.push_back(r.estimator);
        for (double v : {r.median, r.p25, r.p75}) {
            if (std::isfinite(v)) {
                y_min = std::min(y_min, v);
                y_max = std::max(y_max, v);
            }
        }
    }
    std::sort(xs.begin(), xs.end());
    if (!std::isfinite(y_min)) {
        y_min = -1.0;
        y_max = 0.0;
    }
    if (y_max - y_min < 1e-9) {
        y_min -= 0.5;
        y_max += 0.5;
    }
    const double pad = 0.05 * (y_max - y_min);
    y_min -= pad;
    y_max += pad;

    // Sizes are spaced evenly (they are usually doublings).
    auto px = [&](double x) {
        const auto it = std::find(xs.begin(), xs.end(), x);
        const double rank = static_cast<double>(it - xs.begin());
        return xs.size() == 1 ? left + plot_w / 2 : left + plot_w * rank / static_cast<double>(xs.size() - 1);
    };
    auto py = [&](double y) { return top + plot_h * (y_max - y) / (y_max - y_min); };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << left + plot_w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">"
        << xml_escape(panel.title) << "</text>\n";
    svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << plot_w << "\" height=\"" << plot_h
        << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double y = y_min + (y_max - y_min) * i / 4.0;
        svg << "<line x1=\"" << left - 4 << "\" x2=\"" << left << "\" y1=\"" << fixed(py(y), 1) << "\" y2=\""
            << fixed(py(y), 1) << "\" stroke=\"black\"/>\n";
        svg << "<text x=\"" << left - 6 << "\" y=\"" << fixed(py(y) + 4, 1) << "\" text-anchor=\"end\">"
            << fixed(y, 2) << "</text>\n";
    }
    for (double x : xs) {
        svg << "<text x=\"" << fixed(px(x), 1) << "\" y=\"" << top + plot_h + 16
            << "\" text-anchor=\"middle\">" << g9(x) << "</text>\n";
    }
    svg << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 12 << "\" text-anchor=\"middle\">"
        << xml_escape(panel.x_label) << "</text>\n";
    svg << "<text x=\"14\" y=\"" << top + plot_h / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
        << top + plot_h / 2 << ")\">log10 |error|</text>\n";

    for (std::size_t k = 0; k < names.size(); ++k) {
        const char* color = kPalette[k % std::size(kPalette)];
        std::ostringstream points;
        for (const auto& r : panel.rows) {
            if (r.estimator != names[k]) continue;
            if (std::isfinite(r.p25) && std::isfinite(r.p75)) {
                svg << "<line x1=\"" << fixed(px(r.x), 1) << "\" x2=\"" << fixed(px(r.x), 1) << "\" y1=\""
                    << fixed(py(r.p25), 1) << "\" y2=\"" << fixed(py(r.p75), 1) << "\" stroke=\"" << color
                    << "\" stroke-opacity=\"0.5\"/>\n";
            }
            if (std::isfinite(r.median)) {
                points << fixed(px(r.x), 1) << "," << fixed(py(r.median), 1) << " ";
                svg << "<circle cx=\"" << fixed(px(r.x), 1) << "\" cy=\"" << fixed(py(r.median), 1)
                    << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
            }
        }
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\""
            << points.str() << "\"/>\n";
        const double ly = top + 12 + 16 * static_cast<double>(k);
        svg << "<line x1=\"" << left + plot_w + 10 << "\" x2=\"" << left + plot_w + 28 << "\" y1=\"" << ly
            << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        svg << "<text x=\"" << left + plot_w + 32 << "\" y=\"" << ly + 4 << "\">" << xml_escape(names[k])
            << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

std::vector<std::filesystem::path> emit_plot_data(const ExperimentResult& result,
                                                  const std::filesystem::path& directory,
                                                  PanelAxis axis) {
    if (result.cells.empty()) throw InvalidArgument("emit_plot_data: result has no estimators");
    std::vector<PlotPanel> panels = error_panels(result, axis);
    for (auto& p : training_panels(result)) panels.push_back(std::move(p));

    std::error_code ec;
    std::filesystem::create_directories(directory, ec);
    if (ec || !std::filesystem::is_directory(directory)) {
        throw std::runtime_error("cannot create output directory '" + directory.string() + "'");
    }
    std::vector<std::filesystem::path> written;
    for (const auto& panel : panels) {
        std::ostringstream csv;
        write_plot_csv(csv, panel);
        const auto csv_path = directory / (panel.stem + ".csv");
        write_file(csv_path, csv.str());
        write_file(directory / (panel.stem + ".svg"), render_svg(panel));
        written.push_back(csv_path);
    }
    return written;
}

}  // namespace dualdice
