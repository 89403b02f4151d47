#include "dualdice/plot.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace dualdice;
namespace fs = std::filesystem;

namespace {

ExperimentResult synthetic_result() {
    ExperimentResult result;
    result.name = "synthetic";
    for (const char* name : {"dualdice", "td"}) {
        for (Index n : {50, 100}) {
            for (Index h : {10, 20}) {
                for (std::uint64_t seed = 0; seed < 3; ++seed) {
                    ResultCell c;
                    c.estimator = name;
                    c.seed = seed;
                    c.trajectories = n;
                    c.horizon = h;
                    c.truth = 0.5;
                    c.estimate = 0.5 + 0.1 * static_cast<double>(seed + 1) / static_cast<double>(n);
                    c.squared_error = (c.estimate - c.truth) * (c.estimate - c.truth);
                    result.cells.push_back(c);
                }
            }
        }
    }
    return result;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    return dir;
}

}  // namespace

TEST_SUITE("plot") {

TEST_CASE("one panel per horizon with per-size rows") {
    const auto panels = error_panels(synthetic_result(), PanelAxis::kHorizon);
    REQUIRE(panels.size() == 2);
    CHECK(panels[0].stem == "horizon_10");
    CHECK(panels[0].rows.size() == 4);
    const PlotRow& first = panels[0].rows[0];
    CHECK(first.x == 50.0);
    CHECK(first.estimator == "dualdice");
    // Errors 0.002, 0.004, 0.006.
    CHECK(first.median == doctest::Approx(std::log10(0.004)));
    CHECK(first.p25 == doctest::Approx(std::log10(0.003)));
    CHECK(first.p75 == doctest::Approx(std::log10(0.005)));
}

TEST_CASE("emitting plot files") {
    const fs::path dir = fresh_dir("dualdice_plot_test");
    const auto written = emit_plot_data(synthetic_result(), dir, PanelAxis::kTrajectories);
    CHECK(written.size() == 2);
    CHECK(fs::exists(dir / "trajectories_50.csv"));
    CHECK(fs::exists(dir / "trajectories_100.svg"));
    const auto by_horizon = emit_plot_data(synthetic_result(), dir, PanelAxis::kHorizon);
    CHECK(by_horizon.size() == 2);
    std::size_t csv_count = 0;
    for (const auto& entry : fs::directory_iterator(dir)) csv_count += entry.path().extension() == ".csv";
    CHECK(csv_count == 4);

    std::ifstream in(dir / "trajectories_50.csv");
    const auto rows = read_plot_csv(in);
    const auto panels = error_panels(synthetic_result(), PanelAxis::kTrajectories);
    REQUIRE(rows.size() == panels[0].rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].x == panels[0].rows[i].x);
        CHECK(rows[i].median == doctest::Approx(panels[0].rows[i].median).epsilon(1e-8));
    }
    fs::remove_all(dir);
}

TEST_CASE("nine significant digits survive the csv") {
    PlotPanel panel;
    panel.stem = "p";
    panel.rows.push_back({100.0, "x", -1.23456789, -2.0, 0.987654321});
    std::stringstream buffer;
    write_plot_csv(buffer, panel);
    CHECK(buffer.str().rfind("x,estimator,median,p25,p75\n", 0) == 0);
    const auto rows = read_plot_csv(buffer);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].median == -1.23456789);
    CHECK(rows[0].p75 == 0.987654321);
}

TEST_CASE("svg output") {
    const auto panels = error_panels(synthetic_result(), PanelAxis::kTrajectories);
    const std::string svg = render_svg(panels[0]);
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("polyline") != std::string::npos);
    CHECK(svg.find("dualdice") != std::string::npos);
}

TEST_CASE("training curves come from traces") {
    ExperimentResult result = synthetic_result();
    for (auto& c : result.cells) c.trace = {{100, 0.4}, {200, 0.45}};
    const auto panels = training_panels(result);
    CHECK(panels.size() == 4);
    CHECK(panels[0].stem == "training_n50_h10");
    CHECK(panels[0].rows.size() == 4);
    CHECK(panels[0].rows[0].median == doctest::Approx(std::log10(0.1)));
}

TEST_CASE("nothing to plot") {
    const fs::path dir = fresh_dir("dualdice_plot_empty");
    CHECK_THROWS_AS(emit_plot_data(ExperimentResult{}, dir), InvalidArgument);
    CHECK_FALSE(fs::exists(dir));
}

TEST_CASE("unwritable output directory") {
    const fs::path blocker = fs::temp_directory_path() / "dualdice_plot_blocker";
    fs::remove_all(blocker);
    std::ofstream(blocker) << "a file, not a directory";
    CHECK_THROWS(emit_plot_data(synthetic_result(), blocker / "sub"));
    fs::remove_all(blocker);
}

TEST_CASE("panel axis names") {
    CHECK(parse_panel_axis("trajectories") == PanelAxis::kTrajectories);
    CHECK(parse_panel_axis("horizon") == PanelAxis::kHorizon);
    CHECK(to_string(PanelAxis::kHorizon) == "horizon");
    CHECK_THROWS(parse_panel_axis("seed"));
}

}  // TEST_SUITE
