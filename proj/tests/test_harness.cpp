#include "dualdice/harness.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace dualdice;

namespace {

ExperimentConfig parse(const std::string& text) {
    std::istringstream in(text);
    return parse_config(in);
}

const char* kSmallConfig = R"(; small random-MDP sweep
[experiment]
name = small
environment = random
random_states = 6
random_actions = 2
env_seed = 3
gamma = 0.9
behavior_mix = 0.6
target_mix = 0.2
trajectories = 10 20
horizons = 15
seeds = 0-2

[estimator.oracle]
type = oracle

[estimator.exact]
type = dualdice-exact

[estimator.td]
type = td-exact

[estimator.is]
type = is

[estimator.sgd]
type = dualdice
penalty_p = 2
batch_size = 32
lr_nu = 0.05
lr_zeta = 0.05
steps = 300
eval_every = 100
)";

ResultCell cell(std::string name, double estimate, double truth, std::uint64_t seed = 0) {
    ResultCell c;
    c.estimator = std::move(name);
    c.seed = seed;
    c.trajectories = 10;
    c.horizon = 5;
    c.estimate = estimate;
    c.truth = truth;
    c.squared_error = (estimate - truth) * (estimate - truth);
    return c;
}

std::string to_jsonl(const ExperimentResult& result) {
    std::ostringstream out;
    write_results_jsonl(out, result);
    return out.str();
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("configuration parsing") {
    const ExperimentConfig c = parse(kSmallConfig);
    CHECK(c.name == "small");
    CHECK(c.environment.kind == "random");
    CHECK(c.environment.random_states == 6);
    CHECK(*c.environment.gamma == 0.9);
    CHECK(c.trajectory_counts == std::vector<Index>{10, 20});
    CHECK(c.seeds == std::vector<std::uint64_t>{0, 1, 2});
    REQUIRE(c.estimators.size() == 5);
    CHECK(c.estimators[0].name == "oracle");
    CHECK(c.estimators[4].type == EstimatorType::kDualDice);
    CHECK(c.estimators[4].train.penalty_p == 2.0);
    CHECK(c.estimators[4].train.num_steps == 300);

    std::ostringstream out;
    write_config(out, c);
    const ExperimentConfig again = parse(out.str());
    CHECK(again.estimators.size() == 5);
    CHECK(again.estimators[4].train.lr_nu == 0.05);
    CHECK(again.seeds == c.seeds);
    CHECK(*again.environment.gamma == 0.9);
}

TEST_CASE("seed lists") {
    const std::string head = "[experiment]\nenvironment = taxi\nseeds = ";
    const std::string tail = "\n[estimator.e]\ntype = oracle\n";
    CHECK(parse(head + "4 7 9" + tail).seeds == std::vector<std::uint64_t>{4, 7, 9});
    CHECK(parse(head + "2-4 8" + tail).seeds == std::vector<std::uint64_t>{2, 3, 4, 8});
    CHECK_THROWS_AS(parse(head + "5-3" + tail), ConfigError);
    CHECK_THROWS_AS(parse(head + "x" + tail), ConfigError);
}

TEST_CASE("configuration errors") {
    const std::string ok_estimator = "\n[estimator.e]\ntype = oracle\n";
    CHECK_THROWS_AS(parse("[estimator.e]\ntype = oracle\n"), ConfigError);
    CHECK_THROWS_AS(parse("[experiment]\nseeds = 0\ncolour = red" + ok_estimator), ConfigError);
    CHECK_THROWS_AS(parse("[experiment]\nseeds = 0\nenvironment = maze" + ok_estimator), ConfigError);
    CHECK_THROWS_AS(parse("[experiment]\nseeds = 0\n"), ConfigError);
    CHECK_THROWS_AS(parse("[experiment]\nseeds = 0\n[estimator.e]\ntype = magic\n"), ConfigError);
    CHECK_THROWS_AS(parse("[experiment]\nseeds = 0\n[estimator.e]\n"), ConfigError);
    CHECK_THROWS_AS(parse("[experiment]\nseeds = 0\n[estimator.e]\ntype = dualdice\npenalty_p = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse("[experiment]\nseeds = 0\n[estimator.e]\ntype = dualdice\nbatch = 3\n"), ConfigError);
    CHECK_THROWS_AS(parse("[experiment]\nseeds = 0\n[estimator.e]\ntype = dualdice\napprox = mlp\n"), ConfigError);
    CHECK_THROWS_AS(parse("[experiment]\nseeds = 0\nbehavior_mix = 1.5" + ok_estimator), ConfigError);
    CHECK_THROWS_AS(parse("[experiment]\nseeds = 0\ntrajectories = 0" + ok_estimator), ConfigError);
    CHECK_THROWS_AS(parse("[experiment]\nseeds = 0\n[other]\nx = 1\n"), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/config.cfg"), ConfigError);
}

TEST_CASE("estimator names round-trip") {
    for (auto t : {EstimatorType::kOracle, EstimatorType::kDualDiceExact, EstimatorType::kDualDiceExactStatewise,
                   EstimatorType::kTdExact, EstimatorType::kDualDice, EstimatorType::kTdStochastic,
                   EstimatorType::kTdStochasticCloned, EstimatorType::kImportanceSampling}) {
        CHECK(parse_estimator_type(to_string(t)) == t);
    }
    CHECK_FALSE(uses_behavior_policy(EstimatorType::kDualDice));
    CHECK_FALSE(uses_behavior_policy(EstimatorType::kDualDiceExact));
    CHECK_FALSE(uses_behavior_policy(EstimatorType::kTdStochasticCloned));
    CHECK(uses_behavior_policy(EstimatorType::kTdExact));
    CHECK(uses_behavior_policy(EstimatorType::kImportanceSampling));
}

TEST_CASE("aggregation") {
    // Errors 1, 2, 3, 6 -> RMSE sqrt((1 + 4 + 9 + 36) / 4) = sqrt(12.5).
    std::vector<ResultCell> cells = {cell("a", 2.0, 1.0, 0), cell("a", -1.0, 1.0, 1), cell("a", 4.0, 1.0, 2),
                                     cell("a", 7.0, 1.0, 3), cell("b", 1.0, 1.0, 0)};
    ResultCell failed = cell("a", 0.0, 1.0, 4);
    failed.estimate = std::nan("");
    failed.squared_error = std::nan("");
    failed.error = "boom";
    cells.push_back(failed);
    const auto summary = rmse_aggregate(cells);
    REQUIRE(summary.size() == 2);
    CHECK(summary[0].estimator == "a");
    CHECK(summary[0].num_seeds == 5);
    CHECK(summary[0].num_failed == 1);
    CHECK(summary[0].rmse == doctest::Approx(3.5355339059327378).epsilon(1e-14));
    CHECK(summary[0].log_rmse == doctest::Approx(std::log10(std::sqrt(12.5))));
    CHECK(summary[0].median_abs_error == doctest::Approx(2.5));
    CHECK(summary[0].p25_abs_error == doctest::Approx(1.75));
    CHECK(summary[0].p75_abs_error == doctest::Approx(3.75));
    CHECK(summary[0].log_median_abs_error == doctest::Approx(std::log10(2.5)));
    CHECK(summary[1].rmse == 0.0);
    CHECK(summary[1].log_median_abs_error == kLogErrorFloor);
}

TEST_CASE("percentiles and floors") {
    CHECK(percentile({3.0, 1.0, 2.0}, 50) == 2.0);
    CHECK(percentile({1.0, 2.0}, 25) == 1.25);
    CHECK(percentile({5.0}, 90) == 5.0);
    CHECK(floored_log10(0.0) == kLogErrorFloor);
    CHECK(floored_log10(1e-20) == kLogErrorFloor);
    CHECK(floored_log10(100.0) == doctest::Approx(2.0));
    CHECK(std::isnan(percentile({}, 50)));
    CHECK_THROWS_AS(percentile({1.0}, 101), InvalidArgument);
}

TEST_CASE("a small sweep runs end to end") {
    const ExperimentConfig config = parse(kSmallConfig);
    const ExperimentResult result = run_experiment(config, {1, {}});
    CHECK(result.cells.size() == 5 * 3 * 2 * 1);
    const double truth = experiment_truth(config);
    for (const auto& c : result.cells) {
        CHECK_FALSE(c.failed());
        CHECK(c.truth == truth);
        if (c.estimator == "oracle") CHECK(c.squared_error == 0.0);
        if (c.estimator == "sgd") CHECK(c.trace.size() == 3);
    }
    const auto summary = rmse_aggregate(result.cells);
    CHECK(summary.size() == 5 * 2);
    CHECK(summary[0].estimator == "oracle");
    CHECK(summary[0].log_median_abs_error == kLogErrorFloor);
    CHECK_NOTHROW(verify_ground_truth(result, config));

    SUBCASE("reruns and job counts give identical bytes") {
        CHECK(to_jsonl(run_experiment(config, {1, {}})) == to_jsonl(result));
        CHECK(to_jsonl(run_experiment(config, {3, {}})) == to_jsonl(result));
    }
    SUBCASE("results round-trip and tampering is detected") {
        const std::string text = to_jsonl(result);
        std::istringstream in(text);
        const ExperimentResult back = read_results_jsonl(in);
        CHECK(to_jsonl(back) == text);
        std::string tampered = text;
        const auto pos = tampered.find("\"truth\":");
        REQUIRE(pos != std::string::npos);
        tampered.replace(pos, 8, "\"truth\":1");
        std::istringstream bad(tampered);
        CHECK_THROWS(read_results_jsonl(bad));
    }
    SUBCASE("ground truth mismatches are reported") {
        ExperimentResult altered = result;
        altered.cells[0].truth += 1e-6;
        CHECK_THROWS(verify_ground_truth(altered, config));
    }
    SUBCASE("summary csv") {
        std::ostringstream out;
        write_summary_csv(out, summary);
        const std::string text = out.str();
        CHECK(text.rfind("estimator,", 0) == 0);
        CHECK(std::count(text.begin(), text.end(), '\n') == 11);
    }
}

TEST_CASE("failing estimators become failed cells") {
    // Stochastic TD with a behavior policy that is zero where the target acts.
    ExperimentConfig config = parse(kSmallConfig);
    config.behavior_mix = 0.0;
    config.target_mix = 1.0;
    config.estimators.resize(1);
    config.estimators[0].name = "td";
    config.estimators[0].type = EstimatorType::kTdExact;
    const ExperimentResult result = run_experiment(config, {1, {}});
    for (const auto& c : result.cells) {
        CHECK(c.failed());
        CHECK(std::isnan(c.estimate));
    }
    CHECK(to_jsonl(result).find("\"estimate\":null") != std::string::npos);
    const auto summary = rmse_aggregate(result.cells);
    CHECK(summary[0].all_failed());
}

TEST_CASE("environments from specs") {
    EnvironmentSpec spec;
    spec.kind = "grid";
    spec.grid_size = 4;
    CHECK(make_environment(spec).num_states() == 16);
    CHECK(environment_features(spec, ApproxKind::kMlp).cols() == 6);
    spec.kind = "taxi";
    CHECK(make_environment(spec).num_states() == 501);
    CHECK_THROWS_AS(environment_features(spec, ApproxKind::kLinear), InvalidArgument);
    spec.gamma = 0.9;
    CHECK(make_environment(spec).gamma() == 0.9);
}

}  // TEST_SUITE
