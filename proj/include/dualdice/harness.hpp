#pragma once

#include "dualdice/baselines.hpp"
#include "dualdice/function_approx.hpp"
#include "dualdice/mdp.hpp"
#include "dualdice/saddle_optimizer.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace dualdice {

/// Thrown for malformed or inconsistent experiment configuration files.
class ConfigError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

struct EnvironmentSpec {
    /// taxi, grid or random.
    std::string kind = "taxi";
    Index grid_size = 10;
    Index random_states = 10;
    Index random_actions = 3;
    std::uint64_t env_seed = 0;
    /// Replaces the environment's own discount when set.
    std::optional<double> gamma;

    void validate() const;
};

TabularMdp make_environment(const EnvironmentSpec& spec);

/**
 * Per-pair inputs for linear and MLP models. Only the grid has coordinate
 * features; other environments accept tabular models only.
 */
Matrix environment_features(const EnvironmentSpec& spec, ApproxKind kind);

/// The reference policy that both mixtures start from: greedy optimal.
struct PolicyPair {
    StochasticPolicy behavior;
    StochasticPolicy target;
};
PolicyPair make_policies(const TabularMdp& mdp, double behavior_mix, double target_mix);

enum class EstimatorType {
    kOracle,
    kDualDiceExact,
    kDualDiceExactStatewise,
    kTdExact,
    kDualDice,
    kTdStochastic,
    kTdStochasticCloned,
    kImportanceSampling,
};

std::string to_string(EstimatorType type);
EstimatorType parse_estimator_type(const std::string& name);
/// Whether the estimator is handed the behavior policy's probabilities.
bool uses_behavior_policy(EstimatorType type);

struct EstimatorSpec {
    std::string name;
    EstimatorType type = EstimatorType::kDualDiceExact;
    /// Stochastic DualDICE settings; `train.seed` is replaced per cell.
    TrainConfig train;
    ApproxKind approx = ApproxKind::kTabular;
    std::vector<Index> hidden = {64, 64};
    /// Stochastic TD settings; `td.seed` is replaced per cell.
    TdConfig td;
    /// Clip negative corrections before the OPE step (exact and stochastic DualDICE).
    bool clip_at_zero = false;
};

struct ExperimentConfig {
    std::string name = "experiment";
    EnvironmentSpec environment;
    double behavior_mix = 0.7;
    double target_mix = 0.1;
    std::vector<Index> trajectory_counts = {50, 100, 200, 400};
    std::vector<Index> horizons = {100, 200, 400};
    std::vector<std::uint64_t> seeds;
    std::vector<EstimatorSpec> estimators;

    void validate() const;
};

/**
 * INI-style configuration:
 *
 *   [experiment]
 *   name = taxi
 *   environment = taxi
 *   behavior_mix = 0.7
 *   target_mix = 0.1
 *   trajectories = 50 100 200 400
 *   horizons = 100 200 400
 *   seeds = 0-19
 *
 *   [estimator.<name>]
 *   type = dualdice
 *   penalty_p = 1.5
 *
 * `environment` is taxi, grid (with grid_size) or random (with
 * random_states, random_actions, env_seed); `gamma` optionally overrides the
 * discount; `seeds` is a range or a list. Estimator keys: type (see
 * parse_estimator_type), penalty_p, batch_size, lr_nu, lr_zeta, steps,
 * optimizer, lr_decay_steps, approx, hidden, exact_expectation, zeta_clip,
 * clip_at_zero, eval_every, td_lr, td_steps, td_batch_size, td_optimizer,
 * td_lr_decay_steps. Comments are whole lines starting with ';'.
 * Unknown sections or keys are rejected.
 */
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::filesystem::path& path);
void write_config(std::ostream& out, const ExperimentConfig& config);

struct TracePointRecord {
    Index step = 0;
    double estimate = 0.0;
};

/// One (estimator, seed, trajectories, horizon) result.
struct ResultCell {
    std::string estimator;
    std::uint64_t seed = 0;
    Index trajectories = 0;
    Index horizon = 0;
    /// NaN when the estimator failed.
    double estimate = 0.0;
    double truth = 0.0;
    double squared_error = 0.0;
    /// Empty on success.
    std::string error;
    std::vector<TracePointRecord> trace;

    bool failed() const { return !error.empty(); }
};

struct ExperimentResult {
    std::string name;
    std::vector<ResultCell> cells;
};

struct RunOptions {
    /// Worker threads; 0 means one per hardware thread.
    unsigned jobs = 0;
    /// Called from the collector (never concurrently) as cells finish.
    std::function<void(const ResultCell&)> on_cell;
};

/// Runs every (seed, trajectory count, horizon, estimator) cell. Output order is
/// independent of the number of jobs.
ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

/// Ground truth rho(pi) for the configured environment and target mixture.
double experiment_truth(const ExperimentConfig& config);

/// Lower bound applied before taking log10 of an error.
inline constexpr double kLogErrorFloor = -12.0;
double floored_log10(double value);

struct CellSummary {
    std::string estimator;
    Index trajectories = 0;
    Index horizon = 0;
    Index num_seeds = 0;
    Index num_failed = 0;
    /// sqrt(mean squared error) over successful seeds.
    double rmse = 0.0;
    double log_rmse = 0.0;
    /// Percentiles of the per-seed absolute error.
    double median_abs_error = 0.0;
    double p25_abs_error = 0.0;
    double p75_abs_error = 0.0;
    /// log10 of the median absolute error, floored; the headline curve value.
    double log_median_abs_error = 0.0;

    /// Every seed failed; all statistics are NaN.
    bool all_failed() const { return num_failed == num_seeds; }
};

/**
 * Aggregates per (estimator, trajectories, horizon). Estimators keep their
 * first-appearance order; sizes are sorted ascending. Failed seeds are
 * excluded and counted.
 */
std::vector<CellSummary> rmse_aggregate(const std::vector<ResultCell>& cells);

/// Linear-interpolation percentile (q in [0, 100]) of unsorted values.
double percentile(std::vector<double> values, double q);

/// Raw results: one JSON object per line.
void write_results_jsonl(std::ostream& out, const ExperimentResult& result);
/// Reads raw results and checks that each squared error matches its estimate and truth.
ExperimentResult read_results_jsonl(std::istream& in);
void save_results(const std::filesystem::path& path, const ExperimentResult& result);
ExperimentResult load_results(const std::filesystem::path& path);

/// Compares stored ground truth with a fresh exact computation; throws on mismatch.
void verify_ground_truth(const ExperimentResult& result, const ExperimentConfig& config,
                         double tolerance = 1e-10);

void write_summary_csv(std::ostream& out, const std::vector<CellSummary>& summary);
void save_summary_csv(const std::filesystem::path& path, const std::vector<CellSummary>& summary);

}  // namespace dualdice
