// dualdice: command-line front end for dataset generation, exact solves,
// stochastic training, evaluation, experiment sweeps and plot emission.

#include "dualdice/baselines.hpp"
#include "dualdice/dataset_io.hpp"
#include "dualdice/environments.hpp"
#include "dualdice/function_approx.hpp"
#include "dualdice/harness.hpp"
#include "dualdice/plot.hpp"
#include "dualdice/saddle_optimizer.hpp"
#include "dualdice/tabular_exact.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace {

using namespace dualdice;

constexpr const char* kVersion = "dualdice 0.1.0";

constexpr const char* kFormatsHelp = R"(File formats:
  dataset       dice-dataset v1 <S> <A> <gamma>, then 'T s a r s'' per transition and 'I s0' per initial state
  trajectories  dice-traj v1 <H> <N> <S> <A> <gamma>, then one line 's0 a0 r0 ... s_H' per trajectory
  model         dice-model v1 <kind> <S> <A> [k] [hidden...], then features, nu and zeta parameters
  config        INI file with [experiment] and [estimator.<name>] sections (see README)
  results       JSON lines, one object per (estimator, seed, trajectories, horizon))";

/// Environment and policy flags shared by most subcommands.
struct EnvFlags {
    std::string env = "grid";
    Index size = 10;
    Index states = 10;
    Index actions = 3;
    std::uint64_t env_seed = 0;
    std::optional<double> gamma;
    double behavior_mix = 0.7;
    double target_mix = 0.1;

    void add(CLI::App& app) {
        app.add_option("--env", env, "Environment: taxi, grid or random")
            ->check(CLI::IsMember({"taxi", "grid", "random"}))
            ->capture_default_str();
        app.add_option("--size", size, "Grid side length")->capture_default_str();
        app.add_option("--states", states, "Random MDP state count")->capture_default_str();
        app.add_option("--actions", actions, "Random MDP action count")->capture_default_str();
        app.add_option("--env-seed", env_seed, "Random MDP seed")->capture_default_str();
        app.add_option("--gamma", gamma, "Discount override");
        app.add_option("--behavior-mix", behavior_mix, "Uniform weight mixed into the behavior policy")
            ->check(CLI::Range(0.0, 1.0))
            ->capture_default_str();
        app.add_option("--target-mix", target_mix, "Uniform weight mixed into the target policy")
            ->check(CLI::Range(0.0, 1.0))
            ->capture_default_str();
    }

    EnvironmentSpec spec() const {
        EnvironmentSpec s;
        s.kind = env;
        s.grid_size = size;
        s.random_states = states;
        s.random_actions = actions;
        s.env_seed = env_seed;
        s.gamma = gamma;
        return s;
    }
};

struct Setup {
    EnvironmentSpec spec;
    TabularMdp mdp;
    PolicyPair policies;
};

Setup make_setup(const EnvFlags& flags) {
    EnvironmentSpec spec = flags.spec();
    TabularMdp mdp = make_environment(spec);
    PolicyPair policies = make_policies(mdp, flags.behavior_mix, flags.target_mix);
    return {spec, std::move(mdp), std::move(policies)};
}

/// Either a dataset file or on-the-fly sampling from the behavior policy.
struct DataFlags {
    std::string data_path;
    std::optional<Index> trajectories;
    Index horizon = 100;

    void add(CLI::App& app) {
        auto* data = app.add_option("--data", data_path, "Dataset file written by gen-data");
        auto* n = app.add_option("--trajectories", trajectories, "Sample this many behavior trajectories");
        app.add_option("--horizon", horizon, "Steps per sampled trajectory")->capture_default_str();
        data->excludes(n);
    }

    TransitionDataset load(const Setup& setup, std::uint64_t seed) const {
        TransitionDataset data;
        if (!data_path.empty()) {
            data = load_dataset(data_path);
        } else if (trajectories) {
            data = sample_dataset(setup.mdp, setup.policies.behavior, *trajectories, horizon, seed);
        } else {
            throw CLI::RequiredError("--data or --trajectories");
        }
        if (data.num_states != setup.mdp.num_states() || data.num_actions != setup.mdp.num_actions()) {
            throw InvalidArgument("dataset dimensions do not match the selected environment");
        }
        return data;
    }
};

void print_value(const char* label, double value) { std::printf("%-24s %.10g\n", label, value); }

void print_truth(const Setup& setup, double estimate) {
    const double truth = policy_value_exact(setup.mdp, setup.policies.target);
    print_value("truth", truth);
    print_value("abs_error", std::abs(estimate - truth));
}

int run_cli(int argc, char** argv) {
    CLI::App app{"Stationary distribution correction estimation and off-policy evaluation"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    app.footer(kFormatsHelp);

    std::uint64_t seed = 0;
    auto add_seed = [&](CLI::App& sub) {
        sub.add_option("--seed", seed, "Random seed (falls back to DICE_SEED)")
            ->envname("DICE_SEED")
            ->capture_default_str();
    };

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Roll out the behavior policy and write a dataset");
    gen->footer(kFormatsHelp);
    EnvFlags gen_env;
    gen_env.add(*gen);
    Index gen_n = 200;
    Index gen_h = 100;
    std::string gen_out;
    std::string gen_traj_out;
    gen->add_option("--trajectories", gen_n, "Number of trajectories")->capture_default_str();
    gen->add_option("--horizon", gen_h, "Steps per trajectory")->capture_default_str();
    gen->add_option("--out", gen_out, "Transition dataset output file")->required();
    gen->add_option("--traj-out", gen_traj_out, "Also write whole trajectories (for importance sampling)");
    add_seed(*gen);

    // solve-exact
    auto* solve = app.add_subcommand("solve-exact", "Exact DualDICE and TD solves on an empirical model");
    solve->footer(kFormatsHelp);
    EnvFlags solve_env;
    solve_env.add(*solve);
    DataFlags solve_data;
    solve_data.add(*solve);
    bool solve_oracle = false;
    bool solve_clone = false;
    solve->add_flag("--oracle", solve_oracle, "Also print the true value and errors");
    solve->add_flag("--behavior-clone", solve_clone,
                    "Use a cloned behavior policy for the solvers that need one");
    add_seed(*solve);

    // train
    auto* tr = app.add_subcommand("train", "Train DualDICE by stochastic saddle-point optimization");
    tr->footer(kFormatsHelp);
    EnvFlags tr_env;
    tr_env.add(*tr);
    DataFlags tr_data;
    tr_data.add(*tr);
    TrainConfig tc;
    std::string optimizer = "adam";
    std::string approx = "tabular";
    std::vector<Index> hidden = {64, 64};
    std::string model_out;
    bool tr_oracle = false;
    tr->add_option("--penalty-p", tc.penalty_p, "Exponent p of f(x) = |x|^p / p")->capture_default_str();
    tr->add_option("--batch-size", tc.batch_size, "Batch size")->capture_default_str();
    tr->add_option("--lr-nu", tc.lr_nu, "Learning rate for nu")->capture_default_str();
    tr->add_option("--lr-zeta", tc.lr_zeta, "Learning rate for zeta")->capture_default_str();
    tr->add_option("--steps", tc.num_steps, "Training steps")->capture_default_str();
    tr->add_option("--optimizer", optimizer, "sgd or adam")
        ->check(CLI::IsMember({"sgd", "adam"}))
        ->capture_default_str();
    tr->add_option("--lr-decay-steps", tc.lr_decay_steps, "Use lr / (1 + t / this); 0 disables")
        ->capture_default_str();
    tr->add_option("--approx", approx, "tabular, linear or mlp (linear/mlp need --env grid)")
        ->check(CLI::IsMember({"tabular", "linear", "mlp"}))
        ->capture_default_str();
    tr->add_option("--hidden", hidden, "MLP hidden widths")->capture_default_str();
    tr->add_option("--zeta-clip", tc.zeta_clip, "Project corrections onto [0, C] when reading them out");
    tr->add_flag("--exact-expectation", tc.exact_target_expectation,
                 "Average nu over pi at s' and s0 instead of sampling one action");
    tr->add_option("--eval-every", tc.eval_every, "Print the running estimate every this many steps")
        ->capture_default_str();
    tr->add_option("--model-out", model_out, "Write the trained model here");
    tr->add_flag("--oracle", tr_oracle, "Also print the true value and the absolute error");
    add_seed(*tr);

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "Evaluate a saved model on a dataset, or summarize results");
    ev->footer(kFormatsHelp);
    EnvFlags ev_env;
    ev_env.add(*ev);
    std::string ev_model;
    std::string ev_data;
    std::string ev_results;
    std::string ev_config;
    std::optional<double> ev_clip;
    bool ev_oracle = false;
    bool ev_json = false;
    auto* ev_model_opt = ev->add_option("--model", ev_model, "Model file written by train");
    ev->add_option("--data", ev_data, "Dataset the corrections are applied to");
    auto* ev_results_opt = ev->add_option("--results", ev_results, "Raw results (JSON lines) to summarize");
    ev->add_option("--config", ev_config, "Config used for --results; verifies the stored ground truth");
    ev->add_option("--zeta-clip", ev_clip, "Project corrections onto [0, C]");
    ev->add_flag("--oracle", ev_oracle, "Also print the true value and the absolute error");
    ev->add_flag("--json", ev_json, "Machine-readable output");
    ev_model_opt->excludes(ev_results_opt);

    // sweep
    auto* sw = app.add_subcommand("sweep", "Run an experiment config over seeds and data sizes");
    sw->footer(kFormatsHelp);
    std::string sw_config;
    std::string sw_out;
    unsigned jobs = 0;
    bool sw_json = false;
    bool sw_quiet = false;
    std::string sw_panel = "trajectories";
    sw->add_option("--config", sw_config, "Experiment config file")->required()->check(CLI::ExistingFile);
    sw->add_option("--out", sw_out, "Output directory")->required();
    sw->add_option("--jobs", jobs, "Worker threads (0 = all cores)")->capture_default_str();
    sw->add_option("--panel-by", sw_panel, "Split plots by trajectories or horizon")
        ->check(CLI::IsMember({"trajectories", "horizon"}))
        ->capture_default_str();
    sw->add_flag("--json", sw_json, "Print the summary as JSON");
    sw->add_flag("--quiet", sw_quiet, "No progress output");

    // plot
    auto* pl = app.add_subcommand("plot", "Write per-panel CSV and SVG files from raw results");
    std::string pl_results;
    std::string pl_out;
    std::string pl_panel = "trajectories";
    pl->add_option("--results", pl_results, "Raw results (JSON lines)")->required()->check(CLI::ExistingFile);
    pl->add_option("--out", pl_out, "Output directory")->required();
    pl->add_option("--panel-by", pl_panel, "Split plots by trajectories or horizon")
        ->check(CLI::IsMember({"trajectories", "horizon"}))
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    if (gen->parsed()) {
        const Setup setup = make_setup(gen_env);
        const TrajectoryDataset trajs =
            sample_trajectories(setup.mdp, setup.policies.behavior, gen_n, gen_h, seed);
        TransitionDataset data = trajs.to_transitions();
        data.metadata = "behavior_mix=" + std::to_string(gen_env.behavior_mix) + " seed=" + std::to_string(seed);
        save_dataset(gen_out, data);
        if (!gen_traj_out.empty()) save_trajectories(gen_traj_out, trajs);
        std::printf("wrote %zu transitions and %zu initial states to %s\n", data.transitions.size(),
                    data.initial_states.size(), gen_out.c_str());
        return 0;
    }

    if (solve->parsed()) {
        const Setup setup = make_setup(solve_env);
        const TransitionDataset data = solve_data.load(setup, seed);
        const EmpiricalModel model = build_empirical_model(data, setup.mdp.num_states(), setup.mdp.num_actions());
        const double gamma = data.gamma;
        const StochasticPolicy behavior =
            solve_clone ? behavior_cloning(data, setup.mdp.num_states(), setup.mdp.num_actions())
                        : setup.policies.behavior;
        const auto dd = solve_dualdice_exact(model, setup.policies.target, gamma);
        const double dd_value = ope_from_corrections(dd.corrections, model);
        const double dd_state =
            ope_from_corrections(solve_dualdice_exact_statewise(model, setup.policies.target, behavior, gamma), model);
        const double td = ope_from_corrections(solve_td_exact(model, setup.policies.target, behavior, gamma), model);
        print_value("dualdice-exact", dd_value);
        print_value("dualdice-exact-statewise", dd_state);
        print_value("td-exact", td);
        if (solve_oracle) {
            const double truth = policy_value_exact(setup.mdp, setup.policies.target);
            print_value("truth", truth);
            print_value("abs_error dualdice", std::abs(dd_value - truth));
            print_value("abs_error statewise", std::abs(dd_state - truth));
            print_value("abs_error td", std::abs(td - truth));
        }
        for (const auto& note : dd.corrections.diagnostics.notes) std::fprintf(stderr, "note: %s\n", note.c_str());
        return 0;
    }

    if (tr->parsed()) {
        const Setup setup = make_setup(tr_env);
        const TransitionDataset data = tr_data.load(setup, seed);
        tc.optimizer = parse_optimizer_kind(optimizer);
        tc.seed = seed;
        const ApproxKind kind = parse_approx_kind(approx);
        CorrectionModel model =
            kind == ApproxKind::kTabular
                ? make_tabular_model(setup.mdp.num_states(), setup.mdp.num_actions())
            : kind == ApproxKind::kLinear
                ? make_linear_model(environment_features(setup.spec, kind), setup.mdp.num_states(),
                                    setup.mdp.num_actions())
                : make_mlp_model(environment_features(setup.spec, kind), setup.mdp.num_states(),
                                 setup.mdp.num_actions(), hidden, seed + 1);
        std::optional<double> truth;
        if (tr_oracle) truth = policy_value_exact(setup.mdp, setup.policies.target);
        const TrainResult result = train(data, setup.policies.target, std::move(model), tc, truth);
        for (const auto& p : result.trace) {
            std::printf("step %lld loss %.10g estimate %.10g\n", static_cast<long long>(p.step), p.loss, p.estimate);
        }
        const double estimate = estimate_policy_value(result.model, data, tc.zeta_clip);
        print_value("estimate", estimate);
        if (tr_oracle) print_truth(setup, estimate);
        if (!model_out.empty()) save_model(model_out, result.model);
        return 0;
    }

    if (ev->parsed()) {
        if (!ev_results.empty()) {
            const ExperimentResult result = load_results(ev_results);
            if (!ev_config.empty()) verify_ground_truth(result, load_config(ev_config));
            const auto summary = rmse_aggregate(result.cells);
            if (ev_json) {
                nlohmann::ordered_json out = nlohmann::ordered_json::array();
                for (const auto& s : summary) {
                    out.push_back({{"estimator", s.estimator}, {"trajectories", s.trajectories},
                                   {"horizon", s.horizon}, {"seeds", s.num_seeds}, {"failed", s.num_failed},
                                   {"rmse", s.rmse}, {"log10_median_abs_error", s.log_median_abs_error}});
                }
                std::cout << out.dump(2) << "\n";
            } else {
                write_summary_csv(std::cout, summary);
            }
            return 0;
        }
        if (ev_model.empty() || ev_data.empty()) {
            throw CLI::RequiredError("--model and --data (or --results)");
        }
        const CorrectionModel model = load_model(ev_model);
        const TransitionDataset data = load_dataset(ev_data);
        const double estimate = estimate_policy_value(model, data, ev_clip);
        std::optional<double> truth;
        if (ev_oracle) {
            const Setup setup = make_setup(ev_env);
            truth = policy_value_exact(setup.mdp, setup.policies.target);
        }
        if (ev_json) {
            nlohmann::ordered_json out{{"estimate", estimate}};
            if (truth) {
                out["truth"] = *truth;
                out["abs_error"] = std::abs(estimate - *truth);
            }
            std::cout << out.dump() << "\n";
        } else {
            print_value("estimate", estimate);
            if (truth) {
                print_value("truth", *truth);
                print_value("abs_error", std::abs(estimate - *truth));
            }
        }
        return 0;
    }

    if (sw->parsed()) {
        const ExperimentConfig config = load_config(sw_config);
        RunOptions options;
        options.jobs = jobs;
        if (!sw_quiet) {
            options.on_cell = [](const ResultCell& c) {
                if (c.failed()) {
                    std::fprintf(stderr, "%s seed=%llu n=%lld h=%lld failed: %s\n", c.estimator.c_str(),
                                 static_cast<unsigned long long>(c.seed), static_cast<long long>(c.trajectories),
                                 static_cast<long long>(c.horizon), c.error.c_str());
                } else {
                    std::fprintf(stderr, "%s seed=%llu n=%lld h=%lld estimate=%.6g error=%.3g\n",
                                 c.estimator.c_str(), static_cast<unsigned long long>(c.seed),
                                 static_cast<long long>(c.trajectories), static_cast<long long>(c.horizon),
                                 c.estimate, std::sqrt(c.squared_error));
                }
            };
        }
        const ExperimentResult result = run_experiment(config, options);
        const std::filesystem::path out_dir(sw_out);
        std::filesystem::create_directories(out_dir);
        save_results(out_dir / "results.jsonl", result);
        const auto summary = rmse_aggregate(result.cells);
        save_summary_csv(out_dir / "summary.csv", summary);
        emit_plot_data(result, out_dir / "plots", parse_panel_axis(sw_panel));
        if (sw_json) {
            nlohmann::ordered_json out = nlohmann::ordered_json::array();
            for (const auto& s : summary) {
                out.push_back({{"estimator", s.estimator}, {"trajectories", s.trajectories}, {"horizon", s.horizon},
                               {"seeds", s.num_seeds}, {"failed", s.num_failed}, {"rmse", s.rmse},
                               {"log10_median_abs_error", s.log_median_abs_error}});
            }
            std::cout << out.dump(2) << "\n";
        } else {
            write_summary_csv(std::cout, summary);
        }
        return 0;
    }

    if (pl->parsed()) {
        const ExperimentResult result = load_results(pl_results);
        const auto files = emit_plot_data(result, pl_out, parse_panel_axis(pl_panel));
        for (const auto& f : files) std::printf("%s\n", f.string().c_str());
        return 0;
    }
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const CLI::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
