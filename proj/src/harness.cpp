#include "dualdice/harness.hpp"

#include "dualdice/environments.hpp"
#include "dualdice/tabular_exact.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace dualdice {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> split_words(const std::string& text) {
    std::istringstream in(text);
    std::vector<std::string> words;
    std::string word;
    while (in >> word) words.push_back(word);
    return words;
}

template <typename T>
T parse_number(const std::string& text, const std::string& key) {
    std::istringstream in(text);
    T value{};
    in >> value;
    if (in.fail() || !(in >> std::ws).eof()) {
        throw ConfigError("invalid value '" + text + "' for '" + key + "'");
    }
    return value;
}

bool parse_bool(const std::string& text, const std::string& key) {
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    throw ConfigError("invalid boolean '" + text + "' for '" + key + "'");
}

std::vector<Index> parse_index_list(const std::string& text, const std::string& key) {
    std::vector<Index> out;
    for (const auto& word : split_words(text)) out.push_back(parse_number<Index>(word, key));
    if (out.empty()) throw ConfigError("'" + key + "' must list at least one value");
    return out;
}

/// "0-19" or "1 5 9".
std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    for (const auto& word : split_words(text)) {
        const auto dash = word.find('-');
        if (dash != std::string::npos && dash > 0) {
            const auto lo = parse_number<std::uint64_t>(word.substr(0, dash), "seeds");
            const auto hi = parse_number<std::uint64_t>(word.substr(dash + 1), "seeds");
            if (hi < lo) throw ConfigError("empty seed range '" + word + "'");
            for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
        } else {
            seeds.push_back(parse_number<std::uint64_t>(word, "seeds"));
        }
    }
    return seeds;
}

using boost::property_tree::ptree;

/// Hands out section keys and remembers which ones were read.
class Section {
   public:
    Section(const ptree& tree, std::string name) : tree_(tree), name_(std::move(name)) {}

    std::optional<std::string> get(const std::string& key) {
        seen_.insert(key);
        const auto it = tree_.find(key);
        if (it == tree_.not_found()) return std::nullopt;
        return it->second.data();
    }

    void reject_unknown() const {
        for (const auto& [key, value] : tree_) {
            if (!seen_.count(key)) throw ConfigError("unknown key '" + key + "' in [" + name_ + "]");
        }
    }

   private:
    const ptree& tree_;
    std::string name_;
    std::set<std::string> seen_;
};

EstimatorSpec parse_estimator(const std::string& name, const ptree& tree) {
    Section section(tree, "estimator." + name);
    EstimatorSpec spec;
    spec.name = name;
    const auto type = section.get("type");
    if (!type) throw ConfigError("[estimator." + name + "] needs a 'type'");
    try {
        spec.type = parse_estimator_type(*type);
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    if (auto v = section.get("penalty_p")) spec.train.penalty_p = parse_number<double>(*v, "penalty_p");
    if (auto v = section.get("batch_size")) spec.train.batch_size = parse_number<Index>(*v, "batch_size");
    if (auto v = section.get("lr_nu")) spec.train.lr_nu = parse_number<double>(*v, "lr_nu");
    if (auto v = section.get("lr_zeta")) spec.train.lr_zeta = parse_number<double>(*v, "lr_zeta");
    if (auto v = section.get("steps")) spec.train.num_steps = parse_number<Index>(*v, "steps");
    if (auto v = section.get("lr_decay_steps")) {
        spec.train.lr_decay_steps = parse_number<double>(*v, "lr_decay_steps");
    }
    if (auto v = section.get("eval_every")) spec.train.eval_every = parse_number<Index>(*v, "eval_every");
    if (auto v = section.get("zeta_clip")) spec.train.zeta_clip = parse_number<double>(*v, "zeta_clip");
    if (auto v = section.get("exact_expectation")) {
        spec.train.exact_target_expectation = parse_bool(*v, "exact_expectation");
    }
    if (auto v = section.get("clip_at_zero")) spec.clip_at_zero = parse_bool(*v, "clip_at_zero");
    try {
        if (auto v = section.get("optimizer")) spec.train.optimizer = parse_optimizer_kind(*v);
        if (auto v = section.get("approx")) spec.approx = parse_approx_kind(*v);
        if (auto v = section.get("td_optimizer")) spec.td.optimizer = parse_optimizer_kind(*v);
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
    if (auto v = section.get("hidden")) spec.hidden = parse_index_list(*v, "hidden");
    if (auto v = section.get("td_lr")) spec.td.learning_rate = parse_number<double>(*v, "td_lr");
    if (auto v = section.get("td_steps")) spec.td.num_steps = parse_number<Index>(*v, "td_steps");
    if (auto v = section.get("td_batch_size")) spec.td.batch_size = parse_number<Index>(*v, "td_batch_size");
    if (auto v = section.get("td_lr_decay_steps")) {
        spec.td.lr_decay_steps = parse_number<double>(*v, "td_lr_decay_steps");
    }
    section.reject_unknown();
    return spec;
}

std::string format_list(const std::vector<Index>& values) {
    std::ostringstream out;
    for (std::size_t i = 0; i < values.size(); ++i) out << (i ? " " : "") << values[i];
    return out.str();
}

TrajectoryDataset truncate(const TrajectoryDataset& full, Index count, Index horizon) {
    TrajectoryDataset out = full.prefix(static_cast<std::size_t>(count));
    out.horizon = horizon;
    const auto h = static_cast<std::size_t>(horizon);
    for (auto& traj : out.trajectories) {
        traj.states.resize(h + 1);
        traj.actions.resize(h);
        traj.rewards.resize(h);
    }
    return out;
}

std::uint64_t cell_seed(std::uint64_t seed, Index trajectories, Index horizon, std::size_t estimator) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(trajectories), static_cast<std::uint32_t>(horizon),
                      static_cast<std::uint32_t>(estimator)};
    std::array<std::uint32_t, 2> words{};
    seq.generate(words.begin(), words.end());
    return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

/// Everything one (seed, size) cell needs. The behavior policy lives here but
/// is only forwarded to the estimators that are defined in terms of it.
struct CellContext {
    const TabularMdp* mdp = nullptr;
    const EnvironmentSpec* env = nullptr;
    const StochasticPolicy* target = nullptr;
    const StochasticPolicy* behavior = nullptr;
    TrajectoryDataset trajectories;
    TransitionDataset transitions;
    std::optional<EmpiricalModel> empirical;

    const EmpiricalModel& model() {
        if (!empirical) {
            empirical = build_empirical_model(transitions, mdp->num_states(), mdp->num_actions());
        }
        return *empirical;
    }
};

CorrectionModel make_model(const EstimatorSpec& spec, const EnvironmentSpec& env, const TabularMdp& mdp,
                           std::uint64_t seed) {
    switch (spec.approx) {
        case ApproxKind::kTabular:
            return make_tabular_model(mdp.num_states(), mdp.num_actions());
        case ApproxKind::kLinear:
            return make_linear_model(environment_features(env, ApproxKind::kLinear), mdp.num_states(),
                                     mdp.num_actions());
        case ApproxKind::kMlp:
            return make_mlp_model(environment_features(env, ApproxKind::kMlp), mdp.num_states(),
                                  mdp.num_actions(), spec.hidden, seed);
    }
    throw InvalidArgument("unknown approximation kind");
}

double run_estimator(const EstimatorSpec& spec, CellContext& ctx, std::uint64_t seed,
                     std::vector<TracePointRecord>& trace) {
    const double gamma = ctx.mdp->gamma();
    switch (spec.type) {
        case EstimatorType::kOracle: {
            const auto occupancy = rollout_occupancy(*ctx.mdp, *ctx.behavior, ctx.trajectories.horizon);
            const CorrectionTable w = true_corrections(*ctx.mdp, *ctx.target, occupancy);
            return ope_from_corrections(w, population_model(*ctx.mdp, occupancy));
        }
        case EstimatorType::kDualDiceExact: {
            const auto solution = solve_dualdice_exact(ctx.model(), *ctx.target, gamma);
            return ope_from_corrections(solution.corrections, ctx.model(), spec.clip_at_zero);
        }
        case EstimatorType::kDualDiceExactStatewise: {
            const auto w = solve_dualdice_exact_statewise(ctx.model(), *ctx.target, *ctx.behavior, gamma);
            return ope_from_corrections(w, ctx.model(), spec.clip_at_zero);
        }
        case EstimatorType::kTdExact: {
            const auto w = solve_td_exact(ctx.model(), *ctx.target, *ctx.behavior, gamma);
            return ope_from_corrections(w, ctx.model());
        }
        case EstimatorType::kDualDice: {
            TrainConfig config = spec.train;
            config.seed = seed;
            std::optional<double> clip = config.zeta_clip;
            if (spec.clip_at_zero && !clip) clip = std::numeric_limits<double>::infinity();
            config.zeta_clip = clip;
            auto result = train(ctx.transitions, *ctx.target,
                                make_model(spec, *ctx.env, *ctx.mdp, seed ^ 0x9e3779b97f4a7c15ULL), config);
            for (const auto& point : result.trace) trace.push_back({point.step, point.estimate});
            return estimate_policy_value(result.model, ctx.transitions, clip);
        }
        case EstimatorType::kTdStochastic:
        case EstimatorType::kTdStochasticCloned: {
            TdConfig config = spec.td;
            config.seed = seed;
            const StochasticPolicy behavior =
                spec.type == EstimatorType::kTdStochastic
                    ? *ctx.behavior
                    : behavior_cloning(ctx.transitions, ctx.mdp->num_states(), ctx.mdp->num_actions());
            return td_corrections_stochastic(ctx.transitions, *ctx.target, behavior,
                                             make_td_tabular_model(ctx.mdp->num_states()), config)
                .estimate;
        }
        case EstimatorType::kImportanceSampling:
            return weighted_stepwise_is(ctx.trajectories, *ctx.target, *ctx.behavior, gamma);
    }
    throw InvalidArgument("unknown estimator type");
}

std::string format_g9(double value) {
    if (std::isnan(value)) return "nan";
    char buffer[64];
    std::snprintf(buffer, sizeof buffer, "%.9g", value);
    return buffer;
}

}  // namespace

void EnvironmentSpec::validate() const {
    if (kind != "taxi" && kind != "grid" && kind != "random") {
        throw ConfigError("unknown environment '" + kind + "' (taxi, grid, random)");
    }
    if (kind == "grid" && grid_size < 2) throw ConfigError("grid_size must be at least 2");
    if (kind == "random" && (random_states < 1 || random_actions < 1)) {
        throw ConfigError("random_states and random_actions must be positive");
    }
    if (gamma && !(*gamma >= 0.0 && *gamma < 1.0)) throw ConfigError("gamma must be in [0, 1)");
}

TabularMdp make_environment(const EnvironmentSpec& spec) {
    spec.validate();
    if (spec.kind == "taxi") return spec.gamma ? taxi_env(*spec.gamma) : taxi_env();
    if (spec.kind == "grid") {
        return spec.gamma ? grid_env(spec.grid_size, *spec.gamma) : grid_env(spec.grid_size);
    }
    return random_mdp(spec.random_states, spec.random_actions, spec.gamma.value_or(0.99), spec.env_seed);
}

Matrix environment_features(const EnvironmentSpec& spec, ApproxKind kind) {
    if (spec.kind != "grid") {
        throw InvalidArgument("linear and MLP models need coordinate features, available for the grid only");
    }
    return kind == ApproxKind::kLinear ? grid_linear_features(spec.grid_size)
                                       : grid_coordinate_features(spec.grid_size);
}

PolicyPair make_policies(const TabularMdp& mdp, double behavior_mix, double target_mix) {
    const StochasticPolicy base = optimal_policy(mdp);
    return {mixture_policy(base, behavior_mix), mixture_policy(base, target_mix)};
}

std::string to_string(EstimatorType type) {
    switch (type) {
        case EstimatorType::kOracle: return "oracle";
        case EstimatorType::kDualDiceExact: return "dualdice-exact";
        case EstimatorType::kDualDiceExactStatewise: return "dualdice-exact-statewise";
        case EstimatorType::kTdExact: return "td-exact";
        case EstimatorType::kDualDice: return "dualdice";
        case EstimatorType::kTdStochastic: return "td-stochastic";
        case EstimatorType::kTdStochasticCloned: return "td-stochastic-bc";
        case EstimatorType::kImportanceSampling: return "is";
    }
    return "unknown";
}

EstimatorType parse_estimator_type(const std::string& name) {
    for (auto type : {EstimatorType::kOracle, EstimatorType::kDualDiceExact,
                      EstimatorType::kDualDiceExactStatewise, EstimatorType::kTdExact,
                      EstimatorType::kDualDice, EstimatorType::kTdStochastic,
                      EstimatorType::kTdStochasticCloned, EstimatorType::kImportanceSampling}) {
        if (to_string(type) == name) return type;
    }
    throw InvalidArgument("unknown estimator type '" + name +
                          "' (oracle, dualdice-exact, dualdice-exact-statewise, td-exact, dualdice, "
                          "td-stochastic, td-stochastic-bc, is)");
}

bool uses_behavior_policy(EstimatorType type) {
    switch (type) {
        case EstimatorType::kOracle:
        case EstimatorType::kDualDiceExactStatewise:
        case EstimatorType::kTdExact:
        case EstimatorType::kTdStochastic:
        case EstimatorType::kImportanceSampling:
            return true;
        case EstimatorType::kDualDiceExact:
        case EstimatorType::kDualDice:
        case EstimatorType::kTdStochasticCloned:
            return false;
    }
    return true;
}

void ExperimentConfig::validate() const {
    environment.validate();
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (estimators.empty()) throw ConfigError("at least one estimator is required");
    if (!(behavior_mix >= 0.0 && behavior_mix <= 1.0) || !(target_mix >= 0.0 && target_mix <= 1.0)) {
        throw ConfigError("policy mixture weights must be in [0, 1]");
    }
    if (trajectory_counts.empty() || horizons.empty()) {
        throw ConfigError("trajectories and horizons must be non-empty");
    }
    for (Index n : trajectory_counts) {
        if (n < 1) throw ConfigError("trajectory counts must be positive");
    }
    for (Index h : horizons) {
        if (h < 1) throw ConfigError("horizons must be positive");
    }
    std::set<std::string> names;
    for (const auto& e : estimators) {
        if (!names.insert(e.name).second) throw ConfigError("duplicate estimator '" + e.name + "'");
        try {
            if (e.type == EstimatorType::kDualDice) e.train.validate();
            if (e.type == EstimatorType::kTdStochastic || e.type == EstimatorType::kTdStochasticCloned) {
                e.td.validate();
            }
        } catch (const InvalidArgument& err) {
            throw ConfigError("[estimator." + e.name + "] " + err.what());
        }
        if (e.type == EstimatorType::kDualDice && e.approx != ApproxKind::kTabular &&
            environment.kind != "grid") {
            throw ConfigError("[estimator." + e.name + "] linear/mlp models need the grid environment");
        }
    }
}

ExperimentConfig parse_config(std::istream& in) {
    ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    ExperimentConfig config;
    config.seeds.clear();
    bool have_experiment = false;
    for (const auto& [name, child] : tree) {
        if (name == "experiment") {
            have_experiment = true;
            Section s(child, name);
            if (auto v = s.get("name")) config.name = *v;
            if (auto v = s.get("environment")) config.environment.kind = *v;
            if (auto v = s.get("grid_size")) config.environment.grid_size = parse_number<Index>(*v, "grid_size");
            if (auto v = s.get("random_states")) {
                config.environment.random_states = parse_number<Index>(*v, "random_states");
            }
            if (auto v = s.get("random_actions")) {
                config.environment.random_actions = parse_number<Index>(*v, "random_actions");
            }
            if (auto v = s.get("env_seed")) {
                config.environment.env_seed = parse_number<std::uint64_t>(*v, "env_seed");
            }
            if (auto v = s.get("gamma")) config.environment.gamma = parse_number<double>(*v, "gamma");
            if (auto v = s.get("behavior_mix")) config.behavior_mix = parse_number<double>(*v, "behavior_mix");
            if (auto v = s.get("target_mix")) config.target_mix = parse_number<double>(*v, "target_mix");
            if (auto v = s.get("trajectories")) config.trajectory_counts = parse_index_list(*v, "trajectories");
            if (auto v = s.get("horizons")) config.horizons = parse_index_list(*v, "horizons");
            if (auto v = s.get("seeds")) config.seeds = parse_seeds(*v);
            s.reject_unknown();
        } else if (name.rfind("estimator.", 0) == 0 && name.size() > 10) {
            if (!child.data().empty()) throw ConfigError("stray value for section '" + name + "'");
            config.estimators.push_back(parse_estimator(name.substr(10), child));
        } else {
            throw ConfigError("unknown section or top-level key '" + name + "'");
        }
    }
    if (!have_experiment) throw ConfigError("missing [experiment] section");
    config.validate();
    return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
    return parse_config(in);
}

void write_config(std::ostream& out, const ExperimentConfig& config) {
    out.precision(17);
    out << "[experiment]\n";
    out << "name = " << config.name << "\n";
    out << "environment = " << config.environment.kind << "\n";
    out << "grid_size = " << config.environment.grid_size << "\n";
    out << "random_states = " << config.environment.random_states << "\n";
    out << "random_actions = " << config.environment.random_actions << "\n";
    out << "env_seed = " << config.environment.env_seed << "\n";
    if (config.environment.gamma) out << "gamma = " << *config.environment.gamma << "\n";
    out << "behavior_mix = " << config.behavior_mix << "\n";
    out << "target_mix = " << config.target_mix << "\n";
    out << "trajectories = " << format_list(config.trajectory_counts) << "\n";
    out << "horizons = " << format_list(config.horizons) << "\n";
    out << "seeds =";
    for (auto s : config.seeds) out << " " << s;
    out << "\n";
    for (const auto& e : config.estimators) {
        out << "\n[estimator." << e.name << "]\n";
        out << "type = " << to_string(e.type) << "\n";
        out << "clip_at_zero = " << (e.clip_at_zero ? "true" : "false") << "\n";
        if (e.type == EstimatorType::kDualDice) {
            out << "penalty_p = " << e.train.penalty_p << "\n";
            out << "batch_size = " << e.train.batch_size << "\n";
            out << "lr_nu = " << e.train.lr_nu << "\n";
            out << "lr_zeta = " << e.train.lr_zeta << "\n";
            out << "steps = " << e.train.num_steps << "\n";
            out << "optimizer = " << to_string(e.train.optimizer) << "\n";
            out << "lr_decay_steps = " << e.train.lr_decay_steps << "\n";
            out << "eval_every = " << e.train.eval_every << "\n";
            out << "exact_expectation = " << (e.train.exact_target_expectation ? "true" : "false") << "\n";
            if (e.train.zeta_clip) out << "zeta_clip = " << *e.train.zeta_clip << "\n";
            out << "approx = " << to_string(e.approx) << "\n";
            out << "hidden = " << format_list(e.hidden) << "\n";
        }
        if (e.type == EstimatorType::kTdStochastic || e.type == EstimatorType::kTdStochasticCloned) {
            out << "td_lr = " << e.td.learning_rate << "\n";
            out << "td_steps = " << e.td.num_steps << "\n";
            out << "td_batch_size = " << e.td.batch_size << "\n";
            out << "td_optimizer = " << to_string(e.td.optimizer) << "\n";
            out << "td_lr_decay_steps = " << e.td.lr_decay_steps << "\n";
        }
    }
}

double experiment_truth(const ExperimentConfig& config) {
    const TabularMdp mdp = make_environment(config.environment);
    const PolicyPair policies = make_policies(mdp, config.behavior_mix, config.target_mix);
    return policy_value_exact(mdp, policies.target);
}

ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options) {
    config.validate();
    const TabularMdp mdp = make_environment(config.environment);
    const PolicyPair policies = make_policies(mdp, config.behavior_mix, config.target_mix);
    const double truth = policy_value_exact(mdp, policies.target);
    const Index max_count = *std::max_element(config.trajectory_counts.begin(), config.trajectory_counts.end());
    const Index max_horizon = *std::max_element(config.horizons.begin(), config.horizons.end());

    struct Task {
        std::size_t seed_index;
        Index trajectories;
        Index horizon;
    };
    std::vector<Task> tasks;
    for (std::size_t i = 0; i < config.seeds.size(); ++i) {
        for (Index n : config.trajectory_counts) {
            for (Index h : config.horizons) tasks.push_back({i, n, h});
        }
    }
    const std::size_t num_estimators = config.estimators.size();
    std::vector<ResultCell> cells(tasks.size() * num_estimators);
    std::vector<std::optional<TrajectoryDataset>> full(config.seeds.size());
    std::vector<std::once_flag> generated(config.seeds.size());
    std::mutex collector;

    auto run_task = [&](std::size_t t) {
        const Task& task = tasks[t];
        const std::uint64_t seed = config.seeds[task.seed_index];
        std::call_once(generated[task.seed_index], [&] {
            full[task.seed_index] = sample_trajectories(mdp, policies.behavior, max_count, max_horizon, seed);
        });
        CellContext ctx;
        ctx.mdp = &mdp;
        ctx.env = &config.environment;
        ctx.target = &policies.target;
        ctx.trajectories = truncate(*full[task.seed_index], task.trajectories, task.horizon);
        ctx.transitions = ctx.trajectories.to_transitions();
        for (std::size_t e = 0; e < num_estimators; ++e) {
            const EstimatorSpec& spec = config.estimators[e];
            ctx.behavior = uses_behavior_policy(spec.type) ? &policies.behavior : nullptr;
            ResultCell& cell = cells[t * num_estimators + e];
            cell.estimator = spec.name;
            cell.seed = seed;
            cell.trajectories = task.trajectories;
            cell.horizon = task.horizon;
            cell.truth = truth;
            try {
                cell.estimate = run_estimator(spec, ctx, cell_seed(seed, task.trajectories, task.horizon, e),
                                              cell.trace);
                if (!std::isfinite(cell.estimate)) throw NumericalError("non-finite estimate");
                cell.squared_error = (cell.estimate - truth) * (cell.estimate - truth);
            } catch (const std::exception& err) {
                cell.estimate = kNaN;
                cell.squared_error = kNaN;
                cell.error = err.what();
                if (cell.error.empty()) cell.error = "estimator failed";
            }
            if (options.on_cell) {
                std::lock_guard lock(collector);
                options.on_cell(cell);
            }
        }
    };

    unsigned jobs = options.jobs ? options.jobs : std::max(1u, std::thread::hardware_concurrency());
    jobs = static_cast<unsigned>(std::min<std::size_t>(jobs, tasks.size()));
    if (jobs <= 1) {
        for (std::size_t t = 0; t < tasks.size(); ++t) run_task(t);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> workers;
        for (unsigned j = 0; j < jobs; ++j) {
            workers.emplace_back([&] {
                for (std::size_t t = next++; t < tasks.size(); t = next++) run_task(t);
            });
        }
        for (auto& w : workers) w.join();
    }
    return {config.name, std::move(cells)};
}

double floored_log10(double value) {
    if (std::isnan(value)) return kNaN;
    if (value <= 0.0) return kLogErrorFloor;
    return std::max(std::log10(value), kLogErrorFloor);
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) return kNaN;
    if (!(q >= 0.0 && q <= 100.0)) throw InvalidArgument("percentile: q must be in [0, 100]");
    std::sort(values.begin(), values.end());
    const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

std::vector<CellSummary> rmse_aggregate(const std::vector<ResultCell>& cells) {
    std::vector<std::string> order;
    std::map<std::string, std::size_t> rank;
    for (const auto& c : cells) {
        if (rank.emplace(c.estimator, order.size()).second) order.push_back(c.estimator);
    }
    struct Bucket {
        std::vector<double> errors;
        Index seeds = 0;
        Index failed = 0;
    };
    std::map<std::tuple<std::size_t, Index, Index>, Bucket> buckets;
    for (const auto& c : cells) {
        Bucket& b = buckets[{rank[c.estimator], c.trajectories, c.horizon}];
        ++b.seeds;
        if (c.failed() || std::isnan(c.squared_error)) {
            ++b.failed;
        } else {
            b.errors.push_back(std::sqrt(c.squared_error));
        }
    }
    std::vector<CellSummary> out;
    for (const auto& [key, b] : buckets) {
        CellSummary s;
        s.estimator = order[std::get<0>(key)];
        s.trajectories = std::get<1>(key);
        s.horizon = std::get<2>(key);
        s.num_seeds = b.seeds;
        s.num_failed = b.failed;
        if (b.errors.empty()) {
            s.rmse = s.log_rmse = s.median_abs_error = s.p25_abs_error = s.p75_abs_error =
                s.log_median_abs_error = kNaN;
        } else {
            // Sum squares in sorted order so the result does not depend on seed order.
            std::vector<double> sorted = b.errors;
            std::sort(sorted.begin(), sorted.end());
            double sum_sq = 0.0;
            for (double e : sorted) sum_sq += e * e;
            s.rmse = std::sqrt(sum_sq / static_cast<double>(sorted.size()));
            s.log_rmse = floored_log10(s.rmse);
            s.median_abs_error = percentile(sorted, 50.0);
            s.p25_abs_error = percentile(sorted, 25.0);
            s.p75_abs_error = percentile(sorted, 75.0);
            s.log_median_abs_error = floored_log10(s.median_abs_error);
        }
        out.push_back(std::move(s));
    }
    return out;
}

void write_results_jsonl(std::ostream& out, const ExperimentResult& result) {
    for (const auto& c : result.cells) {
        nlohmann::ordered_json j;
        j["experiment"] = result.name;
        j["estimator"] = c.estimator;
        j["seed"] = c.seed;
        j["trajectories"] = c.trajectories;
        j["horizon"] = c.horizon;
        j["estimate"] = c.failed() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(c.estimate);
        j["truth"] = c.truth;
        j["squared_error"] =
            c.failed() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(c.squared_error);
        j["error"] = c.failed() ? nlohmann::ordered_json(c.error) : nlohmann::ordered_json(nullptr);
        if (!c.trace.empty()) {
            auto& trace = j["trace"] = nlohmann::ordered_json::array();
            for (const auto& p : c.trace) trace.push_back({p.step, p.estimate});
        }
        out << j.dump() << "\n";
    }
}

ExperimentResult read_results_jsonl(std::istream& in) {
    ExperimentResult result;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = "results line " + std::to_string(line_no);
        try {
            const auto j = nlohmann::json::parse(line);
            ResultCell c;
            const std::string name = j.at("experiment").get<std::string>();
            if (result.cells.empty()) {
                result.name = name;
            } else if (name != result.name) {
                throw ConfigError(where + ": mixes experiments '" + result.name + "' and '" + name + "'");
            }
            c.estimator = j.at("estimator").get<std::string>();
            c.seed = j.at("seed").get<std::uint64_t>();
            c.trajectories = j.at("trajectories").get<Index>();
            c.horizon = j.at("horizon").get<Index>();
            c.truth = j.at("truth").get<double>();
            if (!j.at("error").is_null()) {
                c.error = j.at("error").get<std::string>();
                c.estimate = kNaN;
                c.squared_error = kNaN;
            } else {
                c.estimate = j.at("estimate").get<double>();
                c.squared_error = j.at("squared_error").get<double>();
                const double recomputed = (c.estimate - c.truth) * (c.estimate - c.truth);
                if (std::abs(recomputed - c.squared_error) > 1e-12 * std::max(1.0, recomputed)) {
                    throw ConfigError(where + ": squared_error does not match estimate and truth");
                }
            }
            if (j.contains("trace")) {
                for (const auto& p : j.at("trace")) {
                    c.trace.push_back({p.at(0).get<Index>(), p.at(1).get<double>()});
                }
            }
            result.cells.push_back(std::move(c));
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(where + ": " + e.what());
        }
    }
    return result;
}

void save_results(const std::filesystem::path& path, const ExperimentResult& result) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    write_results_jsonl(out, result);
    if (!out) throw std::runtime_error("error while writing '" + path.string() + "'");
}

ExperimentResult load_results(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
    return read_results_jsonl(in);
}

void verify_ground_truth(const ExperimentResult& result, const ExperimentConfig& config,
                         double tolerance) {
    const double truth = experiment_truth(config);
    for (const auto& c : result.cells) {
        if (std::abs(c.truth - truth) > tolerance) {
            std::ostringstream msg;
            msg.precision(17);
            msg << "stored ground truth " << c.truth << " for " << c.estimator << " (seed " << c.seed
                << ") differs from the exact value " << truth;
            throw ConfigError(msg.str());
        }
    }
}

void write_summary_csv(std::ostream& out, const std::vector<CellSummary>& summary) {
    out << "estimator,trajectories,horizon,seeds,failed,rmse,log10_rmse,median_abs_error,"
           "p25_abs_error,p75_abs_error,log10_median_abs_error\n";
    for (const auto& s : summary) {
        out << s.estimator << "," << s.trajectories << "," << s.horizon << "," << s.num_seeds << ","
            << s.num_failed << "," << format_g9(s.rmse) << "," << format_g9(s.log_rmse) << ","
            << format_g9(s.median_abs_error) << "," << format_g9(s.p25_abs_error) << ","
            << format_g9(s.p75_abs_error) << "," << format_g9(s.log_median_abs_error) << "\n";
    }
}

void save_summary_csv(const std::filesystem::path& path, const std::vector<CellSummary>& summary) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    write_summary_csv(out, summary);
}

}  // namespace dualdice
