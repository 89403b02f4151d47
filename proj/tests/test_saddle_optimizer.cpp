#include "dualdice/environments.hpp"
#include "dualdice/saddle_optimizer.hpp"
#include "test_helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <type_traits>

using namespace dualdice;

namespace {

Minibatch random_batch(Index states, Index actions, std::size_t size, Rng& rng) {
    std::uniform_int_distribution<int> s(0, static_cast<int>(states) - 1);
    std::uniform_int_distribution<int> a(0, static_cast<int>(actions) - 1);
    std::vector<Transition> transitions(size);
    std::vector<int> next_actions(size);
    for (std::size_t i = 0; i < size; ++i) {
        transitions[i] = {s(rng), a(rng), 0.0, s(rng)};
        next_actions[i] = a(rng);
    }
    std::vector<int> starts(size / 2);
    std::vector<int> start_actions(size / 2);
    for (std::size_t j = 0; j < starts.size(); ++j) {
        starts[j] = s(rng);
        start_actions[j] = a(rng);
    }
    return make_sampled_batch(transitions, next_actions, starts, start_actions);
}

void randomize(CorrectionModel& model, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 0.7);
    for (Index k = 0; k < model.nu.num_params(); ++k) model.nu.params()(k) = normal(rng);
    for (Index k = 0; k < model.zeta.num_params(); ++k) model.zeta.params()(k) = normal(rng);
}

double relative_gradient_error(CorrectionModel model, const Minibatch& batch, const PenaltyFunction& f,
                               double gamma) {
    const LossGradient g = minibatch_gradient(batch, model, f, gamma);
    const double h = 1e-5;
    auto numeric = [&](FunctionApprox& part) {
        Vector out(part.num_params());
        for (Index k = 0; k < part.num_params(); ++k) {
            const double saved = part.params()(k);
            part.params()(k) = saved + h;
            const double up = minibatch_loss(batch, model, f, gamma);
            part.params()(k) = saved - h;
            const double down = minibatch_loss(batch, model, f, gamma);
            part.params()(k) = saved;
            out(k) = (up - down) / (2 * h);
        }
        return out;
    };
    const Vector nu = numeric(model.nu);
    const Vector zeta = numeric(model.zeta);
    const double diff = std::sqrt((g.nu - nu).squaredNorm() + (g.zeta - zeta).squaredNorm());
    const double scale = std::sqrt(g.nu.squaredNorm() + g.zeta.squaredNorm()) + std::sqrt(nu.squaredNorm() + zeta.squaredNorm());
    return diff / std::max(scale, 1e-12);
}

struct SmallProblem {
    TabularMdp mdp;
    StochasticPolicy behavior;
    TransitionDataset data;
    EmpiricalModel empirical;
};

SmallProblem small_problem(std::uint64_t seed) {
    TabularMdp mdp = random_mdp(5, 2, 0.9, seed);
    StochasticPolicy mu = StochasticPolicy::uniform(5, 2);
    TransitionDataset data = sample_dataset(mdp, mu, 100, 20, seed + 1);
    EmpiricalModel empirical = build_empirical_model(data);
    return {std::move(mdp), std::move(mu), std::move(data), std::move(empirical)};
}

TrainConfig small_config(double p) {
    TrainConfig config;
    config.batch_size = 64;
    config.lr_nu = 2.0;
    config.lr_zeta = 2.0;
    config.optimizer = OptimizerKind::kSgd;
    config.lr_decay_steps = 1000;
    config.num_steps = 16000;
    config.penalty_p = p;
    config.seed = 1;
    return config;
}

}  // namespace

TEST_SUITE("saddle_optimizer") {

TEST_CASE("objective is zero at zero parameters") {
    Rng rng(1);
    const Minibatch batch = random_batch(4, 3, 20, rng);
    for (double p : {1.25, 1.5, 2.0, 4.0}) {
        CHECK(minibatch_loss(batch, make_tabular_model(4, 3), penalty(p), 0.9) == 0.0);
    }
}

TEST_CASE("objective on a hand-computed batch") {
    // nu = (0, 1), zeta(0) = 1, p = 2, gamma = 1/2, one transition 0 -> 1
    // and one start in state 0:
    // (0 - 0.5 * 1) * 1 - 1/2 - 0.5 * 0 = -1.
    CorrectionModel model = make_tabular_model(2, 1);
    model.nu.params() << 0.0, 1.0;
    model.zeta.params() << 1.0, 0.0;
    const Transition t{0, 0, 3.0, 1};
    const int next_action = 0;
    const int start = 0;
    const int start_action = 0;
    const Minibatch batch = make_sampled_batch({&t, 1}, {&next_action, 1}, {&start, 1}, {&start_action, 1});
    CHECK(minibatch_loss(batch, model, penalty(2.0), 0.5) == doctest::Approx(-1.0).epsilon(1e-15));
    const LossGradient g = minibatch_gradient(batch, model, penalty(2.0), 0.5);
    CHECK(g.loss == doctest::Approx(-1.0));
    // d/dnu(0) = zeta - (1-gamma) = 0.5, d/dnu(1) = -gamma zeta = -0.5, d/dzeta(0) = -0.5 - 1.
    CHECK(g.nu(0) == doctest::Approx(0.5));
    CHECK(g.nu(1) == doctest::Approx(-0.5));
    CHECK(g.zeta(0) == doctest::Approx(-1.5));
    CHECK(g.zeta(1) == 0.0);
}

TEST_CASE("gradients match central differences") {
    Rng rng(7);
    const Index size = 3;
    const Matrix coords = grid_coordinate_features(size);
    const Matrix linear = grid_linear_features(size);
    for (int draw = 0; draw < 10; ++draw) {
        const Minibatch batch = random_batch(size * size, 4, 12, rng);
        const PenaltyFunction f = penalty(draw % 2 ? 1.5 : 3.0);
        CorrectionModel tab = make_tabular_model(size * size, 4);
        randomize(tab, rng);
        CHECK(relative_gradient_error(tab, batch, f, 0.95) <= 1e-4);
        CorrectionModel lin = make_linear_model(linear, size * size, 4);
        randomize(lin, rng);
        CHECK(relative_gradient_error(lin, batch, f, 0.95) <= 1e-4);
        const CorrectionModel net = make_mlp_model(coords, size * size, 4, {6, 4}, static_cast<std::uint64_t>(draw));
        CHECK(relative_gradient_error(net, batch, f, 0.95) <= 1e-4);
    }
}

TEST_CASE("objective is affine in nu and concave in zeta") {
    Rng rng(3);
    const Minibatch batch = random_batch(5, 2, 30, rng);
    const PenaltyFunction f = penalty(1.5);
    CorrectionModel a = make_tabular_model(5, 2);
    CorrectionModel b = make_tabular_model(5, 2);
    randomize(a, rng);
    randomize(b, rng);
    for (double alpha : {0.2, 0.5, 0.9}) {
        CorrectionModel mix = a;
        mix.nu.params() = alpha * a.nu.params() + (1 - alpha) * b.nu.params();
        CorrectionModel a_only = a;
        CorrectionModel b_nu = a;
        b_nu.nu.params() = b.nu.params();
        const double lhs = minibatch_loss(batch, mix, f, 0.9);
        const double rhs = alpha * minibatch_loss(batch, a_only, f, 0.9) + (1 - alpha) * minibatch_loss(batch, b_nu, f, 0.9);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));

        CorrectionModel zmix = a;
        zmix.zeta.params() = alpha * a.zeta.params() + (1 - alpha) * b.zeta.params();
        CorrectionModel b_zeta = a;
        b_zeta.zeta.params() = b.zeta.params();
        CHECK(minibatch_loss(batch, zmix, f, 0.9) >=
              alpha * minibatch_loss(batch, a, f, 0.9) + (1 - alpha) * minibatch_loss(batch, b_zeta, f, 0.9) - 1e-12);
    }
}

TEST_CASE("exact target expectation batches weight every action") {
    std::vector<StateAction> next = {{1, 0}, {1, 1}};
    Minibatch batch;
    batch.pairs = {{0, 0}};
    batch.next_pairs = next;
    batch.next_weights = {0.25, 0.75};
    batch.next_owner = {0, 0};
    batch.initial_pairs = {{0, 0}, {0, 1}};
    batch.initial_weights = {0.5, 0.5};
    batch.num_initial_samples = 1;
    CorrectionModel model = make_tabular_model(2, 2);
    model.nu.params() << 1.0, 2.0, 4.0, 8.0;
    model.zeta.params() << 1.0, 0.0, 0.0, 0.0;
    // (1 - 0.5 (0.25*4 + 0.75*8)) * 1 - 1/2 - 0.5 (0.5*1 + 0.5*2) = -2.5 - 0.5 - 0.75.
    CHECK(minibatch_loss(batch, model, penalty(2.0), 0.5) == doctest::Approx(-3.75));
    batch.next_owner = {0, 1};
    CHECK_THROWS_AS(batch.validate(), InvalidArgument);
}

TEST_CASE("training is deterministic in its seed") {
    const SmallProblem p = small_problem(2);
    TrainConfig config = small_config(2.0);
    config.num_steps = 500;
    const StochasticPolicy pi = random_policy(5, 2, 9);
    const TrainResult a = train(p.data, pi, make_tabular_model(5, 2), config);
    const TrainResult b = train(p.data, pi, make_tabular_model(5, 2), config);
    CHECK(a.model.nu.params() == b.model.nu.params());
    CHECK(a.model.zeta.params() == b.model.zeta.params());
    config.seed = 2;
    const TrainResult c = train(p.data, pi, make_tabular_model(5, 2), config);
    CHECK(a.model.zeta.params() != c.model.zeta.params());
}

TEST_CASE("on-policy data gives corrections averaging one") {
    const SmallProblem p = small_problem(3);
    for (double exponent : {1.5, 2.0}) {
        const TrainResult r = train(p.data, p.behavior, make_tabular_model(5, 2), small_config(exponent));
        const CorrectionTable table = correction_table(r.model, p.empirical);
        CHECK(std::abs(table.mean_under(p.empirical) - 1.0) <= 0.05);
    }
}

TEST_CASE("stochastic training approaches the exact solution") {
    const SmallProblem p = small_problem(3);
    const StochasticPolicy pi = random_policy(5, 2, 5);
    TrainConfig config = small_config(2.0);
    config.eval_every = 4000;
    const double truth = policy_value_exact(p.mdp, pi);
    const TrainResult r = train(p.data, pi, make_tabular_model(5, 2), config, truth);
    const auto exact = solve_dualdice_exact(p.empirical, pi, 0.9);
    const CorrectionTable learned = correction_table(r.model, p.empirical);
    CHECK(dualdice::testing::max_abs_diff_defined(learned.values, exact.corrections.values) < 0.2);
    CHECK(std::abs(estimate_policy_value(r.model, p.data) - ope_from_corrections(exact.corrections, p.empirical)) < 0.03);
    CHECK(kkt_residual(r.model, p.empirical, pi, 0.9, penalty(2.0)) < 0.1);
    REQUIRE(r.trace.size() == 4);
    CHECK(r.trace.back().step == 16000);
    CHECK(r.trace.back().truth == truth);
    CHECK(r.trace.back().estimate == doctest::Approx(estimate_policy_value(r.model, p.data)));
}

TEST_CASE("primal objective is minimized by the exact solution") {
    const SmallProblem p = small_problem(4);
    const StochasticPolicy pi = random_policy(5, 2, 6);
    const auto exact = solve_dualdice_exact(p.empirical, pi, 0.9);
    const PenaltyFunction f = penalty(2.0);
    const double best = primal_objective(exact.nu, p.empirical, pi, 0.9, f);
    Rng rng(5);
    std::normal_distribution<double> normal(0.0, 0.5);
    for (int i = 0; i < 20; ++i) {
        Vector nu = exact.nu;
        for (Index k = 0; k < nu.size(); ++k) nu(k) += normal(rng);
        CHECK(primal_objective(nu, p.empirical, pi, 0.9, f) >= best - 1e-12);
    }
}

TEST_CASE("clipping and model persistence") {
    CorrectionModel model = make_tabular_model(2, 2);
    model.zeta.params() << -1.0, 0.5, 3.0, 20.0;
    const std::vector<StateAction> pairs = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    CHECK(corrections_from_model(model, pairs) == Vector{{-1.0, 0.5, 3.0, 20.0}});
    CHECK(corrections_from_model(model, pairs, 10.0) == Vector{{0.0, 0.5, 3.0, 10.0}});

    const SmallProblem p = small_problem(5);
    TrainConfig config = small_config(1.5);
    config.num_steps = 2000;
    const StochasticPolicy pi = random_policy(5, 2, 1);
    const TrainResult r = train(p.data, pi, make_tabular_model(5, 2), config);
    std::stringstream buffer;
    write_model(buffer, r.model);
    const CorrectionModel back = read_model(buffer);
    CHECK(std::abs(estimate_policy_value(back, p.data) - estimate_policy_value(r.model, p.data)) < 1e-9);
}

TEST_CASE("invalid settings are rejected") {
    const SmallProblem p = small_problem(6);
    TrainConfig config = small_config(2.0);
    config.batch_size = 0;
    CHECK_THROWS_AS(train(p.data, p.behavior, make_tabular_model(5, 2), config), InvalidArgument);
    config = small_config(1.0);
    CHECK_THROWS_AS(train(p.data, p.behavior, make_tabular_model(5, 2), config), InvalidArgument);
    config = small_config(2.0);
    config.lr_nu = 0.0;
    CHECK_THROWS_AS(train(p.data, p.behavior, make_tabular_model(5, 2), config), InvalidArgument);
    CHECK_THROWS_AS(train(p.data, p.behavior, make_tabular_model(4, 2), small_config(2.0)), InvalidArgument);
}

TEST_CASE("diverging training is reported") {
    const SmallProblem p = small_problem(7);
    TrainConfig config = small_config(4.0);
    config.lr_decay_steps = 0;
    config.lr_nu = 1e6;
    config.lr_zeta = 1e6;
    config.num_steps = 200;
    CHECK_THROWS_AS(train(p.data, random_policy(5, 2, 3), make_tabular_model(5, 2), config), TrainingDiverged);
}

TEST_CASE("training entry points take no behavior policy") {
    using TrainFn = TrainResult (*)(const TransitionDataset&, const StochasticPolicy&, CorrectionModel,
                                    const TrainConfig&, std::optional<double>);
    using ExactFn = DualDiceExactSolution (*)(const EmpiricalModel&, const StochasticPolicy&, double,
                                              const ExactSolveOptions&);
    TrainFn train_fn = &train;
    ExactFn exact_fn = &solve_dualdice_exact;
    CHECK(train_fn != nullptr);
    CHECK(exact_fn != nullptr);
    // A second policy argument does not bind to either entry point.
    CHECK_FALSE(std::is_invocable_v<decltype(train_fn), const TransitionDataset&, const StochasticPolicy&,
                                    const StochasticPolicy&, CorrectionModel, const TrainConfig&,
                                    std::optional<double>>);
    CHECK_FALSE(std::is_invocable_v<decltype(exact_fn), const EmpiricalModel&, const StochasticPolicy&,
                                    const StochasticPolicy&, double, const ExactSolveOptions&>);
}

}  // TEST_SUITE
