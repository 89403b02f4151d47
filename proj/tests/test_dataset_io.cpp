#include "dualdice/dataset_io.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace dualdice;

namespace {

TransitionDataset small_dataset() {
    const TabularMdp mdp = random_mdp(5, 3, 0.9, 3);
    Matrix noise = Matrix::Constant(5, 3, 0.3);
    const TabularMdp noisy(5, 3, mdp.transition(), mdp.reward_mean(), noise, mdp.initial_dist(), 0.9);
    return sample_dataset(noisy, StochasticPolicy::uniform(5, 3), 4, 6, 11);
}

}  // namespace

TEST_SUITE("dataset_io") {

TEST_CASE("transition datasets round-trip bit for bit") {
    const TransitionDataset data = small_dataset();
    std::stringstream buffer;
    write_dataset(buffer, data);
    const TransitionDataset back = read_dataset(buffer);
    CHECK(back.num_states == 5);
    CHECK(back.num_actions == 3);
    CHECK(back.gamma == 0.9);
    REQUIRE(back.transitions.size() == data.transitions.size());
    for (std::size_t i = 0; i < data.transitions.size(); ++i) {
        CHECK(back.transitions[i].state == data.transitions[i].state);
        CHECK(back.transitions[i].action == data.transitions[i].action);
        CHECK(back.transitions[i].reward == data.transitions[i].reward);
        CHECK(back.transitions[i].next_state == data.transitions[i].next_state);
    }
    CHECK(back.initial_states == data.initial_states);
}

TEST_CASE("trajectory datasets round-trip bit for bit") {
    const TabularMdp mdp = random_mdp(4, 2, 0.95, 8);
    const TrajectoryDataset data = sample_trajectories(mdp, StochasticPolicy::uniform(4, 2), 3, 5, 2);
    std::stringstream buffer;
    write_trajectories(buffer, data);
    const TrajectoryDataset back = read_trajectories(buffer);
    CHECK(back.horizon == 5);
    REQUIRE(back.trajectories.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back.trajectories[i].states == data.trajectories[i].states);
        CHECK(back.trajectories[i].actions == data.trajectories[i].actions);
        CHECK(back.trajectories[i].rewards == data.trajectories[i].rewards);
    }
}

TEST_CASE("trajectories flatten into transitions") {
    const TabularMdp mdp = random_mdp(4, 2, 0.95, 8);
    const TrajectoryDataset data = sample_trajectories(mdp, StochasticPolicy::uniform(4, 2), 3, 5, 2);
    const TransitionDataset flat = data.to_transitions();
    CHECK(flat.transitions.size() == 15);
    CHECK(flat.initial_states.size() == 3);
    CHECK(flat.transitions[5].state == data.trajectories[1].states[0]);
    CHECK(flat.transitions[6].state == flat.transitions[5].next_state);
    CHECK(data.prefix(2).trajectories.size() == 2);
}

TEST_CASE("malformed files are rejected") {
    auto parse = [](const std::string& text) {
        std::istringstream in(text);
        return read_dataset(in);
    };
    CHECK_THROWS_AS(parse(""), FormatError);
    CHECK_THROWS_AS(parse("dice-traj v1 2 2 0.9\n"), FormatError);
    CHECK_THROWS_AS(parse("dice-dataset v2 2 2 0.9\n"), FormatError);
    CHECK_THROWS_AS(parse("dice-dataset v1 2 2\n"), FormatError);
    CHECK_THROWS_AS(parse("dice-dataset v1 2 2 0.9\nT 0 1 0.5\nI 0\n"), FormatError);
    CHECK_THROWS_AS(parse("dice-dataset v1 2 2 0.9\nX 0\n"), FormatError);
    CHECK_THROWS_AS(parse("dice-dataset v1 2 2 0.9\nT 0 1 0.5 7\nI 0\n"), InvalidArgument);
    const TransitionDataset ok = parse("dice-dataset v1 2 2 0.9\nT 0 1 0.5 1\nI 0\n");
    CHECK(ok.transitions.size() == 1);

    std::istringstream traj("dice-traj v1 2 2 2 2 0.9\n0 1 0.0 1 0 1.0 1\n");
    CHECK_THROWS_AS(read_trajectories(traj), FormatError);
}

TEST_CASE("files on disk") {
    const auto dir = std::filesystem::temp_directory_path() / "dualdice_io_test";
    std::filesystem::create_directories(dir);
    const TransitionDataset data = small_dataset();
    save_dataset(dir / "data.txt", data);
    CHECK(load_dataset(dir / "data.txt").transitions.size() == data.transitions.size());
    CHECK_THROWS(load_dataset(dir / "missing.txt"));
    std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
