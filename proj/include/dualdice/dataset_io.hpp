#pragma once

#include "dualdice/mdp.hpp"

#include <filesystem>
#include <iosfwd>

namespace dualdice {

/// Thrown when a text file does not follow its declared format.
class FormatError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Transition datasets:
//   dice-dataset v1 <num_states> <num_actions> <gamma>
//   T <s> <a> <r> <s'>      one per transition
//   I <s0>                  one per initial state
// Rewards are written with 17 significant digits.
void write_dataset(std::ostream& out, const TransitionDataset& data);
TransitionDataset read_dataset(std::istream& in);
void save_dataset(const std::filesystem::path& path, const TransitionDataset& data);
TransitionDataset load_dataset(const std::filesystem::path& path);

// Trajectory datasets:
//   dice-traj v1 <horizon> <num_trajectories> <num_states> <num_actions> <gamma>
//   s0 a0 r0 s1 a1 r1 ... s_H      one line per trajectory
void write_trajectories(std::ostream& out, const TrajectoryDataset& data);
TrajectoryDataset read_trajectories(std::istream& in);
void save_trajectories(const std::filesystem::path& path, const TrajectoryDataset& data);
TrajectoryDataset load_trajectories(const std::filesystem::path& path);

}  // namespace dualdice
