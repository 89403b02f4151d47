#pragma once

#include "dualdice/mdp.hpp"

namespace dualdice {

/// Taxi state decoding; `passenger` is 0..3 for a pad, 4 for in-taxi.
struct TaxiState {
    int row = 0;
    int col = 0;
    int passenger = 0;
    int destination = 0;
};

namespace taxi {
inline constexpr int kGridSize = 5;
inline constexpr int kEncodedStates = 500;
/// Index of the zero-reward absorbing state entered after a successful dropoff.
inline constexpr int kAbsorbingState = 500;
inline constexpr int kNumActions = 6;
enum Action : int { kSouth = 0, kNorth = 1, kEast = 2, kWest = 3, kPickup = 4, kDropoff = 5 };

int encode(const TaxiState& state);
TaxiState decode(int state);
}  // namespace taxi

/**
 * Dietterich's Taxi on the classic 5x5 map with pads R, G, Y, B.
 * 500 encoded states plus one absorbing state, 6 actions, gamma = 0.995.
 * Rewards: -1 per step, +20 for delivering the passenger (which moves the
 * episode into the absorbing state), -10 for an illegal pickup or dropoff.
 * Initial states are uniform over passenger-waiting configurations.
 */
TabularMdp taxi_env(double gamma = 0.995);

/**
 * size x size room with deterministic left/right/up/down moves clipped at
 * the walls. Reward exp(-0.2|x-(size-1)| - 0.2|y-(size-1)|) for every action,
 * uniform start state, gamma = 0.995. State index is y * size + x.
 */
TabularMdp grid_env(Index size, double gamma = 0.995);

namespace grid {
enum Action : int { kLeft = 0, kRight = 1, kUp = 2, kDown = 3 };
}

/// Per-pair inputs (x/(size-1), y/(size-1), one-hot action); (size^2 * 4) x 6.
Matrix grid_coordinate_features(Index size);

/// One-hot action crossed with (1, x, y) scaled coordinates; (size^2 * 4) x 12.
Matrix grid_linear_features(Index size);

}  // namespace dualdice
