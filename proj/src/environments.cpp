#include "dualdice/environments.hpp"

#include <array>
#include <cmath>

namespace dualdice {

namespace taxi {

namespace {

// '|' between two cells blocks east/west movement.
constexpr std::array<const char*, 7> kMap = {
    "+---------+",
    "|R: | : :G|",
    "| : | : : |",
    "| : : : : |",
    "| | : | : |",
    "|Y| : |B: |",
    "+---------+",
};

constexpr std::array<std::array<int, 2>, 4> kPads = {{{0, 0}, {0, 4}, {4, 0}, {4, 3}}};

int pad_at(int row, int col) {
    for (int i = 0; i < 4; ++i)
        if (kPads[i][0] == row && kPads[i][1] == col) return i;
    return -1;
}

}  // namespace

int encode(const TaxiState& st) {
    return ((st.row * kGridSize + st.col) * 5 + st.passenger) * 4 + st.destination;
}

TaxiState decode(int state) {
    TaxiState st;
    st.destination = state % 4;
    state /= 4;
    st.passenger = state % 5;
    state /= 5;
    st.col = state % kGridSize;
    st.row = state / kGridSize;
    return st;
}

}  // namespace taxi

TabularMdp taxi_env(double gamma) {
    using namespace taxi;
    const Index n_states = kEncodedStates + 1;
    const Index n_actions = kNumActions;
    std::vector<Eigen::Triplet<double>> entries;
    Matrix reward = Matrix::Zero(n_states, n_actions);
    Vector beta = Vector::Zero(n_states);

    for (int s = 0; s < kEncodedStates; ++s) {
        const TaxiState st = decode(s);
        if (st.passenger < 4 && st.passenger != st.destination) beta(s) = 1.0;
        for (int a = 0; a < kNumActions; ++a) {
            TaxiState next = st;
            double r = -1.0;
            bool delivered = false;
            switch (a) {
                case kSouth: next.row = std::min(st.row + 1, kGridSize - 1); break;
                case kNorth: next.row = std::max(st.row - 1, 0); break;
                case kEast:
                    if (kMap[1 + st.row][2 * st.col + 2] == ':') next.col = std::min(st.col + 1, kGridSize - 1);
                    break;
                case kWest:
                    if (kMap[1 + st.row][2 * st.col] == ':') next.col = std::max(st.col - 1, 0);
                    break;
                case kPickup:
                    if (st.passenger < 4 && pad_at(st.row, st.col) == st.passenger) {
                        next.passenger = 4;
                    } else {
                        r = -10.0;
                    }
                    break;
                case kDropoff: {
                    const int pad = pad_at(st.row, st.col);
                    if (st.passenger == 4 && pad == st.destination) {
                        r = 20.0;
                        delivered = true;
                    } else if (st.passenger == 4 && pad >= 0) {
                        next.passenger = pad;
                    } else {
                        r = -10.0;
                    }
                    break;
                }
            }
            const int target = delivered ? kAbsorbingState : encode(next);
            entries.emplace_back(s * n_actions + a, target, 1.0);
            reward(s, a) = r;
        }
    }
    for (int a = 0; a < kNumActions; ++a) {
        entries.emplace_back(kAbsorbingState * n_actions + a, kAbsorbingState, 1.0);
    }
    beta /= beta.sum();
    SparseMatrix transition(n_states * n_actions, n_states);
    transition.setFromTriplets(entries.begin(), entries.end());
    return TabularMdp(n_states, n_actions, std::move(transition), std::move(reward),
                      Matrix::Zero(n_states, n_actions), std::move(beta), gamma);
}

TabularMdp grid_env(Index size, double gamma) {
    if (size < 2) throw InvalidArgument("grid_env: size must be at least 2");
    const Index n_states = size * size;
    const Index n_actions = 4;
    const Index goal = size - 1;
    std::vector<Eigen::Triplet<double>> entries;
    Matrix reward(n_states, n_actions);
    for (Index y = 0; y < size; ++y) {
        for (Index x = 0; x < size; ++x) {
            const Index s = y * size + x;
            const double r =
                std::exp(-0.2 * static_cast<double>(std::abs(x - goal)) - 0.2 * static_cast<double>(std::abs(y - goal)));
            for (Index a = 0; a < n_actions; ++a) {
                Index nx = x;
                Index ny = y;
                switch (a) {
                    case grid::kLeft: nx = std::max<Index>(x - 1, 0); break;
                    case grid::kRight: nx = std::min<Index>(x + 1, goal); break;
                    case grid::kUp: ny = std::max<Index>(y - 1, 0); break;
                    case grid::kDown: ny = std::min<Index>(y + 1, goal); break;
                }
                entries.emplace_back(s * n_actions + a, ny * size + nx, 1.0);
                reward(s, a) = r;
            }
        }
    }
    SparseMatrix transition(n_states * n_actions, n_states);
    transition.setFromTriplets(entries.begin(), entries.end());
    return TabularMdp(n_states, n_actions, std::move(transition), std::move(reward),
                      Matrix::Zero(n_states, n_actions),
                      Vector::Constant(n_states, 1.0 / static_cast<double>(n_states)), gamma);
}

Matrix grid_coordinate_features(Index size) {
    const Index n_actions = 4;
    Matrix features = Matrix::Zero(size * size * n_actions, 2 + n_actions);
    const double scale = 1.0 / static_cast<double>(size - 1);
    for (Index y = 0; y < size; ++y)
        for (Index x = 0; x < size; ++x)
            for (Index a = 0; a < n_actions; ++a) {
                const Index row = (y * size + x) * n_actions + a;
                features(row, 0) = static_cast<double>(x) * scale;
                features(row, 1) = static_cast<double>(y) * scale;
                features(row, 2 + a) = 1.0;
            }
    return features;
}

Matrix grid_linear_features(Index size) {
    const Index n_actions = 4;
    Matrix features = Matrix::Zero(size * size * n_actions, 3 * n_actions);
    const double scale = 1.0 / static_cast<double>(size - 1);
    for (Index y = 0; y < size; ++y)
        for (Index x = 0; x < size; ++x)
            for (Index a = 0; a < n_actions; ++a) {
                const Index row = (y * size + x) * n_actions + a;
                features(row, 3 * a) = 1.0;
                features(row, 3 * a + 1) = static_cast<double>(x) * scale;
                features(row, 3 * a + 2) = static_cast<double>(y) * scale;
            }
    return features;
}

}  // namespace dualdice
