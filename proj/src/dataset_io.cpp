#include "dualdice/dataset_io.hpp"

#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace dualdice {

namespace {

constexpr int kDigits = std::numeric_limits<double>::max_digits10;

std::ofstream open_for_write(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    return out;
}

std::ifstream open_for_read(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return in;
}

void expect_header(std::istream& line, const std::string& magic) {
    std::string tag, version;
    line >> tag >> version;
    if (tag != magic) throw FormatError("expected '" + magic + "' header, got '" + tag + "'");
    if (version != "v1") throw FormatError("unsupported " + magic + " version '" + version + "'");
}

}  // namespace

void write_dataset(std::ostream& out, const TransitionDataset& data) {
    out << std::setprecision(kDigits);
    out << "dice-dataset v1 " << data.num_states << ' ' << data.num_actions << ' ' << data.gamma
        << '\n';
    for (const auto& t : data.transitions) {
        out << "T " << t.state << ' ' << t.action << ' ' << t.reward << ' ' << t.next_state << '\n';
    }
    for (int s : data.initial_states) out << "I " << s << '\n';
}

TransitionDataset read_dataset(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty dataset file");
    std::istringstream header(line);
    expect_header(header, "dice-dataset");
    TransitionDataset data;
    if (!(header >> data.num_states >> data.num_actions >> data.gamma)) {
        throw FormatError("malformed dice-dataset header");
    }
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream fields(line);
        char kind = 0;
        fields >> kind;
        if (kind == 'T') {
            Transition t;
            if (!(fields >> t.state >> t.action >> t.reward >> t.next_state)) {
                throw FormatError("malformed transition on line " + std::to_string(line_no));
            }
            data.transitions.push_back(t);
        } else if (kind == 'I') {
            int s = 0;
            if (!(fields >> s)) throw FormatError("malformed initial state on line " + std::to_string(line_no));
            data.initial_states.push_back(s);
        } else {
            throw FormatError("unknown record on line " + std::to_string(line_no));
        }
    }
    data.validate();
    return data;
}

void save_dataset(const std::filesystem::path& path, const TransitionDataset& data) {
    auto out = open_for_write(path);
    write_dataset(out, data);
}

TransitionDataset load_dataset(const std::filesystem::path& path) {
    auto in = open_for_read(path);
    return read_dataset(in);
}

void write_trajectories(std::ostream& out, const TrajectoryDataset& data) {
    out << std::setprecision(kDigits);
    out << "dice-traj v1 " << data.horizon << ' ' << data.trajectories.size() << ' '
        << data.num_states << ' ' << data.num_actions << ' ' << data.gamma << '\n';
    for (const auto& tr : data.trajectories) {
        for (Index t = 0; t < data.horizon; ++t) {
            out << tr.states[t] << ' ' << tr.actions[t] << ' ' << tr.rewards[t] << ' ';
        }
        out << tr.states.back() << '\n';
    }
}

TrajectoryDataset read_trajectories(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty trajectory file");
    std::istringstream header(line);
    expect_header(header, "dice-traj");
    TrajectoryDataset data;
    std::size_t count = 0;
    if (!(header >> data.horizon >> count >> data.num_states >> data.num_actions >> data.gamma)) {
        throw FormatError("malformed dice-traj header");
    }
    data.trajectories.reserve(count);
    while (data.trajectories.size() < count && std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream fields(line);
        Trajectory tr;
        for (Index t = 0; t < data.horizon; ++t) {
            int s = 0, a = 0;
            double r = 0.0;
            if (!(fields >> s >> a >> r)) throw FormatError("truncated trajectory");
            tr.states.push_back(s);
            tr.actions.push_back(a);
            tr.rewards.push_back(r);
        }
        int last = 0;
        if (!(fields >> last)) throw FormatError("trajectory is missing its final state");
        tr.states.push_back(last);
        data.trajectories.push_back(std::move(tr));
    }
    if (data.trajectories.size() != count) throw FormatError("fewer trajectories than declared");
    data.validate();
    return data;
}

void save_trajectories(const std::filesystem::path& path, const TrajectoryDataset& data) {
    auto out = open_for_write(path);
    write_trajectories(out, data);
}

TrajectoryDataset load_trajectories(const std::filesystem::path& path) {
    auto in = open_for_read(path);
    return read_trajectories(in);
}

}  // namespace dualdice
