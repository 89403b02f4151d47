#include "dualdice/function_approx.hpp"

#include "dualdice/dataset_io.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace dualdice {

namespace {

Index mlp_param_count(const std::vector<Index>& layers) {
    Index total = 0;
    for (std::size_t l = 0; l + 1 < layers.size(); ++l) total += layers[l + 1] * (layers[l] + 1);
    return total;
}

void check_features(const Matrix& features, Index num_states, Index num_actions) {
    if (features.rows() != num_states * num_actions || features.cols() < 1) {
        throw InvalidArgument("feature table must have one row per (state, action) pair");
    }
    if (!features.allFinite()) throw InvalidArgument("feature table has non-finite entries");
}

}  // namespace

std::string to_string(ApproxKind kind) {
    switch (kind) {
        case ApproxKind::kTabular: return "tabular";
        case ApproxKind::kLinear: return "linear";
        case ApproxKind::kMlp: return "mlp";
    }
    return "unknown";
}

ApproxKind parse_approx_kind(const std::string& name) {
    if (name == "tabular") return ApproxKind::kTabular;
    if (name == "linear") return ApproxKind::kLinear;
    if (name == "mlp") return ApproxKind::kMlp;
    throw InvalidArgument("unknown parametrization '" + name + "' (tabular, linear, mlp)");
}

FunctionApprox::FunctionApprox(ApproxKind kind, Index num_states, Index num_actions)
    : kind_(kind), num_states_(num_states), num_actions_(num_actions) {
    if (num_states < 1 || num_actions < 1) {
        throw InvalidArgument("FunctionApprox: dimensions must be positive");
    }
}

FunctionApprox FunctionApprox::tabular(Index num_states, Index num_actions) {
    FunctionApprox f(ApproxKind::kTabular, num_states, num_actions);
    f.params_ = Vector::Zero(num_states * num_actions);
    return f;
}

FunctionApprox FunctionApprox::linear(Matrix features, Index num_states, Index num_actions) {
    check_features(features, num_states, num_actions);
    FunctionApprox f(ApproxKind::kLinear, num_states, num_actions);
    f.params_ = Vector::Zero(features.cols());
    f.features_ = std::move(features);
    return f;
}

FunctionApprox FunctionApprox::mlp(Matrix features, Index num_states, Index num_actions,
                                   std::vector<Index> hidden, std::uint64_t seed) {
    check_features(features, num_states, num_actions);
    FunctionApprox f(ApproxKind::kMlp, num_states, num_actions);
    f.layers_.push_back(features.cols());
    for (Index h : hidden) {
        if (h < 1) throw InvalidArgument("FunctionApprox: hidden widths must be positive");
        f.layers_.push_back(h);
    }
    f.layers_.push_back(1);
    f.features_ = std::move(features);
    f.params_ = Vector::Zero(mlp_param_count(f.layers_));
    Rng rng(seed);
    Index offset = 0;
    for (std::size_t l = 0; l + 1 < f.layers_.size(); ++l) {
        const Index fan_in = f.layers_[l];
        const Index n_weights = f.layers_[l + 1] * fan_in;
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> init(-bound, bound);
        for (Index i = 0; i < n_weights; ++i) f.params_(offset + i) = init(rng);
        offset += n_weights + f.layers_[l + 1];
    }
    return f;
}

FunctionApprox FunctionApprox::from_parts(ApproxKind kind, Index num_states, Index num_actions,
                                          Matrix features, std::vector<Index> hidden,
                                          Vector params) {
    FunctionApprox f = [&] {
        switch (kind) {
            case ApproxKind::kTabular: return tabular(num_states, num_actions);
            case ApproxKind::kLinear: return linear(std::move(features), num_states, num_actions);
            case ApproxKind::kMlp: return mlp(std::move(features), num_states, num_actions, std::move(hidden), 0);
        }
        throw InvalidArgument("FunctionApprox: unknown kind");
    }();
    if (params.size() != f.params_.size()) {
        throw InvalidArgument("FunctionApprox: expected " + std::to_string(f.params_.size()) +
                              " parameters, got " + std::to_string(params.size()));
    }
    f.params_ = std::move(params);
    return f;
}

Index FunctionApprox::pair_row(StateAction pair) const {
    if (pair.state < 0 || pair.state >= num_states_ || pair.action < 0 || pair.action >= num_actions_) {
        throw InvalidArgument("FunctionApprox: pair out of range");
    }
    return pair.state * num_actions_ + pair.action;
}

FunctionApprox::UniquePairs FunctionApprox::unique_rows(std::span<const StateAction> pairs) const {
    UniquePairs out;
    out.slot.resize(pairs.size());
    std::vector<Index> seen(static_cast<std::size_t>(num_states_ * num_actions_), -1);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const Index row = pair_row(pairs[i]);
        Index& slot = seen[static_cast<std::size_t>(row)];
        if (slot < 0) {
            slot = static_cast<Index>(out.rows.size());
            out.rows.push_back(row);
        }
        out.slot[i] = slot;
    }
    return out;
}

Matrix FunctionApprox::gather_rows(const std::vector<Index>& rows) const {
    Matrix inputs(features_.cols(), static_cast<Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        inputs.col(static_cast<Index>(i)) = features_.row(rows[i]).transpose();
    }
    return inputs;
}

std::vector<Matrix> FunctionApprox::mlp_forward(const Matrix& inputs) const {
    std::vector<Matrix> activations;
    activations.reserve(layers_.size());
    activations.push_back(inputs);
    Index offset = 0;
    const std::size_t n_layers = layers_.size() - 1;
    for (std::size_t l = 0; l < n_layers; ++l) {
        const Index in = layers_[l];
        const Index out = layers_[l + 1];
        Eigen::Map<const Matrix> weights(params_.data() + offset, out, in);
        Eigen::Map<const Vector> bias(params_.data() + offset + out * in, out);
        offset += out * (in + 1);
        Matrix z = weights * activations.back();
        z.colwise() += bias;
        if (l + 1 < n_layers) z = z.array().tanh().matrix();
        activations.push_back(std::move(z));
    }
    return activations;
}

double FunctionApprox::evaluate(StateAction pair) const {
    return evaluate(std::span<const StateAction>(&pair, 1))(0);
}

Vector FunctionApprox::evaluate(std::span<const StateAction> pairs) const {
    const auto n = static_cast<Index>(pairs.size());
    switch (kind_) {
        case ApproxKind::kTabular: {
            Vector out(n);
            for (Index i = 0; i < n; ++i) out(i) = params_(pair_row(pairs[static_cast<std::size_t>(i)]));
            return out;
        }
        case ApproxKind::kLinear: {
            Vector out(n);
            for (Index i = 0; i < n; ++i) {
                out(i) = features_.row(pair_row(pairs[static_cast<std::size_t>(i)])).dot(params_);
            }
            return out;
        }
        case ApproxKind::kMlp: {
            // Evaluate each distinct pair once; batches revisit pairs heavily.
            const UniquePairs unique = unique_rows(pairs);
            const Matrix out = mlp_forward(gather_rows(unique.rows)).back();
            Vector values(n);
            for (Index i = 0; i < n; ++i) values(i) = out(0, unique.slot[static_cast<std::size_t>(i)]);
            return values;
        }
    }
    return {};
}

void FunctionApprox::backward(std::span<const StateAction> pairs, const Vector& output_grad,
                              Eigen::Ref<Vector> grad) const {
    if (output_grad.size() != static_cast<Index>(pairs.size()) || grad.size() != params_.size()) {
        throw InvalidArgument("FunctionApprox::backward: size mismatch");
    }
    switch (kind_) {
        case ApproxKind::kTabular:
            for (std::size_t i = 0; i < pairs.size(); ++i) {
                grad(pair_row(pairs[i])) += output_grad(static_cast<Index>(i));
            }
            return;
        case ApproxKind::kLinear:
            for (std::size_t i = 0; i < pairs.size(); ++i) {
                grad += output_grad(static_cast<Index>(i)) * features_.row(pair_row(pairs[i])).transpose();
            }
            return;
        case ApproxKind::kMlp: {
            const UniquePairs unique = unique_rows(pairs);
            const std::vector<Matrix> acts = mlp_forward(gather_rows(unique.rows));
            const std::size_t n_layers = layers_.size() - 1;
            // Parameter offsets per layer.
            std::vector<Index> offsets(n_layers);
            Index offset = 0;
            for (std::size_t l = 0; l < n_layers; ++l) {
                offsets[l] = offset;
                offset += layers_[l + 1] * (layers_[l] + 1);
            }
            Matrix delta = Matrix::Zero(1, static_cast<Index>(unique.rows.size()));
            for (std::size_t i = 0; i < pairs.size(); ++i) {
                delta(0, unique.slot[i]) += output_grad(static_cast<Index>(i));
            }
            for (std::size_t l = n_layers; l-- > 0;) {
                const Index in = layers_[l];
                const Index out = layers_[l + 1];
                Eigen::Map<const Matrix> weights(params_.data() + offsets[l], out, in);
                Eigen::Map<Matrix> grad_w(grad.data() + offsets[l], out, in);
                Eigen::Map<Vector> grad_b(grad.data() + offsets[l] + out * in, out);
                grad_w.noalias() += delta * acts[l].transpose();
                grad_b += delta.rowwise().sum();
                if (l == 0) break;
                Matrix upstream = weights.transpose() * delta;
                // acts[l] = tanh(z_l); d tanh = 1 - tanh^2.
                delta = (upstream.array() * (1.0 - acts[l].array().square())).matrix();
            }
            return;
        }
    }
}

Vector FunctionApprox::table() const {
    std::vector<StateAction> pairs;
    pairs.reserve(static_cast<std::size_t>(num_states_ * num_actions_));
    for (int s = 0; s < num_states_; ++s)
        for (int a = 0; a < num_actions_; ++a) pairs.push_back({s, a});
    return evaluate(pairs);
}

CorrectionModel make_tabular_model(Index num_states, Index num_actions) {
    return {FunctionApprox::tabular(num_states, num_actions),
            FunctionApprox::tabular(num_states, num_actions)};
}

CorrectionModel make_linear_model(const Matrix& features, Index num_states, Index num_actions) {
    return {FunctionApprox::linear(features, num_states, num_actions),
            FunctionApprox::linear(features, num_states, num_actions)};
}

CorrectionModel make_mlp_model(const Matrix& features, Index num_states, Index num_actions,
                               const std::vector<Index>& hidden, std::uint64_t seed) {
    return {FunctionApprox::mlp(features, num_states, num_actions, hidden, seed),
            FunctionApprox::mlp(features, num_states, num_actions, hidden, seed + 1)};
}

void write_model(std::ostream& out, const CorrectionModel& model) {
    const FunctionApprox& nu = model.nu;
    if (nu.kind() != model.zeta.kind() || nu.num_params() != model.zeta.num_params()) {
        throw InvalidArgument("write_model: nu and zeta must share a parametrization");
    }
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    out << "dice-model v1 " << to_string(nu.kind()) << ' ' << nu.num_states() << ' '
        << nu.num_actions();
    if (nu.kind() != ApproxKind::kTabular) out << ' ' << nu.features().cols();
    if (nu.kind() == ApproxKind::kMlp) {
        const auto& layers = nu.layer_sizes();
        for (std::size_t l = 1; l + 1 < layers.size(); ++l) out << ' ' << layers[l];
    }
    out << '\n';
    if (nu.kind() != ApproxKind::kTabular) {
        const Matrix& f = nu.features();
        for (Index r = 0; r < f.rows(); ++r) {
            for (Index c = 0; c < f.cols(); ++c) out << (c ? " " : "") << f(r, c);
            out << '\n';
        }
    }
    for (const FunctionApprox* fn : {&model.nu, &model.zeta}) {
        const Vector& p = fn->params();
        for (Index i = 0; i < p.size(); ++i) out << (i ? " " : "") << p(i);
        out << '\n';
    }
}

CorrectionModel read_model(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty model file");
    std::istringstream header(line);
    std::string tag, version, kind_name;
    header >> tag >> version >> kind_name;
    if (tag != "dice-model") throw FormatError("expected 'dice-model' header");
    if (version != "v1") throw FormatError("unsupported dice-model version '" + version + "'");
    const ApproxKind kind = parse_approx_kind(kind_name);
    Index n_states = 0, n_actions = 0, n_features = 0;
    if (!(header >> n_states >> n_actions)) throw FormatError("malformed dice-model header");
    std::vector<Index> hidden;
    if (kind != ApproxKind::kTabular && !(header >> n_features)) {
        throw FormatError("dice-model header is missing the feature width");
    }
    for (Index h = 0; header >> h;) hidden.push_back(h);

    auto read_values = [&](Index count) {
        Vector v(count);
        for (Index i = 0; i < count; ++i)
            if (!(in >> v(i))) throw FormatError("dice-model file is truncated");
        return v;
    };
    Matrix features;
    if (kind != ApproxKind::kTabular) {
        const Vector flat = read_values(n_states * n_actions * n_features);
        features = flat.reshaped<Eigen::RowMajor>(n_states * n_actions, n_features);
    }
    Index n_params = n_states * n_actions;
    if (kind == ApproxKind::kLinear) n_params = n_features;
    if (kind == ApproxKind::kMlp) {
        std::vector<Index> layers{n_features};
        layers.insert(layers.end(), hidden.begin(), hidden.end());
        layers.push_back(1);
        n_params = mlp_param_count(layers);
    }
    const Vector nu = read_values(n_params);
    const Vector zeta = read_values(n_params);
    return {FunctionApprox::from_parts(kind, n_states, n_actions, features, hidden, nu),
            FunctionApprox::from_parts(kind, n_states, n_actions, features, hidden, zeta)};
}

void save_model(const std::filesystem::path& path, const CorrectionModel& model) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    write_model(out, model);
}

CorrectionModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return read_model(in);
}

}  // namespace dualdice
