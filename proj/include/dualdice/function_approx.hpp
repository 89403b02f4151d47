#pragma once

#include "dualdice/mdp.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace dualdice {

enum class ApproxKind { kTabular, kLinear, kMlp };

std::string to_string(ApproxKind kind);
ApproxKind parse_approx_kind(const std::string& name);

/**
 * Scalar function of a (state, action) pair with a flat parameter vector.
 *
 * - tabular: one parameter per pair.
 * - linear:  features(pair) . theta.
 * - mlp:     tanh hidden layers over features(pair), linear scalar output.
 *
 * Linear and MLP models read their inputs from a per-pair feature table
 * (row `s * |A| + a`), so they can be serialized without code.
 */
class FunctionApprox {
   public:
    static FunctionApprox tabular(Index num_states, Index num_actions);
    static FunctionApprox linear(Matrix features, Index num_states, Index num_actions);
    /// Weights uniform in +-1/sqrt(fan_in), zero biases.
    static FunctionApprox mlp(Matrix features, Index num_states, Index num_actions,
                              std::vector<Index> hidden, std::uint64_t seed);

    /// Rebuilds a function from serialized parts; `hidden` is ignored unless MLP.
    static FunctionApprox from_parts(ApproxKind kind, Index num_states, Index num_actions,
                                     Matrix features, std::vector<Index> hidden, Vector params);

    ApproxKind kind() const { return kind_; }
    Index num_states() const { return num_states_; }
    Index num_actions() const { return num_actions_; }
    Index num_params() const { return params_.size(); }
    Vector& params() { return params_; }
    const Vector& params() const { return params_; }
    const Matrix& features() const { return features_; }
    /// Input, hidden and output widths (MLP only).
    const std::vector<Index>& layer_sizes() const { return layers_; }

    double evaluate(StateAction pair) const;
    Vector evaluate(std::span<const StateAction> pairs) const;

    /// grad += sum_i output_grad(i) * d f(pairs[i]) / d params.
    void backward(std::span<const StateAction> pairs, const Vector& output_grad,
                  Eigen::Ref<Vector> grad) const;

    /// Values on every pair, flattened.
    Vector table() const;

   private:
    FunctionApprox(ApproxKind kind, Index num_states, Index num_actions);

    /// Distinct feature rows of a batch and, per batch entry, its slot among them.
    struct UniquePairs {
        std::vector<Index> rows;
        std::vector<Index> slot;
    };

    Index pair_row(StateAction pair) const;
    UniquePairs unique_rows(std::span<const StateAction> pairs) const;
    Matrix gather_rows(const std::vector<Index>& rows) const;
    /// Activations per layer for a batch (column per sample).
    std::vector<Matrix> mlp_forward(const Matrix& inputs) const;

    ApproxKind kind_;
    Index num_states_;
    Index num_actions_;
    Matrix features_;
    std::vector<Index> layers_;
    Vector params_;
};

/// nu and zeta of the saddle-point problem; zeta carries the corrections.
struct CorrectionModel {
    FunctionApprox nu;
    FunctionApprox zeta;
};

CorrectionModel make_tabular_model(Index num_states, Index num_actions);
CorrectionModel make_linear_model(const Matrix& features, Index num_states, Index num_actions);
CorrectionModel make_mlp_model(const Matrix& features, Index num_states, Index num_actions,
                               const std::vector<Index>& hidden, std::uint64_t seed);

// Model files:
//   dice-model v1 tabular <S> <A>
//   dice-model v1 linear <S> <A> <k>
//   dice-model v1 mlp <S> <A> <k> <h1> ... <hn>
// followed by whitespace-separated values: the (S*A) x k feature table
// (row-major, linear/mlp only), then nu parameters, then zeta parameters.
void write_model(std::ostream& out, const CorrectionModel& model);
CorrectionModel read_model(std::istream& in);
void save_model(const std::filesystem::path& path, const CorrectionModel& model);
CorrectionModel load_model(const std::filesystem::path& path);

}  // namespace dualdice
