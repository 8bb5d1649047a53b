#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace onadapt {

using Eigen::Index;

/// A named contiguous slice of the flat parameter vector.
struct Block {
    std::string name;
    Index offset = 0;
    Index length = 0;

    bool operator==(const Block&) const = default;
};

/// Flat model parameters plus the layout that maps them back onto model blocks.
/// Matrices are stored column-major inside their block.
struct ParameterVector {
    Eigen::VectorXd values;
    std::vector<Block> layout;

    /// Blocks tile `values` exactly, in order, without gaps.
    bool consistent() const;
    const Block& block(std::string_view name) const;
    bool same_layout(const ParameterVector& other) const { return layout == other.layout; }
};

/// Sorted, duplicate-free positions into ParameterVector::values selected for adaptation.
class AdaptableMask {
public:
    AdaptableMask() = default;
    /// Throws ArgumentError unless `indices` is strictly increasing and inside [0, bound).
    AdaptableMask(std::vector<Index> indices, Index bound);

    static AdaptableMask all(Index size);
    /// Every parameter belonging to a block whose name starts with one of `prefixes`.
    static AdaptableMask from_blocks(const ParameterVector& params,
                                     const std::vector<std::string>& prefixes);

    const std::vector<Index>& indices() const noexcept { return indices_; }
    Index size() const noexcept { return static_cast<Index>(indices_.size()); }
    bool empty() const noexcept { return indices_.empty(); }

    Eigen::VectorXd gather(const Eigen::VectorXd& full) const;
    void scatter(const Eigen::VectorXd& subset, Eigen::VectorXd& full) const;
    Eigen::MatrixXd select_columns(const Eigen::MatrixXd& full) const;

    bool operator==(const AdaptableMask&) const = default;

private:
    std::vector<Index> indices_;
};

/// n past measurements of dimension d. Row 0 is x_t, row n-1 is x_{t-n+1}.
struct InputWindow {
    Eigen::MatrixXd steps;

    Index length() const { return steps.rows(); }
    Index dim() const { return steps.cols(); }
    Eigen::VectorXd newest() const { return steps.row(0).transpose(); }
};

/// m predicted (or observed) future outputs. Row k is the value at t+k+1.
struct OutputWindow {
    Eigen::MatrixXd steps;

    Index horizon() const { return steps.rows(); }
};

struct IntentDistribution {
    Eigen::VectorXd probabilities;

    Index argmax() const;
};

using JacobianMatrix = Eigen::MatrixXd;

/// Vector-Jacobian product of the one-step map (and classifier head) at a point.
struct Vjp {
    Eigen::VectorXd params;  // d(loss)/d(theta), full length
    Eigen::MatrixXd input;   // d(loss)/d(X), same shape as InputWindow::steps
};

/// A differentiable one-step predictor y_{t+1} = f_1(theta, X_t).
///
/// A model object carries its architecture and one parameter vector. All
/// evaluation entry points take theta explicitly so adapters can evaluate at
/// points other than the stored parameters; the object itself never changes.
class Model {
public:
    virtual ~Model() = default;

    virtual std::string kind() const = 0;
    virtual Index input_dim() const = 0;
    virtual Index output_dim() const = 0;
    virtual Index window() const = 0;
    virtual Index num_classes() const { return 0; }
    virtual bool differentiable() const { return true; }

    const ParameterVector& params() const noexcept { return params_; }
    std::uint64_t seed() const noexcept { return seed_; }

    /// Same architecture, different parameters. Throws ConfigError on layout mismatch.
    virtual std::shared_ptr<const Model> with_params(ParameterVector params) const = 0;

    virtual Eigen::VectorXd forward(const Eigen::VectorXd& theta, const InputWindow& x) const = 0;
    virtual Eigen::VectorXd logits(const Eigen::VectorXd& theta, const InputWindow& x) const;

    /// Pulls `output_grad` (d_out) and `logit_grad` (num_classes, or empty) back
    /// through the one-step map and classifier head.
    virtual Vjp backward(const Eigen::VectorXd& theta, const InputWindow& x,
                         const Eigen::VectorXd& output_grad,
                         const Eigen::VectorXd& logit_grad) const;

    /// Architecture fields for serialization (kind and dimensions, no values).
    virtual nlohmann::json architecture() const = 0;

    /// Throws ConfigError if theta or x does not fit this model.
    void check(const Eigen::VectorXd& theta, const InputWindow& x) const;

protected:
    Model(ParameterVector params, std::uint64_t seed) : params_(std::move(params)), seed_(seed) {}

    ParameterVector params_;
    std::uint64_t seed_ = 0;
};

using ModelPtr = std::shared_ptr<const Model>;

ParameterVector flatten_params(const Model& model);
ModelPtr unflatten_params(const Model& model, const ParameterVector& params);

Eigen::VectorXd predict_one_step(const Model& model, const Eigen::VectorXd& theta,
                                 const InputWindow& x);
inline Eigen::VectorXd predict_one_step(const Model& model, const ParameterVector& theta,
                                        const InputWindow& x) {
    return predict_one_step(model, theta.values, x);
}

/// The window after feeding `prediction` back as the newest measurement.
/// Features beyond prediction.size() keep their last observed value.
InputWindow shift_window(const InputWindow& x, const Eigen::VectorXd& prediction);

OutputWindow rollout(const Model& model, const Eigen::VectorXd& theta, const InputWindow& x,
                     int horizon);

/// Exact d(f_1)/d(theta) restricted to `mask` columns. One backward pass per output row.
JacobianMatrix jacobian(const Model& model, const Eigen::VectorXd& theta, const InputWindow& x,
                        const AdaptableMask& mask);

/// Central differences, column j = (f(theta + h e_j) - f(theta - h e_j)) / 2h.
JacobianMatrix fd_jacobian(const Model& model, const Eigen::VectorXd& theta,
                           const InputWindow& x, const AdaptableMask& mask, double h);

IntentDistribution softmax(const Eigen::VectorXd& logits);
IntentDistribution classify_intent(const Model& model, const Eigen::VectorXd& theta,
                                   const InputWindow& x);

nlohmann::json model_to_json(const Model& model);
/// Rebuilds a zoo model from model_to_json output.
ModelPtr model_from_json(const nlohmann::json& doc);

}  // namespace onadapt
