#include "onadapt/model.hpp"

#include <algorithm>
#include <cmath>

#include "onadapt/error.hpp"

namespace onadapt {

bool ParameterVector::consistent() const {
    Index offset = 0;
    for (const auto& b : layout) {
        if (b.offset != offset || b.length < 0) {
            return false;
        }
        offset += b.length;
    }
    return offset == values.size();
}

const Block& ParameterVector::block(std::string_view name) const {
    for (const auto& b : layout) {
        if (b.name == name) {
            return b;
        }
    }
    throw ArgumentError("no parameter block named '" + std::string(name) + "'");
}

AdaptableMask::AdaptableMask(std::vector<Index> indices, Index bound) : indices_(std::move(indices)) {
    for (std::size_t i = 0; i < indices_.size(); ++i) {
        if (indices_[i] < 0 || indices_[i] >= bound) {
            throw ArgumentError("mask index " + std::to_string(indices_[i]) + " out of bounds [0, " +
                                std::to_string(bound) + ")");
        }
        if (i > 0 && indices_[i] <= indices_[i - 1]) {
            throw ArgumentError("mask indices must be strictly increasing");
        }
    }
}

AdaptableMask AdaptableMask::all(Index size) {
    std::vector<Index> idx(static_cast<std::size_t>(size));
    for (Index i = 0; i < size; ++i) {
        idx[static_cast<std::size_t>(i)] = i;
    }
    return AdaptableMask(std::move(idx), size);
}

AdaptableMask AdaptableMask::from_blocks(const ParameterVector& params,
                                         const std::vector<std::string>& prefixes) {
    std::vector<Index> idx;
    for (const auto& b : params.layout) {
        const bool selected = std::any_of(prefixes.begin(), prefixes.end(), [&](const std::string& p) {
            return p == "all" || b.name.rfind(p, 0) == 0;
        });
        if (!selected) {
            continue;
        }
        for (Index i = 0; i < b.length; ++i) {
            idx.push_back(b.offset + i);
        }
    }
    if (idx.empty()) {
        throw ConfigError("mask selects no parameters");
    }
    return AdaptableMask(std::move(idx), params.values.size());
}

Eigen::VectorXd AdaptableMask::gather(const Eigen::VectorXd& full) const {
    Eigen::VectorXd out(size());
    for (Index j = 0; j < size(); ++j) {
        out[j] = full[indices_[static_cast<std::size_t>(j)]];
    }
    return out;
}

void AdaptableMask::scatter(const Eigen::VectorXd& subset, Eigen::VectorXd& full) const {
    for (Index j = 0; j < size(); ++j) {
        full[indices_[static_cast<std::size_t>(j)]] = subset[j];
    }
}

Eigen::MatrixXd AdaptableMask::select_columns(const Eigen::MatrixXd& full) const {
    Eigen::MatrixXd out(full.rows(), size());
    for (Index j = 0; j < size(); ++j) {
        out.col(j) = full.col(indices_[static_cast<std::size_t>(j)]);
    }
    return out;
}

Index IntentDistribution::argmax() const {
    Index best = 0;
    probabilities.maxCoeff(&best);
    return best;
}

Eigen::VectorXd Model::logits(const Eigen::VectorXd&, const InputWindow&) const {
    throw UnsupportedError(kind() + " model has no classifier head");
}

Vjp Model::backward(const Eigen::VectorXd&, const InputWindow&, const Eigen::VectorXd&,
                    const Eigen::VectorXd&) const {
    throw UnsupportedError(kind() + " model does not provide exact derivatives");
}

void Model::check(const Eigen::VectorXd& theta, const InputWindow& x) const {
    if (theta.size() != params_.values.size()) {
        throw ConfigError("parameter vector has length " + std::to_string(theta.size()) +
                          ", model expects " + std::to_string(params_.values.size()));
    }
    if (x.length() != window() || x.dim() != input_dim()) {
        throw ConfigError("input window is " + std::to_string(x.length()) + "x" +
                          std::to_string(x.dim()) + ", model expects " + std::to_string(window()) +
                          "x" + std::to_string(input_dim()));
    }
}

ParameterVector flatten_params(const Model& model) { return model.params(); }

ModelPtr unflatten_params(const Model& model, const ParameterVector& params) {
    return model.with_params(params);
}

Eigen::VectorXd predict_one_step(const Model& model, const Eigen::VectorXd& theta,
                                 const InputWindow& x) {
    model.check(theta, x);
    return model.forward(theta, x);
}

InputWindow shift_window(const InputWindow& x, const Eigen::VectorXd& prediction) {
    const Index n = x.length();
    const Index d = x.dim();
    if (prediction.size() > d) {
        throw ConfigError("prediction dimension exceeds measurement dimension; rollout feedback impossible");
    }
    InputWindow next;
    next.steps.resize(n, d);
    if (n > 1) {
        next.steps.bottomRows(n - 1) = x.steps.topRows(n - 1);
    }
    next.steps.row(0) = x.steps.row(0);
    next.steps.row(0).head(prediction.size()) = prediction.transpose();
    return next;
}

OutputWindow rollout(const Model& model, const Eigen::VectorXd& theta, const InputWindow& x,
                     int horizon) {
    if (horizon < 1) {
        throw ArgumentError("rollout horizon must be at least 1, got " + std::to_string(horizon));
    }
    model.check(theta, x);
    OutputWindow out;
    out.steps.resize(horizon, model.output_dim());
    InputWindow current = x;
    for (int k = 0; k < horizon; ++k) {
        const Eigen::VectorXd y = model.forward(theta, current);
        out.steps.row(k) = y.transpose();
        if (k + 1 < horizon) {
            current = shift_window(current, y);
        }
    }
    return out;
}

JacobianMatrix jacobian(const Model& model, const Eigen::VectorXd& theta, const InputWindow& x,
                        const AdaptableMask& mask) {
    if (!model.differentiable()) {
        throw UnsupportedError(model.kind() + " model does not provide exact derivatives");
    }
    model.check(theta, x);
    const Index d_out = model.output_dim();
    JacobianMatrix jac(d_out, mask.size());
    const Eigen::VectorXd no_logits;
    for (Index i = 0; i < d_out; ++i) {
        const Eigen::VectorXd seed = Eigen::VectorXd::Unit(d_out, i);
        const Vjp g = model.backward(theta, x, seed, no_logits);
        for (Index j = 0; j < mask.size(); ++j) {
            jac(i, j) = g.params[mask.indices()[static_cast<std::size_t>(j)]];
        }
    }
    if (!jac.allFinite()) {
        throw NumericalError("jacobian contains non-finite entries");
    }
    return jac;
}

JacobianMatrix fd_jacobian(const Model& model, const Eigen::VectorXd& theta, const InputWindow& x,
                           const AdaptableMask& mask, double h) {
    if (!(h > 0.0)) {
        throw ArgumentError("finite-difference step must be positive");
    }
    model.check(theta, x);
    JacobianMatrix jac(model.output_dim(), mask.size());
    Eigen::VectorXd probe = theta;
    for (Index j = 0; j < mask.size(); ++j) {
        const Index k = mask.indices()[static_cast<std::size_t>(j)];
        probe[k] = theta[k] + h;
        const Eigen::VectorXd up = model.forward(probe, x);
        probe[k] = theta[k] - h;
        const Eigen::VectorXd down = model.forward(probe, x);
        probe[k] = theta[k];
        jac.col(j) = (up - down) / (2.0 * h);
    }
    return jac;
}

IntentDistribution softmax(const Eigen::VectorXd& logits) {
    IntentDistribution out;
    const double top = logits.maxCoeff();
    out.probabilities = (logits.array() - top).exp().matrix();
    out.probabilities /= out.probabilities.sum();
    return out;
}

IntentDistribution classify_intent(const Model& model, const Eigen::VectorXd& theta,
                                   const InputWindow& x) {
    if (model.num_classes() == 0) {
        throw UnsupportedError(model.kind() + " model has no classifier head");
    }
    model.check(theta, x);
    return softmax(model.logits(theta, x));
}

nlohmann::json model_to_json(const Model& model) {
    nlohmann::json layout = nlohmann::json::array();
    for (const auto& b : model.params().layout) {
        layout.push_back({{"name", b.name}, {"offset", b.offset}, {"length", b.length}});
    }
    const auto& v = model.params().values;
    return {
        {"format", "onadapt-model"},
        {"version", 1},
        {"architecture", model.architecture()},
        {"seed", model.seed()},
        {"layout", layout},
        {"values", std::vector<double>(v.data(), v.data() + v.size())},
    };
}

}  // namespace onadapt
