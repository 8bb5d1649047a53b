#pragma once

#include "onadapt/model.hpp"

namespace onadapt {

// The model zoo. Each model is immutable; use with_params() to move to a new point.

struct LinearSpec {
    Index input_dim = 1;
    Index output_dim = 1;
    Index window = 1;
    bool bias = true;
};

/// y = W x_t + b over the most recent measurement only.
/// Blocks: "W" (output_dim x input_dim), "b" (output_dim, when bias is on).
class LinearModel final : public Model {
public:
    LinearModel(const LinearSpec& spec, std::uint64_t seed);
    LinearModel(const LinearSpec& spec, ParameterVector params, std::uint64_t seed = 0);

    static ModelPtr from_weights(const Eigen::MatrixXd& weight, const Eigen::VectorXd& bias,
                                 Index window = 1);
    static ModelPtr from_weights(const Eigen::MatrixXd& weight, Index window = 1);

    std::string kind() const override { return "linear"; }
    Index input_dim() const override { return spec_.input_dim; }
    Index output_dim() const override { return spec_.output_dim; }
    Index window() const override { return spec_.window; }
    const LinearSpec& spec() const { return spec_; }

    ModelPtr with_params(ParameterVector params) const override;
    Eigen::VectorXd forward(const Eigen::VectorXd& theta, const InputWindow& x) const override;
    Vjp backward(const Eigen::VectorXd& theta, const InputWindow& x,
                 const Eigen::VectorXd& output_grad,
                 const Eigen::VectorXd& logit_grad) const override;
    nlohmann::json architecture() const override;

private:
    LinearSpec spec_;
};

struct MlpSpec {
    Index input_dim = 1;
    Index output_dim = 1;
    Index window = 1;
    Index hidden = 8;
};

/// y = W2 tanh(W1 vec(X) + b1) + b2, where vec(X) stacks the window rows newest first.
class MlpModel final : public Model {
public:
    MlpModel(const MlpSpec& spec, std::uint64_t seed);
    MlpModel(const MlpSpec& spec, ParameterVector params, std::uint64_t seed = 0);

    std::string kind() const override { return "mlp"; }
    Index input_dim() const override { return spec_.input_dim; }
    Index output_dim() const override { return spec_.output_dim; }
    Index window() const override { return spec_.window; }
    const MlpSpec& spec() const { return spec_; }

    ModelPtr with_params(ParameterVector params) const override;
    Eigen::VectorXd forward(const Eigen::VectorXd& theta, const InputWindow& x) const override;
    Vjp backward(const Eigen::VectorXd& theta, const InputWindow& x,
                 const Eigen::VectorXd& output_grad,
                 const Eigen::VectorXd& logit_grad) const override;
    nlohmann::json architecture() const override;

private:
    MlpSpec spec_;
};

struct RecurrentSpec {
    Index input_dim = 2;
    Index output_dim = 2;
    Index window = 20;
    Index hidden = 8;             // at most 16
    Index classifier_hidden = 8;
    Index classes = 3;            // 0 disables the classifier head
};

/// Encoder-decoder-classifier at toy scale.
///
/// Encoder: a GRU cell (PyTorch gate order r, z, n) run over the window from
/// the oldest measurement to the newest, starting from h = 0.
/// Decoder: y = W_dec h + b_dec on the final hidden state.
/// Classifier: logits = W2 tanh(W1 h + b1) + b2.
///
/// Blocks: encoder.W_x (3H x d), encoder.W_h (3H x H), encoder.b_x, encoder.b_h,
/// decoder.W, decoder.b, classifier.W1, classifier.b1, classifier.W2, classifier.b2.
class RecurrentModel final : public Model {
public:
    RecurrentModel(const RecurrentSpec& spec, std::uint64_t seed);
    RecurrentModel(const RecurrentSpec& spec, ParameterVector params, std::uint64_t seed = 0);

    std::string kind() const override { return "recurrent"; }
    Index input_dim() const override { return spec_.input_dim; }
    Index output_dim() const override { return spec_.output_dim; }
    Index window() const override { return spec_.window; }
    Index num_classes() const override { return spec_.classes; }
    const RecurrentSpec& spec() const { return spec_; }

    ModelPtr with_params(ParameterVector params) const override;
    Eigen::VectorXd forward(const Eigen::VectorXd& theta, const InputWindow& x) const override;
    Eigen::VectorXd logits(const Eigen::VectorXd& theta, const InputWindow& x) const override;
    Vjp backward(const Eigen::VectorXd& theta, const InputWindow& x,
                 const Eigen::VectorXd& output_grad,
                 const Eigen::VectorXd& logit_grad) const override;
    nlohmann::json architecture() const override;

    /// Final encoder hidden state.
    Eigen::VectorXd encode(const Eigen::VectorXd& theta, const InputWindow& x) const;

private:
    RecurrentSpec spec_;
};

/// Builds a zoo model from an architecture document ({"kind": ..., dims...}).
ModelPtr make_model(const nlohmann::json& architecture, std::uint64_t seed);

/// Block-name prefixes adapted by default: the encoder for the recurrent model,
/// everything otherwise.
std::vector<std::string> default_mask_blocks(const Model& model);

}  // namespace onadapt
