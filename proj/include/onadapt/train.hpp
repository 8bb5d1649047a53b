#pragma once

#include <cstdint>
#include <vector>

#include "onadapt/data.hpp"
#include "onadapt/model.hpp"

namespace onadapt {

struct TrainOptions {
    int epochs = 20;
    int batch = 128;
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;
    /// Adds softmax cross-entropy on the intent label when the model has a classifier.
    bool classifier_loss = true;
};

struct LossGradient {
    double loss = 0.0;
    Eigen::VectorXd gradient;
};

/// Mean squared rollout error (1/m) sum_k |y_hat_{t+k} - y_{t+k}|^2 over the sample's
/// horizon, plus cross-entropy on the intent label when requested. The gradient is exact:
/// it is propagated backwards through the prediction feedback of the rollout.
LossGradient sample_loss(const Model& model, const Eigen::VectorXd& theta, const Sample& sample,
                         bool classifier_loss);

struct TrainResult {
    ModelPtr model;
    std::vector<double> loss_trace;  // mean sample loss per epoch, measured during the epoch
};

/// Mini-batch Adam on the mean sample loss. Deterministic given options.seed.
/// Throws TrainingError if the loss becomes non-finite.
TrainResult offline_train(const Model& model, const std::vector<Sample>& train, const TrainOptions& options);

}  // namespace onadapt
