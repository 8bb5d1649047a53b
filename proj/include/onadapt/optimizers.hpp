#pragma once

#include <string>
#include <string_view>

#include "onadapt/error.hpp"
#include "onadapt/model.hpp"

namespace onadapt {

/// Hyperparameters shared by the Kalman-family adapters (and RLS, which uses p0 and lambda).
/// Measurement noise R = sigma_r I, process noise Q = sigma_q I.
struct MekfHyper {
    double p0 = 1.0;
    double lambda = 0.98;
    double sigma_r = 1.0;
    double sigma_q = 0.0;
    double mu_v = 0.0;
    double mu_p = 0.0;
    /// false: P' = (P - KHP + Q) / lambda, the default.
    /// true:  P' = (P - KHP) / lambda + Q, the textbook placement.
    bool q_outside_lambda = false;

    /// Throws ConfigError naming the offending field.
    void validate() const;
};

struct GradientHyper {
    double lr = 0.01;
    double momentum = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const;
};

enum class AdapterKind { none, mekf, mekf_ema, sgd, momentum, adam, amsgrad, rls };

AdapterKind parse_adapter_kind(std::string_view key);
std::string to_string(AdapterKind kind);

/// Optimizer-internal state. theta is the full parameter vector; only the
/// positions named by mask are ever modified.
struct AdapterState {
    Eigen::VectorXd theta;
    AdaptableMask mask;
    Eigen::MatrixXd P;       // covariance, |mask| x |mask| (Kalman family and RLS)
    Eigen::VectorXd V;       // step buffer / momentum, |mask|
    Eigen::VectorXd m1;      // first moment (Adam, Amsgrad)
    Eigen::VectorXd m2;      // second moment
    Eigen::VectorXd m2_max;  // running max of the second moment (Amsgrad)
    long steps = 0;

    Eigen::VectorXd adapted() const { return mask.gather(theta); }
    bool operator==(const AdapterState& other) const;
};

/// The one-step prediction error y - y_hat and its l2 norm.
struct Innovation {
    Eigen::VectorXd residual;
    double error = 0.0;
};

Innovation innovation(const Eigen::VectorXd& observed, const Eigen::VectorXd& predicted);

/// Raised when the innovation covariance H P H^T + sigma_r I cannot be factorized.
class SolveError : public NumericalError {
public:
    SolveError(double lambda, double sigma_r, double rcond);

    double lambda;
    double sigma_r;
    double rcond;
};

struct KalmanStep {
    AdapterState state;
    Eigen::VectorXd step;  // V_t
};

/// MEKF with forgetting factor:
///   K = P H^T (H P H^T + sigma_r I)^-1,  theta += K r,  P' = (P - K H P + sigma_q I) / lambda.
KalmanStep mekf_step(const AdapterState& state, const JacobianMatrix& H, const Eigen::VectorXd& residual,
                     const MekfHyper& hyper);

/// MEKF with EMA filtering of the step (mu_v) and of the covariance (mu_p).
AdapterState mekf_ema_step(const AdapterState& state, const JacobianMatrix& H,
                           const Eigen::VectorXd& residual, const MekfHyper& hyper);

/// Exponentially weighted recursive least squares on a linear regressor H:
///   K = P H^T (lambda I + H P H^T)^-1,  theta += K r,  P' = (P - K H P) / lambda.
/// Starting from P0 = lambda p0 / sigma_r it reproduces mekf_step with sigma_q = 0.
AdapterState rls_step(const AdapterState& state, const JacobianMatrix& H, const Eigen::VectorXd& residual,
                      double lambda);

// Gradient baselines on the loss 0.5 |r|^2, whose gradient is -H^T r.
AdapterState sgd_step(const AdapterState& state, const Eigen::VectorXd& gradient, const GradientHyper& hyper);
AdapterState momentum_step(const AdapterState& state, const Eigen::VectorXd& gradient,
                           const GradientHyper& hyper);
AdapterState adam_step(const AdapterState& state, const Eigen::VectorXd& gradient, const GradientHyper& hyper);
AdapterState amsgrad_step(const AdapterState& state, const Eigen::VectorXd& gradient,
                          const GradientHyper& hyper);

struct AdapterConfig {
    AdapterKind kind = AdapterKind::mekf;
    MekfHyper mekf;
    GradientHyper gradient;

    void validate() const;
};

/// An adapter A_P: a validated configuration plus pure step functions over AdapterState.
class Adapter {
public:
    explicit Adapter(AdapterConfig config);

    const AdapterConfig& config() const noexcept { return config_; }
    AdapterKind kind() const noexcept { return config_.kind; }

    /// Fresh state: P = p0 I (RLS: lambda p0 / sigma_r I), V and moments zero.
    AdapterState init(const Eigen::VectorXd& theta0, const AdaptableMask& mask) const;

    /// One update from a Jacobian of the one-step map and the residual y - y_hat.
    AdapterState step(const AdapterState& state, const JacobianMatrix& H, const Eigen::VectorXd& residual) const;

private:
    AdapterConfig config_;
};

/// Recomputes y_hat = f_1(theta, x_prev), linearizes there and applies one adapter step.
AdapterState adapt(const Adapter& adapter, const AdapterState& state, const Model& model,
                   const InputWindow& x_prev, const Eigen::VectorXd& observed);

/// Largest |P - P^T| entry.
double asymmetry(const Eigen::MatrixXd& P);

}  // namespace onadapt
