#include "onadapt/optimizers.hpp"

#include <cmath>
#include <sstream>

namespace onadapt {

namespace {

void require(bool ok, const std::string& field, const std::string& rule) {
    if (!ok) {
        throw ConfigError("adapter." + field + " " + rule);
    }
}

void symmetrize(Eigen::MatrixXd& P) {
    P = (0.5 * (P + P.transpose())).eval();
}

void require_finite(const Eigen::MatrixXd& P, const char* what) {
    if (!P.allFinite()) {
        throw NumericalError(std::string(what) + " contains non-finite entries");
    }
}

struct Gain {
    Eigen::MatrixXd K;   // q x d_out
    Eigen::MatrixXd HP;  // d_out x q
};

// K = P H^T S^-1 with S = H P H^T + sigma_r I, via K^T = S^-1 (H P) since P and S are symmetric.
Gain kalman_gain(const Eigen::MatrixXd& P, const JacobianMatrix& H, double noise, double lambda) {
    if (H.cols() != P.rows()) {
        throw ConfigError("jacobian has " + std::to_string(H.cols()) + " columns but covariance is " +
                          std::to_string(P.rows()) + "x" + std::to_string(P.cols()));
    }
    Gain g;
    g.HP = H * P;
    Eigen::MatrixXd S = g.HP * H.transpose();
    S.diagonal().array() += noise;
    symmetrize(S);

    Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() == Eigen::Success) {
        g.K = llt.solve(g.HP).transpose();
    } else {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
        const double rcond = ldlt.info() == Eigen::Success ? ldlt.rcond() : 0.0;
        if (ldlt.info() != Eigen::Success || !(rcond > 1e-14)) {
            throw SolveError(lambda, noise, rcond);
        }
        g.K = ldlt.solve(g.HP).transpose();
    }
    if (!g.K.allFinite()) {
        throw SolveError(lambda, noise, Eigen::LLT<Eigen::MatrixXd>(S).rcond());
    }
    return g;
}

void check_dims(const AdapterState& state, const JacobianMatrix& H, const Eigen::VectorXd& residual) {
    if (H.rows() != residual.size()) {
        throw ConfigError("jacobian rows do not match residual length");
    }
    if (H.cols() != state.mask.size()) {
        throw ConfigError("jacobian columns do not match the adaptable mask");
    }
}

Eigen::MatrixXd propagate_covariance(const Eigen::MatrixXd& P, const Gain& g, const MekfHyper& hyper) {
    Eigen::MatrixXd next = P - g.K * g.HP;
    if (hyper.q_outside_lambda) {
        next /= hyper.lambda;
        next.diagonal().array() += hyper.sigma_q;
    } else {
        next.diagonal().array() += hyper.sigma_q;
        next /= hyper.lambda;
    }
    return next;
}

void apply_step(AdapterState& state, const Eigen::VectorXd& delta) {
    for (Index j = 0; j < state.mask.size(); ++j) {
        state.theta[state.mask.indices()[static_cast<std::size_t>(j)]] += delta[j];
    }
}

void check_gradient(const AdapterState& state, const Eigen::VectorXd& gradient) {
    if (gradient.size() != state.mask.size()) {
        throw ConfigError("gradient length does not match the adaptable mask");
    }
}

}  // namespace

void MekfHyper::validate() const {
    require(p0 > 0.0, "p0", "must be > 0");
    require(lambda > 0.0 && lambda <= 1.0, "lambda", "must satisfy 0 < lambda <= 1");
    require(sigma_r > 0.0, "sigma_r", "must be > 0");
    require(sigma_q >= 0.0, "sigma_q", "must be >= 0");
    require(mu_v >= 0.0 && mu_v < 1.0, "mu_v", "must satisfy 0 <= mu_v < 1");
    require(mu_p >= 0.0 && mu_p < 1.0, "mu_p", "must satisfy 0 <= mu_p < 1");
}

void GradientHyper::validate() const {
    require(lr > 0.0, "lr", "must be > 0");
    require(momentum >= 0.0 && momentum < 1.0, "momentum", "must satisfy 0 <= momentum < 1");
    require(beta1 >= 0.0 && beta1 < 1.0, "beta1", "must satisfy 0 <= beta1 < 1");
    require(beta2 >= 0.0 && beta2 < 1.0, "beta2", "must satisfy 0 <= beta2 < 1");
    require(eps > 0.0, "eps", "must be > 0");
}

void AdapterConfig::validate() const {
    switch (kind) {
        case AdapterKind::mekf:
        case AdapterKind::mekf_ema:
        case AdapterKind::rls:
            mekf.validate();
            break;
        case AdapterKind::sgd:
        case AdapterKind::momentum:
        case AdapterKind::adam:
        case AdapterKind::amsgrad:
            gradient.validate();
            break;
        case AdapterKind::none:
            break;
    }
}

AdapterKind parse_adapter_kind(std::string_view key) {
    if (key == "none") return AdapterKind::none;
    if (key == "mekf") return AdapterKind::mekf;
    if (key == "mekf_ema") return AdapterKind::mekf_ema;
    if (key == "sgd") return AdapterKind::sgd;
    if (key == "momentum") return AdapterKind::momentum;
    if (key == "adam") return AdapterKind::adam;
    if (key == "amsgrad") return AdapterKind::amsgrad;
    if (key == "rls") return AdapterKind::rls;
    throw ConfigError("adapter.kind '" + std::string(key) +
                      "' is not one of none, mekf, mekf_ema, sgd, momentum, adam, amsgrad, rls");
}

std::string to_string(AdapterKind kind) {
    switch (kind) {
        case AdapterKind::none: return "none";
        case AdapterKind::mekf: return "mekf";
        case AdapterKind::mekf_ema: return "mekf_ema";
        case AdapterKind::sgd: return "sgd";
        case AdapterKind::momentum: return "momentum";
        case AdapterKind::adam: return "adam";
        case AdapterKind::amsgrad: return "amsgrad";
        case AdapterKind::rls: return "rls";
    }
    return "unknown";
}

bool AdapterState::operator==(const AdapterState& o) const {
    auto same = [](const auto& a, const auto& b) {
        return a.rows() == b.rows() && a.cols() == b.cols() && (a.size() == 0 || a == b);
    };
    return mask == o.mask && steps == o.steps && same(theta, o.theta) && same(P, o.P) && same(V, o.V) &&
           same(m1, o.m1) && same(m2, o.m2) && same(m2_max, o.m2_max);
}

Innovation innovation(const Eigen::VectorXd& observed, const Eigen::VectorXd& predicted) {
    if (observed.size() != predicted.size()) {
        throw ConfigError("observation has dimension " + std::to_string(observed.size()) +
                          ", prediction has " + std::to_string(predicted.size()));
    }
    Innovation inn;
    inn.residual = observed - predicted;
    inn.error = inn.residual.norm();
    return inn;
}

SolveError::SolveError(double lambda_, double sigma_r_, double rcond_)
    : NumericalError([&] {
          std::ostringstream os;
          os << "innovation covariance is not invertible (lambda=" << lambda_ << ", sigma_r=" << sigma_r_
             << ", rcond=" << rcond_ << ")";
          return os.str();
      }()),
      lambda(lambda_),
      sigma_r(sigma_r_),
      rcond(rcond_) {}

KalmanStep mekf_step(const AdapterState& state, const JacobianMatrix& H, const Eigen::VectorXd& residual,
                     const MekfHyper& hyper) {
    if (!(hyper.lambda > 0.0)) {
        throw ConfigError("adapter.lambda must be > 0");
    }
    check_dims(state, H, residual);
    const Gain g = kalman_gain(state.P, H, hyper.sigma_r, hyper.lambda);

    KalmanStep out{state, g.K * residual};
    apply_step(out.state, out.step);
    out.state.V = out.step;
    out.state.P = propagate_covariance(state.P, g, hyper);
    symmetrize(out.state.P);
    require_finite(out.state.P, "covariance");
    ++out.state.steps;
    return out;
}

AdapterState mekf_ema_step(const AdapterState& state, const JacobianMatrix& H, const Eigen::VectorXd& residual,
                           const MekfHyper& hyper) {
    if (!(hyper.lambda > 0.0)) {
        throw ConfigError("adapter.lambda must be > 0");
    }
    check_dims(state, H, residual);
    const Gain g = kalman_gain(state.P, H, hyper.sigma_r, hyper.lambda);

    AdapterState next = state;
    const Eigen::VectorXd raw = g.K * residual;
    next.V = hyper.mu_v * state.V + (1.0 - hyper.mu_v) * raw;
    apply_step(next, next.V);
    const Eigen::MatrixXd filtered = propagate_covariance(state.P, g, hyper);
    next.P = hyper.mu_p * state.P + (1.0 - hyper.mu_p) * filtered;
    symmetrize(next.P);
    require_finite(next.P, "covariance");
    ++next.steps;
    return next;
}

AdapterState rls_step(const AdapterState& state, const JacobianMatrix& H, const Eigen::VectorXd& residual,
                      double lambda) {
    if (!(lambda > 0.0 && lambda <= 1.0)) {
        throw ConfigError("adapter.lambda must satisfy 0 < lambda <= 1");
    }
    check_dims(state, H, residual);
    const Gain g = kalman_gain(state.P, H, lambda, lambda);
    AdapterState next = state;
    apply_step(next, g.K * residual);
    next.P = (state.P - g.K * g.HP) / lambda;
    symmetrize(next.P);
    require_finite(next.P, "covariance");
    ++next.steps;
    return next;
}

AdapterState sgd_step(const AdapterState& state, const Eigen::VectorXd& gradient, const GradientHyper& hyper) {
    check_gradient(state, gradient);
    AdapterState next = state;
    for (Index j = 0; j < state.mask.size(); ++j) {
        const Index k = state.mask.indices()[static_cast<std::size_t>(j)];
        next.theta[k] = state.theta[k] - hyper.lr * gradient[j];
    }
    ++next.steps;
    return next;
}

AdapterState momentum_step(const AdapterState& state, const Eigen::VectorXd& gradient,
                           const GradientHyper& hyper) {
    check_gradient(state, gradient);
    AdapterState next = state;
    next.V = hyper.momentum * state.V - hyper.lr * gradient;
    apply_step(next, next.V);
    ++next.steps;
    return next;
}

namespace {

AdapterState adam_like(const AdapterState& state, const Eigen::VectorXd& gradient, const GradientHyper& hyper,
                       bool amsgrad) {
    check_gradient(state, gradient);
    AdapterState next = state;
    ++next.steps;
    const double t = static_cast<double>(next.steps);
    next.m1 = hyper.beta1 * state.m1 + (1.0 - hyper.beta1) * gradient;
    next.m2 = hyper.beta2 * state.m2 + (1.0 - hyper.beta2) * gradient.cwiseAbs2();
    const double bias1 = 1.0 - std::pow(hyper.beta1, t);
    const double bias2 = 1.0 - std::pow(hyper.beta2, t);
    Eigen::ArrayXd second = next.m2.array();
    if (amsgrad) {
        next.m2_max = state.m2_max.cwiseMax(next.m2);
        second = next.m2_max.array();
    }
    const Eigen::ArrayXd denom = (second / bias2).sqrt() + hyper.eps;
    const Eigen::VectorXd delta = (-hyper.lr * (next.m1.array() / bias1) / denom).matrix();
    apply_step(next, delta);
    return next;
}

}  // namespace

AdapterState adam_step(const AdapterState& state, const Eigen::VectorXd& gradient, const GradientHyper& hyper) {
    return adam_like(state, gradient, hyper, false);
}

AdapterState amsgrad_step(const AdapterState& state, const Eigen::VectorXd& gradient,
                          const GradientHyper& hyper) {
    return adam_like(state, gradient, hyper, true);
}

Adapter::Adapter(AdapterConfig config) : config_(std::move(config)) { config_.validate(); }

AdapterState Adapter::init(const Eigen::VectorXd& theta0, const AdaptableMask& mask) const {
    if (mask.empty() && config_.kind != AdapterKind::none) {
        throw ConfigError("adaptable mask is empty");
    }
    if (!mask.empty() && mask.indices().back() >= theta0.size()) {
        throw ConfigError("adaptable mask exceeds parameter vector length");
    }
    AdapterState s;
    s.theta = theta0;
    s.mask = mask;
    const Index q = mask.size();
    s.V = Eigen::VectorXd::Zero(q);
    switch (config_.kind) {
        case AdapterKind::mekf:
        case AdapterKind::mekf_ema:
            s.P = config_.mekf.p0 * Eigen::MatrixXd::Identity(q, q);
            break;
        case AdapterKind::rls:
            s.P = (config_.mekf.lambda * config_.mekf.p0 / config_.mekf.sigma_r) * Eigen::MatrixXd::Identity(q, q);
            break;
        case AdapterKind::adam:
        case AdapterKind::amsgrad:
            s.m1 = Eigen::VectorXd::Zero(q);
            s.m2 = Eigen::VectorXd::Zero(q);
            s.m2_max = Eigen::VectorXd::Zero(q);
            break;
        default:
            break;
    }
    return s;
}

AdapterState Adapter::step(const AdapterState& state, const JacobianMatrix& H,
                           const Eigen::VectorXd& residual) const {
    switch (config_.kind) {
        case AdapterKind::none:
            return state;
        case AdapterKind::mekf:
            return mekf_step(state, H, residual, config_.mekf).state;
        case AdapterKind::mekf_ema:
            return mekf_ema_step(state, H, residual, config_.mekf);
        case AdapterKind::rls:
            return rls_step(state, H, residual, config_.mekf.lambda);
        default:
            break;
    }
    check_dims(state, H, residual);
    const Eigen::VectorXd gradient = -(H.transpose() * residual);
    switch (config_.kind) {
        case AdapterKind::sgd: return sgd_step(state, gradient, config_.gradient);
        case AdapterKind::momentum: return momentum_step(state, gradient, config_.gradient);
        case AdapterKind::adam: return adam_step(state, gradient, config_.gradient);
        case AdapterKind::amsgrad: return amsgrad_step(state, gradient, config_.gradient);
        default: break;
    }
    throw UnsupportedError("unhandled adapter kind");
}

AdapterState adapt(const Adapter& adapter, const AdapterState& state, const Model& model,
                   const InputWindow& x_prev, const Eigen::VectorXd& observed) {
    if (adapter.kind() == AdapterKind::none) {
        return state;
    }
    if (adapter.kind() == AdapterKind::rls && model.kind() != "linear") {
        throw UnsupportedError("rls adapter requires a linear model, got " + model.kind());
    }
    const Eigen::VectorXd predicted = predict_one_step(model, state.theta, x_prev);
    const Innovation inn = innovation(observed, predicted);
    const JacobianMatrix H = jacobian(model, state.theta, x_prev, state.mask);
    return adapter.step(state, H, inn.residual);
}

double asymmetry(const Eigen::MatrixXd& P) {
    if (P.size() == 0) {
        return 0.0;
    }
    return (P - P.transpose()).cwiseAbs().maxCoeff();
}

}  // namespace onadapt
