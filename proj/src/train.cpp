#include "onadapt/train.hpp"

#include <cmath>
#include <numeric>

#include "onadapt/error.hpp"
#include "onadapt/rng.hpp"

namespace onadapt {

LossGradient sample_loss(const Model& model, const Eigen::VectorXd& theta, const Sample& sample,
                         bool classifier_loss) {
    model.check(theta, sample.x);
    const Index m = sample.y.horizon();
    const Index d_out = model.output_dim();
    if (m < 1 || sample.y.steps.cols() != d_out) {
        throw ConfigError("sample output window does not match the model output dimension");
    }

    std::vector<InputWindow> windows;
    windows.reserve(static_cast<std::size_t>(m));
    std::vector<Eigen::VectorXd> residuals;
    residuals.reserve(static_cast<std::size_t>(m));
    windows.push_back(sample.x);
    LossGradient out;
    for (Index k = 0; k < m; ++k) {
        const Eigen::VectorXd y = model.forward(theta, windows.back());
        residuals.push_back(y - sample.y.steps.row(k).transpose());
        out.loss += residuals.back().squaredNorm() / static_cast<double>(m);
        if (k + 1 < m) {
            windows.push_back(shift_window(windows.back(), y));
        }
    }

    out.gradient = Eigen::VectorXd::Zero(theta.size());
    const Index n = sample.x.length();
    Eigen::MatrixXd carry = Eigen::MatrixXd::Zero(n, sample.x.dim());  // adjoint of windows[k+1]
    const Eigen::VectorXd no_logits;
    for (Index k = m - 1; k >= 0; --k) {
        Eigen::VectorXd dy = (2.0 / static_cast<double>(m)) * residuals[static_cast<std::size_t>(k)];
        dy += carry.row(0).head(d_out).transpose();
        Eigen::VectorXd dlogits;
        const bool with_class = k == 0 && classifier_loss && model.num_classes() > 0 && sample.intent;
        if (with_class) {
            const Eigen::VectorXd probs = softmax(model.logits(theta, sample.x)).probabilities;
            const auto label = static_cast<Index>(*sample.intent);
            if (label < 0 || label >= probs.size()) {
                throw ConfigError("intent label " + std::to_string(label) + " outside the classifier range");
            }
            out.loss -= std::log(std::max(probs[label], 1e-300));
            dlogits = probs;
            dlogits[label] -= 1.0;
        }
        const Vjp g = model.backward(theta, windows[static_cast<std::size_t>(k)], dy,
                                     with_class ? dlogits : no_logits);
        out.gradient += g.params;
        // windows[k+1] row i (i >= 1) is windows[k] row i-1; row 0 keeps the extra features.
        Eigen::MatrixXd next = g.input;
        if (n > 1) {
            next.topRows(n - 1) += carry.bottomRows(n - 1);
        }
        const Index extra = sample.x.dim() - d_out;
        if (extra > 0) {
            next.row(0).tail(extra) += carry.row(0).tail(extra);
        }
        carry = std::move(next);
    }
    return out;
}

TrainResult offline_train(const Model& model, const std::vector<Sample>& train, const TrainOptions& options) {
    if (train.empty()) {
        throw ArgumentError("offline training needs a nonempty training set");
    }
    if (options.epochs < 1 || options.batch < 1 || !(options.lr > 0.0)) {
        throw ConfigError("train.epochs, train.batch and train.lr must be positive");
    }
    Eigen::VectorXd theta = model.params().values;
    const Index P = theta.size();
    Eigen::VectorXd m1 = Eigen::VectorXd::Zero(P);
    Eigen::VectorXd m2 = Eigen::VectorXd::Zero(P);
    long step = 0;

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    TrainResult result;
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        Rng rng(mix_seed(options.seed, static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size() - 1; i > 0; --i) {
            std::swap(order[i], order[rng.below(i + 1)]);
        }
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(options.batch)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(options.batch));
            Eigen::VectorXd grad = Eigen::VectorXd::Zero(P);
            for (std::size_t i = start; i < stop; ++i) {
                const LossGradient lg = sample_loss(model, theta, train[order[i]], options.classifier_loss);
                epoch_loss += lg.loss;
                grad += lg.gradient;
            }
            grad /= static_cast<double>(stop - start);
            if (!std::isfinite(epoch_loss) || !grad.allFinite()) {
                throw TrainingError("training diverged in epoch " + std::to_string(epoch + 1));
            }
            ++step;
            m1 = options.beta1 * m1 + (1.0 - options.beta1) * grad;
            m2 = options.beta2 * m2 + (1.0 - options.beta2) * grad.cwiseAbs2();
            const double b1 = 1.0 - std::pow(options.beta1, static_cast<double>(step));
            const double b2 = 1.0 - std::pow(options.beta2, static_cast<double>(step));
            theta.array() -= options.lr * (m1.array() / b1) / ((m2.array() / b2).sqrt() + options.eps);
        }
        result.loss_trace.push_back(epoch_loss / static_cast<double>(train.size()));
    }
    ParameterVector p = model.params();
    p.values = theta;
    result.model = model.with_params(std::move(p));
    return result;
}

}  // namespace onadapt
