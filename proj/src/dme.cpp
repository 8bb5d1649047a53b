#include "onadapt/dme.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace onadapt {

void DmeThresholds::validate() const {
    if (!(easy_hard >= 0.0) || !(hard_anomaly >= easy_hard)) {
        throw ConfigError("dme thresholds must satisfy 0 <= xi1 <= xi2");
    }
}

CriterionKind parse_criterion_kind(std::string_view key) {
    if (key == "none") return CriterionKind::none;
    if (key == "proposed") return CriterionKind::proposed;
    if (key == "fixed") return CriterionKind::fixed;
    if (key == "random") return CriterionKind::random;
    throw ConfigError("dme.kind '" + std::string(key) + "' is not one of none, proposed, fixed, random");
}

std::string to_string(CriterionKind kind) {
    switch (kind) {
        case CriterionKind::none: return "none";
        case CriterionKind::proposed: return "proposed";
        case CriterionKind::fixed: return "fixed";
        case CriterionKind::random: return "random";
    }
    return "unknown";
}

EpochCriterion EpochCriterion::single_epoch() { return EpochCriterion(CriterionKind::none, 0); }

EpochCriterion EpochCriterion::proposed(DmeThresholds thresholds) {
    thresholds.validate();
    EpochCriterion c(CriterionKind::proposed, 0);
    c.thresholds_ = thresholds;
    return c;
}

EpochCriterion EpochCriterion::fixed(int epochs) {
    if (epochs < 0) {
        throw ConfigError("dme.k must be >= 0");
    }
    EpochCriterion c(CriterionKind::fixed, 0);
    c.fixed_ = epochs;
    return c;
}

EpochCriterion EpochCriterion::random(std::array<double, 3> probabilities, std::uint64_t seed) {
    double total = 0.0;
    for (double p : probabilities) {
        if (!(p >= 0.0)) {
            throw ConfigError("dme.p entries must be nonnegative");
        }
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-12) {
        throw ConfigError("dme.p must sum to 1");
    }
    EpochCriterion c(CriterionKind::random, seed);
    c.probabilities_ = probabilities;
    return c;
}

int EpochCriterion::epochs_for(double error) {
    switch (kind_) {
        case CriterionKind::none:
            return 1;
        case CriterionKind::fixed:
            return fixed_;
        case CriterionKind::proposed:
            if (error < thresholds_.easy_hard) {
                return 1;
            }
            return error < thresholds_.hard_anomaly ? 2 : 0;
        case CriterionKind::random: {
            const double u = rng_.uniform();
            if (u < probabilities_[0]) {
                return 1;
            }
            return u < probabilities_[0] + probabilities_[1] ? 2 : 0;
        }
    }
    return 1;
}

int epochs_for_sample(double error, EpochCriterion& criterion) {
    if (!(error >= 0.0)) {
        throw ArgumentError("one-step error must be nonnegative");
    }
    return criterion.epochs_for(error);
}

DmeStep dme_adapt(const Adapter& adapter, const AdapterState& state, const Model& model,
                  const InputWindow& x_prev, const Eigen::VectorXd& observed, EpochCriterion& criterion) {
    const Eigen::VectorXd predicted = predict_one_step(model, state.theta, x_prev);
    DmeStep out{state, 0, innovation(observed, predicted).error, predicted};
    if (!std::isfinite(out.error)) {
        throw NumericalError("one-step prediction error is not finite");
    }
    out.epochs = epochs_for_sample(out.error, criterion);
    for (int i = 0; i < out.epochs; ++i) {
        out.state = adapt(adapter, out.state, model, x_prev, observed);
    }
    return out;
}

double nearest_rank_quantile(std::span<const double> values, double q) {
    if (values.empty()) {
        throw ArgumentError("quantile of an empty error list");
    }
    if (!(q >= 0.0 && q <= 1.0)) {
        throw ArgumentError("quantile level must lie in [0, 1]");
    }
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double n = static_cast<double>(sorted.size());
    const double exact = q * n;
    double rank = std::ceil(exact);
    // q N landing a hair above an integer is rounding noise, not a new rank.
    if (rank - exact > 1.0 - 1e-9) {
        rank -= 1.0;
    }
    const auto idx = static_cast<std::size_t>(std::clamp(rank, 1.0, n)) - 1;
    return sorted[idx];
}

DmeThresholds calibrate_thresholds(std::span<const double> errors, double q1, double q2) {
    if (errors.empty()) {
        throw ArgumentError("cannot calibrate thresholds from an empty error list");
    }
    if (!(0.0 <= q1 && q1 <= q2 && q2 <= 1.0)) {
        throw ArgumentError("quantile levels must satisfy 0 <= q1 <= q2 <= 1");
    }
    return {nearest_rank_quantile(errors, q1), nearest_rank_quantile(errors, q2)};
}

}  // namespace onadapt
