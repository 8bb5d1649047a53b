#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <span>
#include <string>

#include "onadapt/optimizers.hpp"
#include "onadapt/rng.hpp"

namespace onadapt {

/// Error thresholds separating easy (j < easy_hard), hard (easy_hard <= j < hard_anomaly)
/// and anomaly (j >= hard_anomaly) samples.
struct DmeThresholds {
    double easy_hard = 0.0;
    double hard_anomaly = std::numeric_limits<double>::infinity();

    void validate() const;
};

enum class CriterionKind { none, proposed, fixed, random };

CriterionKind parse_criterion_kind(std::string_view key);
std::string to_string(CriterionKind kind);

/// Decides how many adapter epochs each incoming sample gets.
/// The random variant owns a private seeded stream, so copies diverge independently.
class EpochCriterion {
public:
    /// Plain single-epoch adaptation.
    static EpochCriterion single_epoch();
    static EpochCriterion proposed(DmeThresholds thresholds);
    static EpochCriterion fixed(int epochs);
    /// probabilities = (p_easy, p_hard, p_anomaly) mapping to 1, 2 and 0 epochs.
    static EpochCriterion random(std::array<double, 3> probabilities, std::uint64_t seed);

    CriterionKind kind() const noexcept { return kind_; }
    const DmeThresholds& thresholds() const noexcept { return thresholds_; }

    int epochs_for(double error);

private:
    EpochCriterion(CriterionKind kind, std::uint64_t seed) : kind_(kind), rng_(seed) {}

    CriterionKind kind_;
    DmeThresholds thresholds_;
    int fixed_ = 1;
    std::array<double, 3> probabilities_{1.0, 0.0, 0.0};
    Rng rng_;
};

int epochs_for_sample(double error, EpochCriterion& criterion);

struct DmeStep {
    AdapterState state;
    int epochs = 0;
    double error = 0.0;  // j_t from the pre-update prediction
    Eigen::VectorXd predicted;  // y_hat_t from the pre-update parameters
};

/// Dynamic multi-epoch update: measures j_t = |y - f_1(theta, x_prev)| first, then
/// reuses (x_prev, y) for kappa_t full adapter steps, relinearizing each time.
/// kappa_t = 0 returns the input state untouched. A non-finite j_t raises NumericalError.
DmeStep dme_adapt(const Adapter& adapter, const AdapterState& state, const Model& model,
                  const InputWindow& x_prev, const Eigen::VectorXd& observed, EpochCriterion& criterion);

/// Nearest-rank quantiles: the ceil(q N)-th smallest error (clamped to [1, N]).
DmeThresholds calibrate_thresholds(std::span<const double> errors, double q1, double q2);

/// Nearest-rank quantile of an unsorted sample.
double nearest_rank_quantile(std::span<const double> values, double q);

}  // namespace onadapt
