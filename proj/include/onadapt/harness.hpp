#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "onadapt/data.hpp"
#include "onadapt/dme.hpp"
#include "onadapt/optimizers.hpp"

namespace onadapt {

/// One stream step: what the model saw, what it predicted, how it adapted.
struct LogRecord {
    std::string trial;
    Index t = 0;
    Eigen::VectorXd observed;     // y_t
    Eigen::VectorXd one_step;     // y_hat_t = f_1(theta_{t-1}, X_{t-1}); empty on a trial's first step
    double error = 0.0;           // j_t, 0 when one_step is empty
    int epochs = 0;               // kappa_t
    OutputWindow prediction;      // Y_hat_t from the adapted theta_t
    OutputWindow truth;           // Y_t
    std::optional<Index> intent_pred;
    std::optional<int> intent_label;
    double seconds = 0.0;         // adaptation wall time

    bool adapted() const { return one_step.size() > 0; }
};

struct PredictionLog {
    std::vector<LogRecord> records;
};

struct RunOptions {
    /// Keep adapter state across trial boundaries instead of restarting from theta0.
    bool carry_state = false;
};

/// Raised when an adapter fails mid-stream; carries the step and the last good state.
class RunAborted : public NumericalError {
public:
    RunAborted(std::size_t step, AdapterState snapshot, const std::string& cause);

    std::size_t step;
    AdapterState snapshot;
};

/// Generic online adaptation: for each sample, adapt on (X_{t-1}, y_t) through
/// dme_adapt, then predict Y_t by rollout from the adapted parameters.
/// The first step of every trial has no previous prediction and is not adapted.
PredictionLog run_online_adaptation(const Model& model, const Eigen::VectorXd& theta0,
                                    const std::vector<Sample>& stream, const Adapter& adapter,
                                    const AdaptableMask& mask, EpochCriterion& criterion,
                                    const RunOptions& options = {});

/// The one-step errors j_t of every adapted step, in stream order.
std::vector<double> one_step_errors(const PredictionLog& log);

/// (1/T) sum_t (1/m) |Y_t - Y_hat_t|_2, the norm taken over the whole m x d_out window.
double mse(const PredictionLog& log);
/// Same with the squared norm.
double mse_squared(const PredictionLog& log);
/// Fraction of labelled steps whose predicted intent matches. Throws UnsupportedError without labels.
double accuracy(const PredictionLog& log);
bool has_intents(const PredictionLog& log);

struct TimeStats {
    double mean = 0.0;
    double max = 0.0;
    double total = 0.0;
};

struct RunResult {
    double mse = 0.0;
    double mse_squared = 0.0;
    double mse_std = 0.0;  // across trials
    std::optional<double> accuracy;
    std::optional<double> accuracy_std;
    Index steps = 0;
    Index trials = 0;
    TimeStats time;
    std::string config_digest;
};

RunResult summarize(const PredictionLog& log, const std::string& config_digest = {});

/// CSV columns: t,j,kappa,y_0..,yhat_0..,trial,intent_label,intent_pred.
/// j and yhat are blank on unadapted steps.
void write_log_csv(const PredictionLog& log, std::ostream& out);

}  // namespace onadapt
