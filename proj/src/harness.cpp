#include "onadapt/harness.hpp"

#include <chrono>
#include <cmath>
#include <map>

#include "onadapt/error.hpp"

namespace onadapt {

RunAborted::RunAborted(std::size_t step_, AdapterState snapshot_, const std::string& cause)
    : NumericalError("adaptation aborted at stream step " + std::to_string(step_) + ": " + cause),
      step(step_),
      snapshot(std::move(snapshot_)) {}

PredictionLog run_online_adaptation(const Model& model, const Eigen::VectorXd& theta0,
                                    const std::vector<Sample>& stream, const Adapter& adapter,
                                    const AdaptableMask& mask, EpochCriterion& criterion,
                                    const RunOptions& options) {
    PredictionLog log;
    log.records.reserve(stream.size());
    const Index d_out = model.output_dim();
    const bool classify = model.num_classes() > 0;

    AdapterState state = adapter.init(theta0, mask);
    const Sample* prev = nullptr;
    for (std::size_t i = 0; i < stream.size(); ++i) {
        const Sample& s = stream[i];
        const bool trial_start = prev == nullptr || prev->trial != s.trial || prev->t + 1 != s.t;
        if (trial_start && prev != nullptr && !options.carry_state) {
            state = adapter.init(theta0, mask);
        }

        LogRecord rec;
        rec.trial = s.trial;
        rec.t = s.t;
        rec.observed = s.x.newest().head(d_out);
        if (!trial_start) {
            const auto start = std::chrono::steady_clock::now();
            try {
                DmeStep step = dme_adapt(adapter, state, model, prev->x, rec.observed, criterion);
                rec.one_step = std::move(step.predicted);
                state = std::move(step.state);
                rec.error = step.error;
                rec.epochs = step.epochs;
            } catch (const NumericalError& e) {
                throw RunAborted(i, state, e.what());
            }
            rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        }
        rec.prediction = rollout(model, state.theta, s.x, static_cast<int>(s.y.horizon()));
        rec.truth = s.y;
        if (classify) {
            rec.intent_pred = classify_intent(model, state.theta, s.x).argmax();
        }
        rec.intent_label = s.intent;
        log.records.push_back(std::move(rec));
        prev = &s;
    }
    return log;
}

std::vector<double> one_step_errors(const PredictionLog& log) {
    std::vector<double> out;
    for (const auto& r : log.records) {
        if (r.adapted()) {
            out.push_back(r.error);
        }
    }
    return out;
}

namespace {

double window_error(const LogRecord& r, bool squared) {
    const double norm = (r.truth.steps - r.prediction.steps).norm();
    return (squared ? norm * norm : norm) / static_cast<double>(r.truth.horizon());
}

double mean_error(const PredictionLog& log, bool squared) {
    if (log.records.empty()) {
        throw ArgumentError("mse of an empty prediction log");
    }
    double total = 0.0;
    for (const auto& r : log.records) {
        total += window_error(r, squared);
    }
    return total / static_cast<double>(log.records.size());
}

double population_std(const std::vector<double>& v) {
    if (v.size() < 2) {
        return 0.0;
    }
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / static_cast<double>(v.size()));
}

}  // namespace

double mse(const PredictionLog& log) { return mean_error(log, false); }

double mse_squared(const PredictionLog& log) { return mean_error(log, true); }

bool has_intents(const PredictionLog& log) {
    for (const auto& r : log.records) {
        if (r.intent_label && r.intent_pred) {
            return true;
        }
    }
    return false;
}

double accuracy(const PredictionLog& log) {
    std::size_t labelled = 0;
    std::size_t hits = 0;
    for (const auto& r : log.records) {
        if (r.intent_label && r.intent_pred) {
            ++labelled;
            hits += static_cast<Index>(*r.intent_label) == *r.intent_pred ? 1 : 0;
        }
    }
    if (labelled == 0) {
        throw UnsupportedError("prediction log has no intent labels or predictions");
    }
    return static_cast<double>(hits) / static_cast<double>(labelled);
}

RunResult summarize(const PredictionLog& log, const std::string& config_digest) {
    RunResult res;
    res.mse = mse(log);
    res.mse_squared = mse_squared(log);
    res.steps = static_cast<Index>(log.records.size());
    res.config_digest = config_digest;

    std::map<std::string, PredictionLog> per_trial;
    std::vector<std::string> order;
    for (const auto& r : log.records) {
        if (per_trial.find(r.trial) == per_trial.end()) {
            order.push_back(r.trial);
        }
        per_trial[r.trial].records.push_back(r);
    }
    res.trials = static_cast<Index>(order.size());
    std::vector<double> trial_mse;
    std::vector<double> trial_acc;
    const bool intents = has_intents(log);
    for (const auto& id : order) {
        trial_mse.push_back(mse(per_trial[id]));
        if (intents) {
            trial_acc.push_back(accuracy(per_trial[id]));
        }
    }
    res.mse_std = population_std(trial_mse);
    if (intents) {
        res.accuracy = accuracy(log);
        res.accuracy_std = population_std(trial_acc);
    }

    std::size_t adapted = 0;
    for (const auto& r : log.records) {
        if (r.adapted()) {
            ++adapted;
            res.time.total += r.seconds;
            res.time.max = std::max(res.time.max, r.seconds);
        }
    }
    res.time.mean = adapted > 0 ? res.time.total / static_cast<double>(adapted) : 0.0;
    return res;
}

void write_log_csv(const PredictionLog& log, std::ostream& out) {
    const Index d = log.records.empty() ? 0 : log.records.front().observed.size();
    out << "t,j,kappa";
    for (Index i = 0; i < d; ++i) out << ",y_" << i;
    for (Index i = 0; i < d; ++i) out << ",yhat_" << i;
    out << ",trial,intent_label,intent_pred\n";
    for (const auto& r : log.records) {
        out << r.t << ',';
        if (r.adapted()) out << format_double(r.error);
        out << ',' << r.epochs;
        for (Index i = 0; i < d; ++i) out << ',' << format_double(r.observed[i]);
        for (Index i = 0; i < d; ++i) {
            out << ',';
            if (r.adapted()) out << format_double(r.one_step[i]);
        }
        out << ',' << r.trial << ',';
        if (r.intent_label) out << *r.intent_label;
        out << ',';
        if (r.intent_pred) out << *r.intent_pred;
        out << '\n';
    }
}

}  // namespace onadapt
