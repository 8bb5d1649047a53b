#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "helpers.hpp"
#include "onadapt/bench.hpp"
#include "onadapt/models.hpp"

using namespace onadapt;
using nlohmann::json;

namespace {

LogRecord record(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& pred, const std::string& trial = "a") {
    LogRecord r;
    r.trial = trial;
    r.truth.steps = truth;
    r.prediction.steps = pred;
    return r;
}

// Small benchmark used for matrix tests: 10 short trials, two seeds.
ExperimentConfig small_config(json cells) {
    json doc = {{"dataset", {{"generator", {{"trials", 10}, {"length", 120},
                                             {"shift", {{"time", 60}, {"A_delta", {{0, 0}, {-0.1, 0}}}}}}}}},
                {"train", {{"epochs", 5}}},
                {"bench", {{"seeds", {0, 1}}, {"cells", cells}}}};
    return parse_config(doc);
}

const ExperimentConfig& default_cfg() {
    static const ExperimentConfig cfg = parse_config(default_config());
    return cfg;
}

const Prepared& prepared_seed0() {
    static const Prepared p = prepare(default_cfg(), 0);
    return p;
}

std::vector<Sample> first_trials(const std::vector<Sample>& stream, std::size_t count) {
    std::vector<Sample> out;
    std::vector<std::string> seen;
    for (const auto& s : stream) {
        if (std::find(seen.begin(), seen.end(), s.trial) == seen.end()) {
            if (seen.size() == count) break;
            seen.push_back(s.trial);
        }
        out.push_back(s);
    }
    return out;
}

}  // namespace

TEST(Metrics, MseHandExample) {
    PredictionLog log;
    log.records.push_back(record(Eigen::MatrixXd::Ones(4, 1), Eigen::MatrixXd::Zero(4, 1)));
    EXPECT_NEAR(mse(log), 0.5, 1e-12);
    EXPECT_NEAR(mse_squared(log), 1.0, 1e-12);
}

TEST(Metrics, MsePerfectAndHomogeneous) {
    Rng rng(1);
    PredictionLog log, doubled, perfect;
    for (int i = 0; i < 20; ++i) {
        Eigen::MatrixXd truth(3, 2), err(3, 2);
        for (Index k = 0; k < 6; ++k) {
            truth.data()[k] = rng.normal();
            err.data()[k] = rng.normal();
        }
        log.records.push_back(record(truth, truth + err));
        doubled.records.push_back(record(truth, truth + 2.0 * err));
        perfect.records.push_back(record(truth, truth));
    }
    EXPECT_EQ(mse(perfect), 0.0);
    EXPECT_NEAR(mse(doubled), 2.0 * mse(log), 1e-12);
    EXPECT_NEAR(mse_squared(doubled), 4.0 * mse_squared(log), 1e-12);
    EXPECT_THROW(mse(PredictionLog{}), ArgumentError);
}

TEST(Metrics, AccuracyHandCount) {
    PredictionLog log;
    const int labels[] = {0, 1, 2, 1, 0, 2, 2};
    const Index preds[] = {0, 1, 1, 1, 2, 2, 0};
    for (int i = 0; i < 7; ++i) {
        LogRecord r = record(Eigen::MatrixXd::Zero(1, 1), Eigen::MatrixXd::Zero(1, 1));
        r.intent_label = labels[i];
        r.intent_pred = preds[i];
        log.records.push_back(r);
    }
    LogRecord unlabelled = record(Eigen::MatrixXd::Zero(1, 1), Eigen::MatrixXd::Zero(1, 1));
    unlabelled.intent_pred = 0;
    log.records.push_back(unlabelled);
    EXPECT_DOUBLE_EQ(accuracy(log), 4.0 / 7.0);

    PredictionLog none;
    none.records.push_back(record(Eigen::MatrixXd::Zero(1, 1), Eigen::MatrixXd::Zero(1, 1)));
    EXPECT_FALSE(has_intents(none));
    EXPECT_THROW(accuracy(none), UnsupportedError);
}

TEST(Metrics, UniformPredictorNearOneThird) {
    Rng rng(2);
    PredictionLog log;
    const IntentDistribution uniform = softmax(Eigen::VectorXd::Zero(3));
    for (int i = 0; i < 30000; ++i) {
        LogRecord r = record(Eigen::MatrixXd::Zero(1, 1), Eigen::MatrixXd::Zero(1, 1));
        r.intent_label = static_cast<int>(rng.below(3));
        r.intent_pred = uniform.argmax();
        log.records.push_back(r);
    }
    EXPECT_NEAR(accuracy(log), 1.0 / 3.0, 0.01);
}

TEST(Metrics, AccuracyInvariantToLogitScale) {
    Rng rng(3);
    PredictionLog a, b;
    for (int i = 0; i < 200; ++i) {
        const Eigen::VectorXd logits = testutil::random_vector(rng, 3);
        LogRecord r = record(Eigen::MatrixXd::Zero(1, 1), Eigen::MatrixXd::Zero(1, 1));
        r.intent_label = static_cast<int>(rng.below(3));
        r.intent_pred = softmax(logits).argmax();
        a.records.push_back(r);
        r.intent_pred = softmax(7.5 * logits).argmax();
        b.records.push_back(r);
    }
    EXPECT_EQ(accuracy(a), accuracy(b));
}

TEST(Metrics, SummarizePerTrialSpread) {
    PredictionLog log;
    log.records.push_back(record(Eigen::MatrixXd::Ones(1, 1), Eigen::MatrixXd::Zero(1, 1), "a"));
    log.records.push_back(record(Eigen::MatrixXd::Ones(1, 1), Eigen::MatrixXd::Zero(1, 1), "a"));
    log.records.push_back(record(Eigen::MatrixXd::Constant(1, 1, 3.0), Eigen::MatrixXd::Zero(1, 1), "b"));
    const RunResult r = summarize(log, "abc");
    EXPECT_DOUBLE_EQ(r.mse, 5.0 / 3.0);
    EXPECT_DOUBLE_EQ(r.mse_squared, 11.0 / 3.0);
    EXPECT_DOUBLE_EQ(r.mse_std, 1.0);  // trial means 1 and 3
    EXPECT_EQ(r.trials, 2);
    EXPECT_EQ(r.steps, 3);
    EXPECT_FALSE(r.accuracy);
    EXPECT_EQ(r.config_digest, "abc");
}

TEST(OnlineRun, NoneAdapterEqualsFrozenModel) {
    const Prepared& p = prepared_seed0();
    const auto stream = first_trials(p.test, 1);
    const Adapter none(adapter_for(default_cfg(), AdapterKind::none));
    EpochCriterion crit = EpochCriterion::single_epoch();
    const PredictionLog log = run_online_adaptation(*p.model, p.model->params().values, stream, none, p.mask, crit);
    ASSERT_EQ(log.records.size(), stream.size());
    double frozen = 0.0;
    for (std::size_t i = 0; i < stream.size(); ++i) {
        const OutputWindow y = rollout(*p.model, p.model->params().values, stream[i].x,
                                       static_cast<int>(stream[i].y.horizon()));
        ASSERT_TRUE(testutil::bitwise_equal(log.records[i].prediction.steps, y.steps));
        frozen += (y.steps - stream[i].y.steps).norm() / static_cast<double>(stream[i].y.horizon());
    }
    EXPECT_DOUBLE_EQ(mse(log), frozen / static_cast<double>(stream.size()));
}

TEST(OnlineRun, TrialStartsAreNotAdapted) {
    const Prepared& p = prepared_seed0();
    const auto stream = first_trials(p.test, 2);
    const Adapter mekf(adapter_for(default_cfg(), AdapterKind::mekf));
    EpochCriterion crit = EpochCriterion::single_epoch();
    const PredictionLog log = run_online_adaptation(*p.model, p.model->params().values, stream, mekf, p.mask, crit);
    std::size_t starts = 0;
    for (std::size_t i = 0; i < log.records.size(); ++i) {
        const bool start = i == 0 || stream[i].trial != stream[i - 1].trial;
        EXPECT_EQ(log.records[i].adapted(), !start) << i;
        if (start) {
            ++starts;
            EXPECT_EQ(log.records[i].epochs, 0);
            // a fresh trial restarts from theta0
            const OutputWindow y = rollout(*p.model, p.model->params().values, stream[i].x,
                                           static_cast<int>(stream[i].y.horizon()));
            EXPECT_TRUE(testutil::bitwise_equal(log.records[i].prediction.steps, y.steps));
        }
    }
    EXPECT_EQ(starts, 2u);
    EXPECT_EQ(one_step_errors(log).size(), stream.size() - 2);
}

TEST(OnlineRun, AdaptThenPredictAndStoredErrors) {
    const Prepared& p = prepared_seed0();
    const auto stream = first_trials(p.test, 1);
    const Adapter adapter(adapter_for(default_cfg(), AdapterKind::mekf_ema));
    EpochCriterion crit = EpochCriterion::fixed(2);
    const PredictionLog log =
        run_online_adaptation(*p.model, p.model->params().values, stream, adapter, p.mask, crit);

    AdapterState state = adapter.init(p.model->params().values, p.mask);
    const Index d_out = p.model->output_dim();
    for (std::size_t i = 0; i < stream.size(); ++i) {
        const LogRecord& r = log.records[i];
        if (i > 0) {
            const Eigen::VectorXd y = stream[i].x.newest().head(d_out);
            const Eigen::VectorXd yhat = predict_one_step(*p.model, state.theta, stream[i - 1].x);
            ASSERT_TRUE(testutil::bitwise_equal(r.one_step, yhat));
            ASSERT_EQ(r.error, (r.observed - r.one_step).norm());
            state = adapt(adapter, state, *p.model, stream[i - 1].x, y);
            state = adapt(adapter, state, *p.model, stream[i - 1].x, y);
        }
        const OutputWindow expect = rollout(*p.model, state.theta, stream[i].x, static_cast<int>(stream[i].y.horizon()));
        ASSERT_TRUE(testutil::bitwise_equal(r.prediction.steps, expect.steps)) << i;
    }
}

TEST(OnlineRun, CarryStateAcrossTrials) {
    const Prepared& p = prepared_seed0();
    const auto stream = first_trials(p.test, 2);
    const Adapter mekf(adapter_for(default_cfg(), AdapterKind::mekf));
    EpochCriterion c1 = EpochCriterion::single_epoch(), c2 = EpochCriterion::single_epoch();
    const auto reset = run_online_adaptation(*p.model, p.model->params().values, stream, mekf, p.mask, c1);
    const auto carry = run_online_adaptation(*p.model, p.model->params().values, stream, mekf, p.mask, c2,
                                             RunOptions{true});
    std::size_t boundary = 1;
    while (stream[boundary].trial == stream[0].trial) ++boundary;
    for (std::size_t i = 0; i < boundary; ++i) {
        ASSERT_TRUE(testutil::bitwise_equal(reset.records[i].prediction.steps, carry.records[i].prediction.steps));
    }
    EXPECT_FALSE(carry.records[boundary].adapted());
    EXPECT_FALSE(testutil::bitwise_equal(reset.records[boundary].prediction.steps,
                                         carry.records[boundary].prediction.steps));
}

TEST(OnlineRun, NumericalFailureAbortsWithStep) {
    const ModelPtr model = LinearModel::from_weights(Eigen::MatrixXd::Ones(1, 1));
    std::vector<Sample> stream;
    for (int t = 0; t < 5; ++t) {
        Sample s;
        s.trial = "a";
        s.t = t;
        s.x = testutil::window_of({{t == 2 ? std::numeric_limits<double>::quiet_NaN() : 1.0}});
        s.y.steps = Eigen::MatrixXd::Ones(1, 1);
        stream.push_back(s);
    }
    const Adapter mekf(AdapterConfig{AdapterKind::mekf, {}, {}});
    EpochCriterion crit = EpochCriterion::single_epoch();
    try {
        run_online_adaptation(*model, model->params().values, stream, mekf, AdaptableMask::all(1), crit);
        FAIL() << "expected RunAborted";
    } catch (const RunAborted& e) {
        EXPECT_EQ(e.step, 2u);
        EXPECT_EQ(e.snapshot.steps, 1);
        EXPECT_TRUE(e.snapshot.theta.allFinite());
    }
}

TEST(OnlineRun, RecoversAfterCoefficientShift) {
    // Pinned on the default benchmark: after the stiffness shift the 10-step mean one-step
    // error is back under twice its pre-shift mean within 50 steps, on every test trial.
    const ExperimentConfig& cfg = default_cfg();
    const Index shift = cfg.generator.shift->time;
    for (std::uint64_t seed : {0u, 1u, 2u, 3u}) {
        const Prepared p = seed == 0 ? prepared_seed0() : prepare(cfg, seed);
        const Adapter mekf(adapter_for(cfg, AdapterKind::mekf));
        EpochCriterion crit = EpochCriterion::single_epoch();
        const auto log = run_online_adaptation(*p.model, p.model->params().values, p.test, mekf, p.mask, crit);
        std::map<std::string, std::vector<std::pair<Index, double>>> trials;
        for (const auto& r : log.records) {
            if (r.adapted()) trials[r.trial].push_back({r.t, r.error});
        }
        for (const auto& [id, errs] : trials) {
            double pre = 0.0;
            int count = 0;
            for (const auto& [t, e] : errs) {
                if (t >= shift - 100 && t < shift) {
                    pre += e;
                    ++count;
                }
            }
            ASSERT_GT(count, 0);
            pre /= count;
            Index recovered = -1;
            for (std::size_t i = 0; i + 10 <= errs.size() && recovered < 0; ++i) {
                if (errs[i].first < shift) continue;
                double mean = 0.0;
                for (std::size_t k = 0; k < 10; ++k) mean += errs[i + k].second / 10.0;
                if (mean < 2.0 * pre) recovered = errs[i].first - shift;
            }
            EXPECT_GE(recovered, 0) << "seed " << seed << " trial " << id;
            EXPECT_LE(recovered, 50) << "seed " << seed << " trial " << id;
        }
    }
}

TEST(OnlineRun, LogCsvLayout) {
    PredictionLog log;
    LogRecord a = record(Eigen::MatrixXd::Zero(1, 2), Eigen::MatrixXd::Zero(1, 2), "x");
    a.observed = Eigen::Vector2d(1.0, 2.0);
    a.intent_label = 1;
    a.intent_pred = 2;
    LogRecord b = a;
    b.t = 1;
    b.one_step = Eigen::Vector2d(0.5, 2.0);
    b.error = 0.5;
    b.epochs = 2;
    log.records = {a, b};
    std::ostringstream out;
    write_log_csv(log, out);
    EXPECT_EQ(out.str(),
              "t,j,kappa,y_0,y_1,yhat_0,yhat_1,trial,intent_label,intent_pred\n"
              "0,,0,1,2,,,x,1,2\n"
              "1,0.5,2,1,2,0.5,2,x,1,2\n");
}

TEST(Bench, ParseCells) {
    const ExperimentConfig& cfg = default_cfg();
    const CellSpec v = parse_cell("mekf_ema_v", cfg);
    EXPECT_EQ(v.adapter.kind, AdapterKind::mekf_ema);
    EXPECT_EQ(v.adapter.mekf.mu_p, 0.0);
    EXPECT_EQ(v.adapter.mekf.mu_v, cfg.adapter.mekf.mu_v);
    const CellSpec pp = parse_cell("mekf_ema_p+dme", cfg);
    EXPECT_EQ(pp.adapter.mekf.mu_v, 0.0);
    EXPECT_EQ(pp.criterion, CriterionKind::proposed);
    EXPECT_EQ(parse_cell("mekf+random", cfg).criterion, CriterionKind::random);
    EXPECT_EQ(parse_cell("mekf+fixed", cfg).criterion, CriterionKind::fixed);
    EXPECT_EQ(parse_cell("sgd", cfg).criterion, CriterionKind::none);
    EXPECT_EQ(parse_cell("sgd", cfg).adapter.gradient.lr, cfg.sgd_lr);
    EXPECT_EQ(parse_cell("adam", cfg).adapter.gradient.lr, cfg.adam_lr);
    EXPECT_EQ(parse_cell("amsgrad+dme", cfg).adapter.gradient.lr, cfg.adam_lr);
    EXPECT_THROW(parse_cell("lbfgs+dme", cfg), ConfigError);
    EXPECT_THROW(parse_cell("mekf+sometimes", cfg), ConfigError);
}

TEST(Bench, Describe) {
    const Stat s = describe({10.0, 1.0, 3.0, 2.0});
    EXPECT_DOUBLE_EQ(s.mean, 4.0);
    EXPECT_DOUBLE_EQ(s.median, 2.5);
    EXPECT_DOUBLE_EQ(s.std, std::sqrt((36.0 + 9.0 + 1.0 + 4.0) / 4.0));
    EXPECT_DOUBLE_EQ(describe({5.0, 1.0, 3.0}).median, 3.0);
}

TEST(Bench, CalibrationUsesValidationQuantiles) {
    const ExperimentConfig& cfg = default_cfg();
    const Prepared& p = prepared_seed0();
    const Adapter mekf(adapter_for(cfg, AdapterKind::mekf));
    const Calibration c = calibrate(cfg, mekf, p);
    ASSERT_FALSE(c.errors.empty());
    EXPECT_EQ(c.thresholds.easy_hard, nearest_rank_quantile(c.errors, cfg.dme.q1));
    EXPECT_EQ(c.thresholds.hard_anomaly, nearest_rank_quantile(c.errors, cfg.dme.q2));
    EXPECT_LE(c.thresholds.easy_hard, c.thresholds.hard_anomaly);

    ExperimentConfig open = cfg;
    open.dme.no_anomaly = true;
    EXPECT_TRUE(std::isinf(calibrate(open, mekf, p).thresholds.hard_anomaly));
}

TEST(Bench, MatrixEnumeratesTwelveCells) {
    const json cells = {"none", "sgd", "adam", "amsgrad", "mekf", "mekf_ema",
                        "none+dme", "sgd+dme", "adam+dme", "amsgrad+dme", "mekf+dme", "mekf_ema+dme"};
    const ExperimentConfig cfg = small_config(cells);
    const MatrixResult r = run_matrix(cfg);
    ASSERT_EQ(r.cells.size(), 12u);
    for (const auto& c : r.cells) {
        EXPECT_EQ(c.runs.size(), 2u) << c.spec.name;
        EXPECT_EQ(c.failures, 0u) << c.spec.name;
        ASSERT_TRUE(c.mse) << c.spec.name;
        EXPECT_GE(c.mse->mean, 0.0);
        for (const auto& run : c.runs) {
            ASSERT_TRUE(run.result);
            EXPECT_EQ(run.thresholds.has_value(), c.spec.criterion == CriterionKind::proposed);
        }
    }
    const std::string tables = comparison_tables(results_json(r));
    EXPECT_NE(tables.find("Comparison of optimizers"), std::string::npos);
    EXPECT_NE(tables.find("DME criteria"), std::string::npos);
}

TEST(Bench, MatrixDeterministicAndOrderInvariant) {
    const json forward = {"none", "mekf", "mekf_ema+dme", "mekf+random", "sgd+dme"};
    const json backward = {"sgd+dme", "mekf+random", "mekf_ema+dme", "mekf", "none"};
    const ExperimentConfig a = small_config(forward);
    const json ra = results_json(run_matrix(a));
    EXPECT_EQ(ra.dump(), results_json(run_matrix(a, {}, 2)).dump());

    const json rb = results_json(run_matrix(small_config(backward)));
    std::map<std::string, std::string> by_name;
    for (const auto& c : rb.at("cells")) by_name[c.at("name")] = c.dump();
    for (const auto& c : ra.at("cells")) EXPECT_EQ(c.dump(), by_name.at(c.at("name"))) << c.at("name");
}

TEST(Bench, FailingRunIsRecordedAndMatrixContinues) {
    json doc = {{"dataset", {{"generator", {{"trials", 6}, {"length", 80}}}}},
                {"model", {{"kind", "mlp"}, {"n", 4}, {"m", 3}, {"hidden", 4}}},
                {"train", {{"epochs", 1}}},
                {"bench", {{"seeds", {0}}, {"cells", {"rls", "mekf"}}}}};
    const MatrixResult r = run_matrix(parse_config(doc));
    ASSERT_EQ(r.cells.size(), 2u);
    EXPECT_EQ(r.cells[0].failures, 1u);
    EXPECT_FALSE(r.cells[0].mse);
    EXPECT_NE(r.cells[0].runs[0].error.find("linear"), std::string::npos);
    EXPECT_EQ(r.cells[1].failures, 0u);
    EXPECT_TRUE(r.cells[1].mse);
    const json doc_out = results_json(r);
    EXPECT_FALSE(doc_out.at("cells")[0].at("runs")[0].at("error").is_null());
}
