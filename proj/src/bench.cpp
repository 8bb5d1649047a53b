#include "onadapt/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <sstream>
#include <thread>

#include "onadapt/error.hpp"
#include "onadapt/models.hpp"
#include "onadapt/rng.hpp"
#include "onadapt/train.hpp"

namespace onadapt {

using nlohmann::json;

CellSpec parse_cell(const std::string& name, const ExperimentConfig& config) {
    CellSpec cell;
    cell.name = name;
    const auto plus = name.find('+');
    const std::string head = name.substr(0, plus);
    const std::string tail = plus == std::string::npos ? "none" : name.substr(plus + 1);

    if (head == "mekf_ema_v") {
        cell.adapter = adapter_for(config, AdapterKind::mekf_ema);
        cell.adapter.mekf.mu_p = 0.0;
    } else if (head == "mekf_ema_p") {
        cell.adapter = adapter_for(config, AdapterKind::mekf_ema);
        cell.adapter.mekf.mu_v = 0.0;
    } else {
        try {
            cell.adapter = adapter_for(config, parse_adapter_kind(head));
        } catch (const ConfigError&) {
            throw ConfigError("config field 'bench.cells': unknown adapter '" + head + "' in cell '" + name + "'");
        }
    }
    if (tail == "dme") {
        cell.criterion = CriterionKind::proposed;
    } else if (tail == "fixed") {
        cell.criterion = CriterionKind::fixed;
    } else if (tail == "random") {
        cell.criterion = CriterionKind::random;
    } else if (tail == "none") {
        cell.criterion = CriterionKind::none;
    } else {
        throw ConfigError("config field 'bench.cells': unknown criterion '" + tail + "' in cell '" + name + "'");
    }
    cell.adapter.validate();
    return cell;
}

std::vector<Trajectory> load_dataset(const ExperimentConfig& config, std::uint64_t seed) {
    if (config.csv) {
        auto data = read_csv(*config.csv);
        if (data.empty()) {
            throw ConfigError("dataset.csv holds no trajectories");
        }
        return data;
    }
    DriftConfig g = config.generator;
    g.seed = mix_seed(g.seed, seed);
    return gen_drifting_series(g);
}

json model_architecture(const ExperimentConfig& config, const std::vector<Trajectory>& data) {
    const auto& m = config.model;
    const Index d = data.empty() ? config.generator.dim() : data.front().dim();
    const Index out = m.output_dim.value_or(d);
    if (out > d) {
        throw ConfigError("model.output_dim must not exceed the measurement dimension");
    }
    json a = {{"kind", m.kind}, {"input_dim", d}, {"output_dim", out}, {"window", m.n}};
    if (m.kind == "linear") {
        a["bias"] = m.bias;
    } else {
        a["hidden"] = m.hidden;
    }
    if (m.kind == "recurrent") {
        Index classes = 0;
        if (m.classes) {
            classes = *m.classes;
        } else {
            int top = -1;
            if (config.csv) {
                for (const auto& t : data) {
                    for (int label : t.intents) top = std::max(top, label);
                }
            } else {
                for (const auto& r : config.generator.regimes) top = std::max(top, r.intent);
            }
            classes = top >= 1 ? top + 1 : 0;
        }
        a["classifier_hidden"] = m.classifier_hidden;
        a["classes"] = classes;
    }
    return a;
}

AdaptableMask model_mask(const ExperimentConfig& config, const Model& model) {
    const auto prefixes = config.model.mask.value_or(default_mask_blocks(model));
    return AdaptableMask::from_blocks(model.params(), prefixes);
}

Prepared prepare(const ExperimentConfig& config, std::uint64_t seed, ModelPtr pretrained) {
    Prepared p;
    p.seed = seed;
    const auto data = load_dataset(config, seed);
    p.data = split(data, config.split, mix_seed(seed, 1));

    const auto& m = config.model;
    const json arch = model_architecture(config, data);
    const Index out = arch.at("output_dim").get<Index>();
    for (const auto* part : {&p.data.train, &p.data.val, &p.data.test}) {
        for (const auto& t : *part) {
            if (t.length() <= m.n + m.m) {
                throw ConfigError("trajectory '" + t.id + "' is shorter than model.n + model.m + 1");
            }
        }
    }
    const auto all_train = windowize(p.data.train, m.n, m.m, out);
    for (std::size_t i = 0; i < all_train.size(); i += static_cast<std::size_t>(config.train_stride)) {
        p.train.push_back(all_train[i]);
    }
    p.val = windowize(p.data.val, m.n, m.m, out);
    p.test = windowize(p.data.test, m.n, m.m, out);

    if (pretrained) {
        p.model = std::move(pretrained);
    } else {
        const ModelPtr init = make_model(arch, mix_seed(seed, 2));
        TrainOptions opts = config.train;
        opts.seed = mix_seed(seed, 3);
        auto trained = offline_train(*init, p.train, opts);
        p.model = std::move(trained.model);
        p.loss_trace = std::move(trained.loss_trace);
    }
    p.mask = model_mask(config, *p.model);
    return p;
}

Calibration calibrate(const ExperimentConfig& config, const Adapter& adapter, const Prepared& prepared) {
    if (prepared.val.empty()) {
        throw ConfigError("calibration needs a nonempty validation split (run.split)");
    }
    AdapterConfig pass_config = adapter.config();
    if (config.dme.calibration == CalibrationPass::frozen) {
        pass_config.kind = AdapterKind::none;
    }
    const Adapter pass(pass_config);
    auto criterion = EpochCriterion::single_epoch();
    RunOptions opts;
    opts.carry_state = config.carry_state;
    const auto log = run_online_adaptation(*prepared.model, prepared.model->params().values, prepared.val, pass,
                                           prepared.mask, criterion, opts);
    Calibration c;
    c.errors = one_step_errors(log);
    c.thresholds = calibrate_thresholds(c.errors, config.dme.q1, config.dme.q2);
    if (config.dme.no_anomaly) {
        c.thresholds.hard_anomaly = std::numeric_limits<double>::infinity();
    }
    return c;
}

EpochCriterion make_criterion(const ExperimentConfig& config, CriterionKind kind, const Adapter& adapter,
                              const Prepared& prepared, std::optional<DmeThresholds>* thresholds) {
    switch (kind) {
        case CriterionKind::none:
            return EpochCriterion::single_epoch();
        case CriterionKind::fixed:
            return EpochCriterion::fixed(config.dme.fixed_epochs);
        case CriterionKind::random:
            return EpochCriterion::random(config.dme.probabilities, mix_seed(config.dme.seed, prepared.seed));
        case CriterionKind::proposed: {
            const auto c = calibrate(config, adapter, prepared);
            if (thresholds) *thresholds = c.thresholds;
            return EpochCriterion::proposed(c.thresholds);
        }
    }
    throw ConfigError("unknown criterion");
}

CellRun run_cell(const ExperimentConfig& config, const CellSpec& cell, const Prepared& prepared) {
    CellRun run;
    run.seed = prepared.seed;
    try {
        const Adapter adapter(cell.adapter);
        auto criterion = make_criterion(config, cell.criterion, adapter, prepared, &run.thresholds);
        RunOptions opts;
        opts.carry_state = config.carry_state;
        const auto log = run_online_adaptation(*prepared.model, prepared.model->params().values, prepared.test,
                                               adapter, prepared.mask, criterion, opts);
        run.result = summarize(log, config_digest(config));
    } catch (const std::exception& e) {
        run.error = e.what();
    }
    return run;
}

Stat describe(const std::vector<double>& values) {
    Stat s;
    if (values.empty()) return s;
    const double n = static_cast<double>(values.size());
    for (double v : values) s.mean += v;
    s.mean /= n;
    for (double v : values) s.std += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(s.std / n);
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t mid = sorted.size() / 2;
    s.median = sorted.size() % 2 == 1 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
    return s;
}

namespace {

// Runs task(i) for i in [0, count) on up to `jobs` threads.
template <typename Task>
void parallel_for(std::size_t count, int jobs, Task task) {
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) task(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) task(i);
        });
    }
    for (auto& t : pool) t.join();
}

json stat_json(const std::optional<Stat>& s) {
    if (!s) return nullptr;
    return {{"mean", s->mean}, {"std", s->std}, {"median", s->median}};
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

MatrixResult run_matrix(const ExperimentConfig& config, const std::vector<std::string>& only, int jobs) {
    std::vector<CellSpec> cells;
    for (const auto& name : config.bench_cells) {
        if (only.empty() || std::find(only.begin(), only.end(), name) != only.end()) {
            cells.push_back(parse_cell(name, config));
        }
    }
    for (const auto& name : only) {
        if (std::none_of(cells.begin(), cells.end(), [&](const CellSpec& c) { return c.name == name; })) {
            // Not in the configured matrix, but a well-formed cell name still runs.
            cells.push_back(parse_cell(name, config));
        }
    }

    MatrixResult result;
    result.config_digest = config_digest(config);
    result.seeds = config.bench_seeds;
    const std::size_t n_seeds = config.bench_seeds.size();

    std::vector<std::optional<Prepared>> prepared(n_seeds);
    std::vector<std::string> prepare_errors(n_seeds);
    result.prepare_seconds.assign(n_seeds, 0.0);
    parallel_for(n_seeds, jobs, [&](std::size_t i) {
        const auto start = std::chrono::steady_clock::now();
        try {
            prepared[i] = prepare(config, config.bench_seeds[i]);
        } catch (const std::exception& e) {
            prepare_errors[i] = e.what();
        }
        result.prepare_seconds[i] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    });

    result.cells.resize(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
        result.cells[c].spec = cells[c];
        result.cells[c].runs.resize(n_seeds);
    }
    parallel_for(cells.size() * n_seeds, jobs, [&](std::size_t k) {
        const std::size_t c = k / n_seeds;
        const std::size_t s = k % n_seeds;
        CellRun& run = result.cells[c].runs[s];
        if (!prepared[s]) {
            run.seed = config.bench_seeds[s];
            run.error = "preparation failed: " + prepare_errors[s];
            return;
        }
        run = run_cell(config, cells[c], *prepared[s]);
    });

    for (auto& cell : result.cells) {
        std::vector<double> mse, mse2, acc;
        for (const auto& run : cell.runs) {
            if (!run.result) {
                ++cell.failures;
                continue;
            }
            mse.push_back(run.result->mse);
            mse2.push_back(run.result->mse_squared);
            if (run.result->accuracy) acc.push_back(*run.result->accuracy);
        }
        if (!mse.empty()) {
            cell.mse = describe(mse);
            cell.mse_squared = describe(mse2);
        }
        if (!acc.empty()) cell.accuracy = describe(acc);
    }
    return result;
}

json run_result_json(const RunResult& r) {
    return {{"mse", r.mse},
            {"mse_squared", r.mse_squared},
            {"mse_std", r.mse_std},
            {"accuracy", optional_number(r.accuracy)},
            {"accuracy_std", optional_number(r.accuracy_std)},
            {"steps", r.steps},
            {"trials", r.trials},
            {"config_digest", r.config_digest}};
}

json results_json(const MatrixResult& result) {
    json cells = json::array();
    for (const auto& cell : result.cells) {
        json runs = json::array();
        for (const auto& run : cell.runs) {
            json r = {{"seed", run.seed}};
            if (run.result) {
                r["mse"] = run.result->mse;
                r["mse_squared"] = run.result->mse_squared;
                r["mse_std"] = run.result->mse_std;
                r["accuracy"] = optional_number(run.result->accuracy);
                r["accuracy_std"] = optional_number(run.result->accuracy_std);
                r["steps"] = run.result->steps;
                r["trials"] = run.result->trials;
            }
            if (run.thresholds) {
                r["thresholds"] = {run.thresholds->easy_hard, std::isinf(run.thresholds->hard_anomaly)
                                                                   ? json(nullptr)
                                                                   : json(run.thresholds->hard_anomaly)};
            }
            r["error"] = run.error.empty() ? json(nullptr) : json(run.error);
            runs.push_back(r);
        }
        cells.push_back({{"name", cell.spec.name},
                         {"adapter", to_string(cell.spec.adapter.kind)},
                         {"criterion", to_string(cell.spec.criterion)},
                         {"mse", stat_json(cell.mse)},
                         {"mse_squared", stat_json(cell.mse_squared)},
                         {"accuracy", stat_json(cell.accuracy)},
                         {"failures", cell.failures},
                         {"runs", runs}});
    }
    return {{"format", "onadapt-bench"},
            {"version", 1},
            {"config_digest", result.config_digest},
            {"units", "abstract (synthetic benchmark units)"},
            {"mse_definition", "mean over steps of |Y - Y_hat|_2 / m; mse_squared uses the squared norm"},
            {"seeds", result.seeds},
            {"cells", cells}};
}

json timing_json(const MatrixResult& result) {
    json cells = json::array();
    for (const auto& cell : result.cells) {
        json runs = json::array();
        for (const auto& run : cell.runs) {
            if (!run.result) continue;
            runs.push_back({{"seed", run.seed},
                            {"mean_seconds", run.result->time.mean},
                            {"max_seconds", run.result->time.max},
                            {"total_seconds", run.result->time.total}});
        }
        cells.push_back({{"name", cell.spec.name}, {"runs", runs}});
    }
    return {{"format", "onadapt-bench-timing"}, {"prepare_seconds", result.prepare_seconds}, {"cells", cells}};
}

namespace {

const json* find_cell(const json& results, const std::string& name) {
    for (const auto& c : results.at("cells")) {
        if (c.at("name") == name) return &c;
    }
    return nullptr;
}

std::string fmt(const json& stat, const char* field, int digits) {
    if (stat.is_null()) return "-";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, stat.at(field).get<double>());
    return buf;
}

std::string cell_text(const json& stat, int digits) {
    if (stat.is_null()) return "-";
    return fmt(stat, "mean", digits) + " (" + fmt(stat, "std", digits) + ")";
}

void table(std::ostringstream& out, const json& results, const std::string& title,
           const std::vector<std::pair<std::string, std::string>>& columns) {
    std::vector<std::pair<std::string, const json*>> present;
    for (const auto& [cell, label] : columns) {
        if (const json* c = find_cell(results, cell)) present.emplace_back(label, c);
    }
    if (present.empty()) return;

    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> header{"metric"};
    for (const auto& [label, c] : present) header.push_back(label);
    rows.push_back(header);
    const std::vector<std::pair<std::string, std::string>> metrics{
        {"accuracy", "accuracy"}, {"mse", "MSE"}, {"mse_squared", "MSE (squared norm)"}};
    for (const auto& [key, label] : metrics) {
        std::vector<std::string> row{label};
        for (const auto& [col, c] : present) row.push_back(cell_text(c->at(key), 4));
        rows.push_back(row);
    }
    std::vector<std::string> median{"MSE median"};
    for (const auto& [col, c] : present) median.push_back(fmt(c->at("mse"), "median", 4));
    rows.push_back(median);

    std::vector<std::size_t> width(header.size(), 0);
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
    }
    out << title << "\n";
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t i = 0; i < rows[r].size(); ++i) {
            out << (i ? " | " : "") << rows[r][i] << std::string(width[i] - rows[r][i].size(), ' ');
        }
        out << "\n";
        if (r == 0) {
            for (std::size_t i = 0; i < width.size(); ++i) out << (i ? "-+-" : "") << std::string(width[i], '-');
            out << "\n";
        }
    }
    out << "\n";
}

}  // namespace

std::string comparison_tables(const json& results) {
    std::ostringstream out;
    out << "Mean (std) over " << results.at("seeds").size()
        << " seeds; abstract units. MSE is the mean of |Y - Y_hat|_2 / m.\n\n";
    table(out, results, "Comparison of optimizers",
          {{"none", "w/o adapt"},
           {"sgd+dme", "SGD"},
           {"adam+dme", "Adam"},
           {"amsgrad+dme", "Amsgrad"},
           {"mekf", "MEKF_lambda"},
           {"mekf_ema+dme", "MEKF_EMA-DME"}});
    table(out, results, "MEKF_lambda extensions",
          {{"mekf", "MEKF_lambda"},
           {"mekf_ema_v", "+ EMA-V"},
           {"mekf_ema_p", "+ EMA-P"},
           {"mekf+dme", "+ DME"}});
    table(out, results, "DME criteria",
          {{"mekf", "w/o DME"},
           {"mekf+fixed", "fixed criterion"},
           {"mekf+random", "random criterion"},
           {"mekf+dme", "proposed criterion"}});

    bool failures = false;
    for (const auto& c : results.at("cells")) {
        for (const auto& r : c.at("runs")) {
            if (!r.at("error").is_null()) {
                if (!failures) out << "Failed runs\n";
                failures = true;
                out << "  " << c.at("name").get<std::string>() << " seed " << r.at("seed").get<std::uint64_t>()
                    << ": " << r.at("error").get<std::string>() << "\n";
            }
        }
    }
    return out.str();
}

}  // namespace onadapt
