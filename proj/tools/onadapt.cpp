// onadapt: generate, train, calibrate, adapt, bench, report.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "onadapt/bench.hpp"
#include "onadapt/error.hpp"
#include "onadapt/models.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace onadapt;

namespace {

// Writes through a temporary sibling and renames, so a failed run leaves no partial file.
void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        out << text;
        if (!out.flush()) throw std::runtime_error("cannot write " + path.string());
    }
    fs::rename(tmp, path);
}

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + " is not valid JSON: " + e.what());
    }
}

ExperimentConfig config_from(const std::string& path) {
    return path.empty() ? parse_config(json::object()) : load_config(path);
}

ModelPtr load_model(const std::string& path, const ExperimentConfig& config) {
    if (path.empty()) return nullptr;
    ModelPtr model = model_from_json(read_json(path));
    if (model->window() != config.model.n) {
        throw ConfigError("model window " + std::to_string(model->window()) + " does not match model.n");
    }
    return model;
}

struct Options {
    std::string config;
    std::string out;
    std::string model;
    std::string errors;
    std::string result;
    std::string cell;
    std::vector<std::string> only;
    int jobs = 0;
};

int cmd_generate(const Options& o) {
    const auto config = config_from(o.config);
    const auto data = load_dataset(config, config.seed);
    std::ostringstream text;
    write_csv(data, text);
    write_file(o.out, text.str());
    std::cerr << "wrote " << data.size() << " trajectories to " << o.out << "\n";
    return 0;
}

int cmd_train(const Options& o) {
    const auto config = config_from(o.config);
    const Prepared p = prepare(config, config.seed);
    json doc = model_to_json(*p.model);
    doc["loss_trace"] = p.loss_trace;
    write_file(o.out, doc.dump(1) + "\n");
    std::cerr << "trained on " << p.train.size() << " samples; final loss "
              << (p.loss_trace.empty() ? 0.0 : p.loss_trace.back()) << "\n";
    return 0;
}

int cmd_calibrate(const Options& o) {
    const auto config = config_from(o.config);
    const Prepared p = prepare(config, config.seed, load_model(o.model, config));
    const Adapter adapter(config.adapter);
    const auto c = calibrate(config, adapter, p);
    json doc = {{"q1", config.dme.q1},
                {"q2", config.dme.q2},
                {"xi1", c.thresholds.easy_hard},
                {"xi2", std::isinf(c.thresholds.hard_anomaly) ? json(nullptr) : json(c.thresholds.hard_anomaly)},
                {"adapter", to_string(config.adapter.kind)},
                {"pass", config.dme.calibration == CalibrationPass::adapted ? "adapted" : "frozen"},
                {"count", c.errors.size()},
                {"config_digest", config_digest(config)}};
    if (!o.errors.empty()) {
        std::ostringstream text;
        text << "j\n";
        for (double e : c.errors) text << format_double(e) << "\n";
        write_file(o.errors, text.str());
    }
    write_file(o.out, doc.dump(1) + "\n");
    return 0;
}

int cmd_adapt(const Options& o) {
    const auto config = config_from(o.config);
    CellSpec cell;
    if (o.cell.empty()) {
        cell.name = to_string(config.adapter.kind);
        cell.adapter = config.adapter;
        cell.criterion = config.dme.kind;
    } else {
        cell = parse_cell(o.cell, config);
    }
    const Prepared p = prepare(config, config.seed, load_model(o.model, config));
    const Adapter adapter(cell.adapter);
    auto criterion = make_criterion(config, cell.criterion, adapter, p);
    RunOptions opts;
    opts.carry_state = config.carry_state;
    const auto log = run_online_adaptation(*p.model, p.model->params().values, p.test, adapter, p.mask,
                                           criterion, opts);
    std::ostringstream text;
    write_log_csv(log, text);
    const json result = run_result_json(summarize(log, config_digest(config)));
    write_file(o.out, text.str());
    if (!o.result.empty()) {
        write_file(o.result, result.dump(1) + "\n");
    }
    std::cout << result.dump(1) << "\n";
    return 0;
}

int cmd_bench(const Options& o) {
    const auto config = config_from(o.config);
    for (const auto& name : o.only) parse_cell(name, config);
    const int jobs = o.jobs > 0 ? o.jobs : config.jobs;
    const auto result = run_matrix(config, o.only, jobs);
    const json doc = results_json(result);
    const std::string tables = comparison_tables(doc);
    const fs::path dir(o.out);
    write_file(dir / "results.json", doc.dump(1) + "\n");
    write_file(dir / "timing.json", timing_json(result).dump(1) + "\n");
    write_file(dir / "tables.txt", tables);
    std::cout << tables;
    return 0;
}

int cmd_report(const Options& o) {
    const json doc = read_json(o.config);
    if (doc.value("format", "") != "onadapt-bench") {
        throw ConfigError(o.config + " is not a bench results document");
    }
    const std::string tables = comparison_tables(doc);
    if (!o.out.empty()) write_file(o.out, tables);
    std::cout << tables;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Online adaptation of small differentiable predictors"};
    app.require_subcommand(0, 1);
    bool print_defaults = false;
    app.add_flag("--print-defaults", print_defaults, "Print the default experiment config and exit");

    Options o;
    auto* gen = app.add_subcommand("generate", "Write the configured dataset as CSV");
    gen->add_option("-c,--config", o.config, "Experiment config (JSON)");
    gen->add_option("-o,--out", o.out, "Output CSV")->required();

    auto* train = app.add_subcommand("train", "Train the model offline and write it as JSON");
    train->add_option("-c,--config", o.config, "Experiment config (JSON)");
    train->add_option("-o,--out", o.out, "Output model JSON")->required();

    auto* cal = app.add_subcommand("calibrate", "Compute DME thresholds on the validation split");
    cal->add_option("-c,--config", o.config, "Experiment config (JSON)");
    cal->add_option("-m,--model", o.model, "Pretrained model JSON (trains one if omitted)");
    cal->add_option("-o,--out", o.out, "Output calibration JSON")->required();
    cal->add_option("--errors", o.errors, "Also dump the validation one-step errors as CSV");

    auto* adapt = app.add_subcommand("adapt", "Run one adaptation stream over the test split");
    adapt->add_option("-c,--config", o.config, "Experiment config (JSON)");
    adapt->add_option("-m,--model", o.model, "Pretrained model JSON (trains one if omitted)");
    adapt->add_option("--cell", o.cell, "Cell name such as mekf_ema+dme (default: adapter and dme sections)");
    adapt->add_option("-o,--out", o.out, "Output prediction log CSV")->required();
    adapt->add_option("--result", o.result, "Also write the run summary JSON");

    auto* bench = app.add_subcommand("bench", "Run the experiment matrix");
    bench->add_option("-c,--config", o.config, "Experiment config (JSON)");
    bench->add_option("-o,--out", o.out, "Output directory")->required();
    bench->add_option("--only", o.only, "Run only these cells");
    bench->add_option("-j,--jobs", o.jobs, "Worker threads (default: bench.jobs)")->check(CLI::PositiveNumber);

    auto* report = app.add_subcommand("report", "Print comparison tables from a bench results file");
    report->add_option("results", o.config, "results.json from bench")->required();
    report->add_option("-o,--out", o.out, "Also write the tables to this file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (print_defaults) {
            std::cout << default_config().dump(2) << "\n";
            return 0;
        }
        if (gen->parsed()) return cmd_generate(o);
        if (train->parsed()) return cmd_train(o);
        if (cal->parsed()) return cmd_calibrate(o);
        if (adapt->parsed()) return cmd_adapt(o);
        if (bench->parsed()) return cmd_bench(o);
        if (report->parsed()) return cmd_report(o);
        std::cout << app.help();
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
