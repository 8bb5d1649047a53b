#include "onadapt/config.hpp"

#include <cstdio>
#include <fstream>

#include "onadapt/bench.hpp"
#include "onadapt/error.hpp"

namespace onadapt {

using nlohmann::json;

namespace {

bool nonnegative_integer(const json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

json matrix_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(row);
    }
    return rows;
}

json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json generator_json(const DriftConfig& g) {
    json regimes = json::array();
    for (const auto& r : g.regimes) {
        regimes.push_back({{"name", r.name}, {"A", matrix_json(r.A)}, {"c", vector_json(r.c)}, {"intent", r.intent}});
    }
    json shift = nullptr;
    if (g.shift) {
        shift = {{"time", g.shift->time}, {"A_delta", matrix_json(g.shift->A_delta)}, {"c_delta", vector_json(g.shift->c_delta)}};
    }
    json variation = nullptr;
    if (g.variation) {
        variation = {{"A_delta", matrix_json(g.variation->A_delta)}, {"c_delta", vector_json(g.variation->c_delta)}};
    }
    return {{"regimes", regimes},
            {"switch_times", g.switch_times},
            {"switch_rate", g.switch_rate},
            {"shift", shift},
            {"variation", variation},
            {"initial_state", vector_json(g.initial_state)},
            {"initial_spread", g.initial_spread},
            {"noise_std", g.noise_std},
            {"outlier_rate", g.outlier_rate},
            {"outlier_scale", g.outlier_scale},
            {"length", g.length},
            {"trials", g.trials},
            {"seed", g.seed}};
}

// Keys whose values are free-form (arrays of objects, nullable) and are not
// checked key-by-key against the defaults.
bool opaque(const std::string& path) {
    return path == "dataset.generator.regimes" || path == "dataset.generator.shift" ||
           path == "dataset.generator.variation";
}

void check_keys(const json& user, const json& defaults, const std::string& path) {
    if (!user.is_object() || !defaults.is_object() || opaque(path)) {
        return;
    }
    for (const auto& [key, value] : user.items()) {
        const std::string sub = path.empty() ? key : path + "." + key;
        if (!defaults.contains(key)) {
            throw ConfigError("unknown config field '" + sub + "'");
        }
        check_keys(value, defaults.at(key), sub);
    }
}

class Reader {
public:
    explicit Reader(const json& root) : root_(root) {}

    const json& at(const std::string& path) const {
        const json* node = &root_;
        std::size_t start = 0;
        while (start <= path.size()) {
            const std::size_t dot = path.find('.', start);
            const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
            if (!node->is_object() || !node->contains(key)) {
                throw ConfigError("missing config field '" + path + "'");
            }
            node = &node->at(key);
            if (dot == std::string::npos) break;
            start = dot + 1;
        }
        return *node;
    }

    template <typename T>
    T get(const std::string& path) const {
        const json& v = at(path);
        try {
            if constexpr (std::is_same_v<T, double>) {
                if (!v.is_number()) throw ConfigError("");
            } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
                if (!v.is_number_integer()) throw ConfigError("");
                if constexpr (std::is_unsigned_v<T>) {
                    if (!nonnegative_integer(v)) throw ConfigError("");
                }
            } else if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw ConfigError("");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw ConfigError("");
            }
            return v.get<T>();
        } catch (const std::exception&) {
            throw ConfigError("config field '" + path + "' has the wrong type");
        }
    }

    bool is_null(const std::string& path) const { return at(path).is_null(); }

private:
    const json& root_;
};

Eigen::MatrixXd parse_matrix(const json& v, const std::string& path) {
    if (!v.is_array() || v.empty()) throw ConfigError("config field '" + path + "' must be a nonempty matrix");
    const auto rows = static_cast<Index>(v.size());
    const auto cols = static_cast<Index>(v.at(0).size());
    Eigen::MatrixXd m(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        const json& row = v.at(static_cast<std::size_t>(r));
        if (!row.is_array() || static_cast<Index>(row.size()) != cols) {
            throw ConfigError("config field '" + path + "' has ragged rows");
        }
        for (Index c = 0; c < cols; ++c) {
            const json& e = row.at(static_cast<std::size_t>(c));
            if (!e.is_number()) throw ConfigError("config field '" + path + "' must contain numbers");
            m(r, c) = e.get<double>();
        }
    }
    return m;
}

Eigen::VectorXd parse_vector(const json& v, const std::string& path) {
    if (!v.is_array()) throw ConfigError("config field '" + path + "' must be an array of numbers");
    Eigen::VectorXd out(static_cast<Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number()) throw ConfigError("config field '" + path + "' must be an array of numbers");
        out[static_cast<Index>(i)] = v[i].get<double>();
    }
    return out;
}

DriftConfig parse_generator(const Reader& rd) {
    const std::string base = "dataset.generator.";
    DriftConfig g;
    const json& regimes = rd.at(base + "regimes");
    if (!regimes.is_array()) throw ConfigError("config field 'dataset.generator.regimes' must be an array");
    for (std::size_t i = 0; i < regimes.size(); ++i) {
        const std::string p = base + "regimes[" + std::to_string(i) + "]";
        const json& r = regimes[i];
        if (!r.is_object() || !r.contains("A") || !r.contains("c")) {
            throw ConfigError("config field '" + p + "' needs A and c");
        }
        Regime reg;
        reg.name = r.value("name", "regime" + std::to_string(i));
        reg.A = parse_matrix(r.at("A"), p + ".A");
        reg.c = parse_vector(r.at("c"), p + ".c");
        if (r.contains("intent") && !r.at("intent").is_number_integer()) {
            throw ConfigError("config field '" + p + ".intent' must be an integer");
        }
        reg.intent = r.value("intent", 0);
        if (reg.intent < 0) throw ConfigError("config field '" + p + ".intent' must be >= 0");
        g.regimes.push_back(std::move(reg));
    }
    for (const auto& t : rd.at(base + "switch_times")) {
        if (!t.is_number_integer()) throw ConfigError("config field 'dataset.generator.switch_times' must hold integers");
        g.switch_times.push_back(t.get<Index>());
    }
    g.switch_rate = rd.get<double>(base + "switch_rate");
    if (!rd.is_null(base + "shift")) {
        const json& s = rd.at(base + "shift");
        if (!s.is_object() || !s.contains("time") || !s.contains("A_delta")) {
            throw ConfigError("config field 'dataset.generator.shift' needs time and A_delta");
        }
        CoefficientShift shift;
        if (!s.at("time").is_number_integer()) throw ConfigError("config field 'dataset.generator.shift.time' must be an integer");
        shift.time = s.at("time").get<Index>();
        shift.A_delta = parse_matrix(s.at("A_delta"), base + "shift.A_delta");
        shift.c_delta = s.contains("c_delta") ? parse_vector(s.at("c_delta"), base + "shift.c_delta")
                                              : Eigen::VectorXd::Zero(shift.A_delta.rows());
        g.shift = std::move(shift);
    }
    if (!rd.is_null(base + "variation")) {
        const json& v = rd.at(base + "variation");
        if (!v.is_object() || !v.contains("A_delta")) {
            throw ConfigError("config field 'dataset.generator.variation' needs A_delta");
        }
        TrialVariation var;
        var.A_delta = parse_matrix(v.at("A_delta"), base + "variation.A_delta");
        var.c_delta = v.contains("c_delta") ? parse_vector(v.at("c_delta"), base + "variation.c_delta")
                                            : Eigen::VectorXd::Zero(var.A_delta.rows());
        g.variation = std::move(var);
    }
    g.initial_state = parse_vector(rd.at(base + "initial_state"), base + "initial_state");
    g.initial_spread = rd.get<double>(base + "initial_spread");
    g.noise_std = rd.get<double>(base + "noise_std");
    g.outlier_rate = rd.get<double>(base + "outlier_rate");
    g.outlier_scale = rd.get<double>(base + "outlier_scale");
    g.length = rd.get<Index>(base + "length");
    g.trials = rd.get<Index>(base + "trials");
    g.seed = rd.get<std::uint64_t>(base + "seed");
    return g;
}

template <typename T>
std::optional<T> optional_field(const Reader& rd, const std::string& path) {
    if (rd.is_null(path)) return std::nullopt;
    return rd.get<T>(path);
}

void require(bool ok, const std::string& path, const std::string& rule) {
    if (!ok) throw ConfigError("config field '" + path + "' " + rule);
}

}  // namespace

void CriterionConfig::validate() const {
    require(0.0 <= q1 && q1 <= q2 && q2 <= 1.0, "dme.q1/dme.q2", "must satisfy 0 <= q1 <= q2 <= 1");
    require(fixed_epochs >= 0, "dme.k", "must be >= 0");
    double total = 0.0;
    for (double p : probabilities) {
        require(p >= 0.0, "dme.p", "entries must be nonnegative");
        total += p;
    }
    require(std::abs(total - 1.0) <= 1e-12, "dme.p", "must sum to 1");
}

json default_config() {
    const DriftConfig g = drift_linear_preset();
    std::vector<std::uint64_t> seeds;
    for (std::uint64_t s = 0; s < 10; ++s) seeds.push_back(s);
    return {
        {"dataset", {{"csv", nullptr}, {"generator", generator_json(g)}}},
        {"model",
         {{"kind", "linear"},
          {"n", 20},
          {"m", 10},
          {"output_dim", nullptr},
          {"hidden", 8},
          {"classifier_hidden", 8},
          {"classes", nullptr},
          {"bias", true},
          {"mask", nullptr}}},
        {"train", {{"epochs", 20}, {"batch", 128}, {"lr", 0.01}, {"classifier_loss", true}, {"stride", 1}}},
        {"adapter",
         {{"kind", "mekf_ema"},
          {"p0", 1.0},
          {"lambda", 0.98},
          {"sigma_r", 1.0},
          {"sigma_q", 0.0},
          {"mu_v", 0.3},
          {"mu_p", 0.3},
          {"q_outside_lambda", false},
          {"lr", 0.01},
          {"adam_lr", 0.001},
          {"momentum", 0.9},
          {"beta1", 0.9},
          {"beta2", 0.999},
          {"eps", 1e-8}}},
        {"dme",
         {{"kind", "proposed"},
          {"q1", 0.5},
          {"q2", 0.999},
          {"no_anomaly", false},
          {"k", 2},
          {"p", {0.5, 0.499, 0.001}},
          {"seed", 0},
          {"calibration", "adapted"}}},
        {"run", {{"seed", 0}, {"split", {0.8, 0.1, 0.1}}, {"carry_state", false}}},
        {"bench",
         {{"seeds", seeds},
          {"cells",
           {"none", "sgd+dme", "adam+dme", "amsgrad+dme", "mekf", "mekf_ema+dme", "none+dme", "sgd", "adam",
            "amsgrad", "mekf+dme", "mekf_ema", "mekf_ema_v", "mekf_ema_p", "mekf+fixed", "mekf+random"}},
          {"jobs", 1}}},
    };
}

ExperimentConfig parse_config(const json& doc) {
    if (!doc.is_object()) {
        throw ConfigError("config must be a JSON object");
    }
    json merged = default_config();
    check_keys(doc, merged, "");
    merged.merge_patch(doc);
    // merge_patch drops keys set to null; restore nullable defaults.
    for (const char* key : {"output_dim", "classes", "mask"}) {
        if (!merged["model"].contains(key)) merged["model"][key] = nullptr;
    }
    if (!merged["dataset"].contains("csv")) merged["dataset"]["csv"] = nullptr;
    for (const char* key : {"shift", "variation"}) {
        if (!merged["dataset"]["generator"].contains(key)) merged["dataset"]["generator"][key] = nullptr;
    }

    const Reader rd(merged);
    ExperimentConfig cfg;
    cfg.document = merged;

    cfg.csv = optional_field<std::string>(rd, "dataset.csv");
    cfg.generator = parse_generator(rd);

    auto& m = cfg.model;
    m.kind = rd.get<std::string>("model.kind");
    require(m.kind == "linear" || m.kind == "mlp" || m.kind == "recurrent", "model.kind",
            "must be one of linear, mlp, recurrent");
    m.n = rd.get<Index>("model.n");
    m.m = rd.get<Index>("model.m");
    require(m.n >= 1, "model.n", "must be >= 1");
    require(m.m >= 1, "model.m", "must be >= 1");
    m.output_dim = optional_field<Index>(rd, "model.output_dim");
    if (m.output_dim) require(*m.output_dim >= 1, "model.output_dim", "must be >= 1");
    m.hidden = rd.get<Index>("model.hidden");
    require(m.hidden >= 1, "model.hidden", "must be >= 1");
    if (m.kind == "recurrent") require(m.hidden <= 16, "model.hidden", "must be <= 16 for the recurrent model");
    m.classifier_hidden = rd.get<Index>("model.classifier_hidden");
    require(m.classifier_hidden >= 1, "model.classifier_hidden", "must be >= 1");
    m.classes = optional_field<Index>(rd, "model.classes");
    if (m.classes) require(*m.classes == 0 || *m.classes >= 2, "model.classes", "must be 0 or >= 2");
    m.bias = rd.get<bool>("model.bias");
    if (!rd.is_null("model.mask")) {
        const json& mask = rd.at("model.mask");
        require(mask.is_array() && !mask.empty(), "model.mask", "must be a nonempty array of block prefixes");
        std::vector<std::string> prefixes;
        for (const auto& p : mask) {
            require(p.is_string(), "model.mask", "must contain strings");
            prefixes.push_back(p.get<std::string>());
        }
        m.mask = std::move(prefixes);
    }

    cfg.train.epochs = rd.get<int>("train.epochs");
    cfg.train.batch = rd.get<int>("train.batch");
    cfg.train.lr = rd.get<double>("train.lr");
    cfg.train.classifier_loss = rd.get<bool>("train.classifier_loss");
    cfg.train_stride = rd.get<Index>("train.stride");
    require(cfg.train.epochs >= 1, "train.epochs", "must be >= 1");
    require(cfg.train.batch >= 1, "train.batch", "must be >= 1");
    require(cfg.train.lr > 0.0, "train.lr", "must be > 0");
    require(cfg.train_stride >= 1, "train.stride", "must be >= 1");

    auto& a = cfg.adapter;
    a.kind = parse_adapter_kind(rd.get<std::string>("adapter.kind"));
    a.mekf.p0 = rd.get<double>("adapter.p0");
    a.mekf.lambda = rd.get<double>("adapter.lambda");
    a.mekf.sigma_r = rd.get<double>("adapter.sigma_r");
    a.mekf.sigma_q = rd.get<double>("adapter.sigma_q");
    a.mekf.mu_v = rd.get<double>("adapter.mu_v");
    a.mekf.mu_p = rd.get<double>("adapter.mu_p");
    a.mekf.q_outside_lambda = rd.get<bool>("adapter.q_outside_lambda");
    cfg.sgd_lr = rd.get<double>("adapter.lr");
    cfg.adam_lr = rd.get<double>("adapter.adam_lr");
    require(cfg.sgd_lr > 0.0, "adapter.lr", "must be > 0");
    require(cfg.adam_lr > 0.0, "adapter.adam_lr", "must be > 0");
    a.gradient.lr = a.kind == AdapterKind::adam || a.kind == AdapterKind::amsgrad ? cfg.adam_lr : cfg.sgd_lr;
    a.gradient.momentum = rd.get<double>("adapter.momentum");
    a.gradient.beta1 = rd.get<double>("adapter.beta1");
    a.gradient.beta2 = rd.get<double>("adapter.beta2");
    a.gradient.eps = rd.get<double>("adapter.eps");
    // Every cell of a bench may use any adapter, so validate both hyperparameter groups.
    a.mekf.validate();
    a.gradient.validate();

    auto& d = cfg.dme;
    d.kind = parse_criterion_kind(rd.get<std::string>("dme.kind"));
    d.q1 = rd.get<double>("dme.q1");
    d.q2 = rd.get<double>("dme.q2");
    d.no_anomaly = rd.get<bool>("dme.no_anomaly");
    d.fixed_epochs = rd.get<int>("dme.k");
    const json& p = rd.at("dme.p");
    require(p.is_array() && p.size() == 3, "dme.p", "must hold three probabilities");
    for (std::size_t i = 0; i < 3; ++i) {
        require(p[i].is_number(), "dme.p", "must hold numbers");
        d.probabilities[i] = p[i].get<double>();
    }
    d.seed = rd.get<std::uint64_t>("dme.seed");
    const std::string pass = rd.get<std::string>("dme.calibration");
    require(pass == "adapted" || pass == "frozen", "dme.calibration", "must be 'adapted' or 'frozen'");
    d.calibration = pass == "adapted" ? CalibrationPass::adapted : CalibrationPass::frozen;
    d.validate();

    cfg.seed = rd.get<std::uint64_t>("run.seed");
    const json& sp = rd.at("run.split");
    require(sp.is_array() && sp.size() == 3, "run.split", "must hold three ratios");
    double total = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        require(sp[i].is_number() && sp[i].get<double>() >= 0.0, "run.split", "must hold nonnegative numbers");
        cfg.split[i] = sp[i].get<double>();
        total += cfg.split[i];
    }
    require(std::abs(total - 1.0) <= 1e-9, "run.split", "must sum to 1");
    cfg.carry_state = rd.get<bool>("run.carry_state");

    for (const auto& s : rd.at("bench.seeds")) {
        require(nonnegative_integer(s), "bench.seeds", "must hold nonnegative integers");
        cfg.bench_seeds.push_back(s.get<std::uint64_t>());
    }
    require(!cfg.bench_seeds.empty(), "bench.seeds", "must be nonempty");
    for (const auto& c : rd.at("bench.cells")) {
        require(c.is_string(), "bench.cells", "must hold cell names");
        cfg.bench_cells.push_back(c.get<std::string>());
    }
    require(!cfg.bench_cells.empty(), "bench.cells", "must be nonempty");
    cfg.jobs = rd.get<int>("bench.jobs");
    require(cfg.jobs >= 1, "bench.jobs", "must be >= 1");

    if (!cfg.csv) {
        cfg.generator.validate(m.n + m.m);
    }
    for (const auto& name : cfg.bench_cells) {
        parse_cell(name, cfg);
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file " + path);
    }
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
    return parse_config(doc);
}

AdapterConfig adapter_for(const ExperimentConfig& config, AdapterKind kind) {
    AdapterConfig a = config.adapter;
    a.kind = kind;
    a.gradient.lr = kind == AdapterKind::adam || kind == AdapterKind::amsgrad ? config.adam_lr : config.sgd_lr;
    return a;
}

std::string config_digest(const ExperimentConfig& config) {
    const std::string text = config.document.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace onadapt
