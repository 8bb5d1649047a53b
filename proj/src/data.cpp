#include "onadapt/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "onadapt/error.hpp"
#include "onadapt/rng.hpp"

namespace onadapt {

void DriftConfig::validate(Index min_length) const {
    const Index d = dim();
    if (d < 1) {
        throw ConfigError("dataset.generator.initial_state must be nonempty");
    }
    if (regimes.empty()) {
        throw ConfigError("dataset.generator.regimes must contain at least one regime");
    }
    for (const auto& r : regimes) {
        if (r.A.rows() != d || r.A.cols() != d || r.c.size() != d) {
            throw ConfigError("dataset.generator.regimes['" + r.name + "'] has dimensions inconsistent with initial_state");
        }
    }
    if (!(switch_rate >= 0.0 && switch_rate <= 1.0)) {
        throw ConfigError("dataset.generator.switch_rate must lie in [0, 1]");
    }
    if (switch_rate == 0.0 && !switch_times.empty()) {
        if (switch_times.size() + 1 != regimes.size()) {
            throw ConfigError("dataset.generator.switch_times needs one entry per regime after the first");
        }
        for (std::size_t i = 0; i < switch_times.size(); ++i) {
            if (switch_times[i] < 1 || (i > 0 && switch_times[i] <= switch_times[i - 1])) {
                throw ConfigError("dataset.generator.switch_times must be positive and strictly increasing");
            }
        }
    }
    if (shift) {
        if (shift->A_delta.rows() != d || shift->A_delta.cols() != d || shift->c_delta.size() != d) {
            throw ConfigError("dataset.generator.shift has dimensions inconsistent with initial_state");
        }
        if (shift->time < 0) {
            throw ConfigError("dataset.generator.shift.time must be >= 0");
        }
    }
    if (variation && (variation->A_delta.rows() != d || variation->A_delta.cols() != d ||
                      variation->c_delta.size() != d)) {
        throw ConfigError("dataset.generator.variation has dimensions inconsistent with initial_state");
    }
    if (!(noise_std >= 0.0)) {
        throw ConfigError("dataset.generator.noise_std must be >= 0");
    }
    if (!(outlier_rate >= 0.0 && outlier_rate <= 1.0)) {
        throw ConfigError("dataset.generator.outlier_rate must lie in [0, 1]");
    }
    if (!(outlier_scale >= 0.0)) {
        throw ConfigError("dataset.generator.outlier_scale must be >= 0");
    }
    if (!(initial_spread >= 0.0)) {
        throw ConfigError("dataset.generator.initial_spread must be >= 0");
    }
    if (length < 1 || length <= min_length) {
        throw ConfigError("dataset.generator.length must exceed n + m (" + std::to_string(min_length) + ")");
    }
    if (trials < 1) {
        throw ConfigError("dataset.generator.trials must be at least 1");
    }
}

DriftConfig drift_linear_preset() {
    constexpr double dt = 0.1;
    constexpr double omega2 = 1.0;
    constexpr double zeta_omega = 0.1;  // zeta * omega
    constexpr double force = 1.0;

    Eigen::Matrix2d A;
    A << 1.0, dt, -dt * omega2, 1.0 - 2.0 * zeta_omega * dt;

    DriftConfig cfg;
    cfg.regimes = {
        {"constant", A, Eigen::Vector2d(0.0, 0.0), 0},
        {"accelerate", A, Eigen::Vector2d(0.0, dt * force), 1},
        {"decelerate", A, Eigen::Vector2d(0.0, -dt * force), 2},
    };
    cfg.switch_rate = 0.02;
    // Stiffness doubles halfway through each trial.
    Eigen::Matrix2d delta = Eigen::Matrix2d::Zero();
    delta(1, 0) = -dt * omega2;
    cfg.shift = CoefficientShift{200, delta, Eigen::Vector2d::Zero()};
    cfg.initial_state = Eigen::Vector2d::Zero();
    cfg.initial_spread = 0.5;
    cfg.noise_std = 0.01;
    cfg.outlier_rate = 0.002;
    cfg.outlier_scale = 1.0;
    cfg.length = 400;
    cfg.trials = 20;
    cfg.seed = 7;
    return cfg;
}

std::vector<Trajectory> gen_drifting_series(const DriftConfig& config) {
    config.validate();
    const Index d = config.dim();
    const auto R = static_cast<int>(config.regimes.size());
    std::vector<Trajectory> out;
    out.reserve(static_cast<std::size_t>(config.trials));

    for (Index trial = 0; trial < config.trials; ++trial) {
        Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(trial)));
        Trajectory tr;
        tr.id = std::to_string(trial);
        tr.steps.resize(config.length, d);
        tr.intents.resize(static_cast<std::size_t>(config.length));
        tr.regimes.resize(static_cast<std::size_t>(config.length));

        int regime = config.switch_rate > 0.0 ? static_cast<int>(rng.below(static_cast<std::uint64_t>(R))) : 0;
        std::size_t next_switch = 0;
        Eigen::VectorXd x = config.initial_state;
        for (Index i = 0; i < d; ++i) {
            x[i] += rng.uniform(-config.initial_spread, config.initial_spread);
        }
        std::vector<Regime> regimes = config.regimes;
        if (config.variation) {
            const double u = rng.uniform(-1.0, 1.0);
            for (auto& r : regimes) {
                r.A += u * config.variation->A_delta;
                r.c += u * config.variation->c_delta;
            }
        }

        for (Index t = 0; t < config.length; ++t) {
            if (t > 0) {
                if (config.switch_rate > 0.0) {
                    if (R > 1 && rng.uniform() < config.switch_rate) {
                        const int jump = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(R - 1)));
                        regime = (regime + jump) % R;
                    }
                } else if (next_switch < config.switch_times.size() && t == config.switch_times[next_switch]) {
                    regime = static_cast<int>(++next_switch);
                }
            }
            const bool shifted = config.shift && t >= config.shift->time;
            const Regime& r = regimes[static_cast<std::size_t>(regime)];
            if (t > 0) {
                // The transition into step t uses the regime active at t.
                Eigen::VectorXd next = r.A * x + r.c;
                if (shifted) {
                    next += config.shift->A_delta * x + config.shift->c_delta;
                }
                if (config.noise_std > 0.0) {
                    for (Index i = 0; i < d; ++i) {
                        next[i] += config.noise_std * rng.normal();
                    }
                }
                x = std::move(next);
            }
            tr.steps.row(t) = x.transpose();
            if (config.outlier_rate > 0.0 && rng.uniform() < config.outlier_rate) {
                for (Index i = 0; i < d; ++i) {
                    tr.steps(t, i) += config.outlier_scale * rng.normal();
                }
            }
            tr.intents[static_cast<std::size_t>(t)] = r.intent;
            tr.regimes[static_cast<std::size_t>(t)] = regime + (shifted ? R : 0);
        }
        out.push_back(std::move(tr));
    }
    return out;
}

std::vector<Sample> windowize(const Trajectory& traj, Index n, Index m, Index output_dim) {
    if (n < 1 || m < 1) {
        throw ArgumentError("window sizes n and m must be at least 1");
    }
    const Index d_out = output_dim > 0 ? output_dim : traj.dim();
    if (d_out > traj.dim()) {
        throw ConfigError("output dimension exceeds trajectory dimension");
    }
    std::vector<Sample> out;
    const Index count = traj.length() - n - m + 1;
    if (count <= 0) {
        return out;
    }
    out.reserve(static_cast<std::size_t>(count));
    for (Index t = n - 1; t + m < traj.length(); ++t) {
        Sample s;
        s.x.steps.resize(n, traj.dim());
        for (Index k = 0; k < n; ++k) {
            s.x.steps.row(k) = traj.steps.row(t - k);
        }
        s.y.steps = traj.steps.block(t + 1, 0, m, d_out);
        if (traj.has_intents()) {
            s.intent = traj.intents[static_cast<std::size_t>(t)];
        }
        s.t = t;
        s.trial = traj.id;
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<Sample> windowize(const std::vector<Trajectory>& trajs, Index n, Index m, Index output_dim) {
    std::vector<Sample> out;
    for (const auto& tr : trajs) {
        auto part = windowize(tr, n, m, output_dim);
        out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
    return out;
}

DatasetSplit split(const std::vector<Trajectory>& dataset, std::array<double, 3> ratios, std::uint64_t seed) {
    double total = 0.0;
    for (double r : ratios) {
        if (!(r >= 0.0)) {
            throw ArgumentError("split ratios must be nonnegative");
        }
        total += r;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw ArgumentError("split ratios must sum to 1");
    }
    const std::size_t n = dataset.size();
    if (n < ratios.size()) {
        throw ArgumentError("need at least 3 trials to split, got " + std::to_string(n));
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    for (std::size_t i = n - 1; i > 0; --i) {
        std::swap(order[i], order[rng.below(i + 1)]);
    }
    const auto alloc = [&](double r) { return static_cast<std::size_t>(std::floor(r * static_cast<double>(n) + 1e-9)); };
    const std::size_t n_train = alloc(ratios[0]);
    const std::size_t n_val = std::min(alloc(ratios[1]), n - n_train);

    DatasetSplit out;
    for (std::size_t i = 0; i < n; ++i) {
        const Trajectory& tr = dataset[order[i]];
        if (i < n_train) {
            out.train.push_back(tr);
        } else if (i < n_train + n_val) {
            out.val.push_back(tr);
        } else {
            out.test.push_back(tr);
        }
    }
    return out;
}

std::string format_double(double value) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

void write_csv(const std::vector<Trajectory>& trajectories, std::ostream& out) {
    if (trajectories.empty()) {
        throw ArgumentError("no trajectories to write");
    }
    const Index d = trajectories.front().dim();
    const bool intents = trajectories.front().has_intents();
    for (const auto& tr : trajectories) {
        if (tr.dim() != d || tr.has_intents() != intents) {
            throw ArgumentError("trajectories disagree on dimension or intent labels");
        }
        if (tr.id.find_first_of(",\n\"") != std::string::npos) {
            throw ArgumentError("trial id '" + tr.id + "' contains a reserved character");
        }
    }
    out << "trial,t";
    for (Index i = 0; i < d; ++i) {
        out << ",x_" << i;
    }
    if (intents) {
        out << ",intent";
    }
    out << '\n';
    for (const auto& tr : trajectories) {
        for (Index t = 0; t < tr.length(); ++t) {
            out << tr.id << ',' << t;
            for (Index i = 0; i < d; ++i) {
                out << ',' << format_double(tr.steps(t, i));
            }
            if (intents) {
                out << ',' << tr.intents[static_cast<std::size_t>(t)];
            }
            out << '\n';
        }
    }
}

void write_csv(const std::vector<Trajectory>& trajectories, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    write_csv(trajectories, out);
    if (!out) {
        throw std::runtime_error("failed writing " + path.string());
    }
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    std::istringstream ss(line);
    while (std::getline(ss, cur, ',')) {
        fields.push_back(cur);
    }
    if (!line.empty() && line.back() == ',') {
        fields.emplace_back();
    }
    return fields;
}

template <typename T>
T parse_number(const std::string& text, const std::string& column, std::size_t line) {
    T value{};
    const char* begin = text.data();
    const char* end = text.data() + text.size();
    const auto res = std::from_chars(begin, end, value);
    if (res.ec != std::errc() || res.ptr != end) {
        throw ParseError("column '" + column + "': cannot parse '" + text + "'", line);
    }
    return value;
}

}  // namespace

std::vector<Trajectory> read_csv(std::istream& in) {
    std::string line;
    std::size_t lineno = 1;
    if (!std::getline(in, line)) {
        throw ParseError("missing header", lineno);
    }
    if (!line.empty() && line.back() == '\r') {
        line.pop_back();
    }
    const auto header = split_fields(line);
    auto require_column = [&](std::size_t pos, const std::string& name) {
        if (header.size() <= pos || header[pos] != name) {
            throw ParseError("missing column '" + name + "'", lineno);
        }
    };
    require_column(0, "trial");
    require_column(1, "t");
    Index d = 0;
    while (static_cast<std::size_t>(2 + d) < header.size() && header[static_cast<std::size_t>(2 + d)] == "x_" + std::to_string(d)) {
        ++d;
    }
    if (d == 0) {
        throw ParseError("missing column 'x_0'", lineno);
    }
    const std::size_t used = static_cast<std::size_t>(2 + d);
    bool intents = false;
    if (header.size() == used + 1) {
        if (header[used] != "intent") {
            throw ParseError("unexpected column '" + header[used] + "' (expected 'x_" + std::to_string(d) + "' or 'intent')", lineno);
        }
        intents = true;
    } else if (header.size() > used + 1) {
        throw ParseError("unexpected column '" + header[used] + "'", lineno);
    }

    std::vector<Trajectory> out;
    std::vector<std::vector<double>> rows;
    std::unordered_set<std::string> seen;
    Index last_t = 0;

    auto flush = [&]() {
        if (out.empty() || rows.empty()) {
            return;
        }
        Trajectory& tr = out.back();
        tr.steps.resize(static_cast<Index>(rows.size()), d);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            for (Index i = 0; i < d; ++i) {
                tr.steps(static_cast<Index>(r), i) = rows[r][static_cast<std::size_t>(i)];
            }
        }
        rows.clear();
    };

    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        const auto fields = split_fields(line);
        if (fields.size() != header.size()) {
            throw ParseError("expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()), lineno);
        }
        const std::string& id = fields[0];
        if (id.empty()) {
            throw ParseError("column 'trial' is empty", lineno);
        }
        const auto t = parse_number<Index>(fields[1], "t", lineno);
        if (out.empty() || out.back().id != id) {
            if (seen.count(id) != 0) {
                throw ParseError("trial '" + id + "' is not contiguous", lineno);
            }
            flush();
            seen.insert(id);
            out.push_back(Trajectory{id, {}, {}, {}});
        } else if (t != last_t + 1) {
            throw ParseError("time index " + std::to_string(t) + " does not follow " + std::to_string(last_t), lineno);
        }
        last_t = t;
        std::vector<double> row(static_cast<std::size_t>(d));
        for (Index i = 0; i < d; ++i) {
            row[static_cast<std::size_t>(i)] =
                parse_number<double>(fields[static_cast<std::size_t>(2 + i)], "x_" + std::to_string(i), lineno);
        }
        rows.push_back(std::move(row));
        if (intents) {
            out.back().intents.push_back(parse_number<int>(fields[used], "intent", lineno));
        }
    }
    flush();
    return out;
}

std::vector<Trajectory> read_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    return read_csv(in);
}

}  // namespace onadapt
