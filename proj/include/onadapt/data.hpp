#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "onadapt/model.hpp"

namespace onadapt {

/// One trial: uniformly sampled measurements, optional per-step intent labels and,
/// for generated data, the active generator regime per step.
struct Trajectory {
    std::string id;
    Eigen::MatrixXd steps;  // length x dim, row t is x_t
    std::vector<int> intents;
    std::vector<int> regimes;

    Index length() const { return steps.rows(); }
    Index dim() const { return steps.cols(); }
    bool has_intents() const { return !intents.empty(); }
};

/// x_{t+1} = A x_t + c + noise while this regime is active.
struct Regime {
    std::string name;
    Eigen::MatrixXd A;
    Eigen::VectorXd c;
    int intent = 0;
};

/// From `time` on, every regime runs with A + A_delta and c + c_delta.
struct CoefficientShift {
    Index time = 0;
    Eigen::MatrixXd A_delta;
    Eigen::VectorXd c_delta;
};

/// Per-trial heterogeneity: every trial draws u ~ U(-1, 1) once and runs all its
/// regimes with A + u A_delta and c + u c_delta.
struct TrialVariation {
    Eigen::MatrixXd A_delta;
    Eigen::VectorXd c_delta;
};

/// Synthetic drifting series. Regimes switch either on a fixed schedule
/// (switch_rate == 0: regime k is active from switch_times[k-1]) or as a Markov
/// chain (switch_rate > 0: each step jumps to a uniformly chosen other regime
/// with that probability). The regime trace records k, or k + regimes.size()
/// once the coefficient shift is in force.
struct DriftConfig {
    std::vector<Regime> regimes;
    std::vector<Index> switch_times;
    double switch_rate = 0.0;
    std::optional<CoefficientShift> shift;
    std::optional<TrialVariation> variation;
    Eigen::VectorXd initial_state;
    double initial_spread = 0.0;
    double noise_std = 0.0;
    /// Measurement glitches: with this probability per step the recorded row is the
    /// state plus outlier_scale * N(0, 1) per feature. The state itself is unaffected.
    double outlier_rate = 0.0;
    double outlier_scale = 0.0;
    Index length = 0;
    Index trials = 1;
    std::uint64_t seed = 0;

    Index dim() const { return initial_state.size(); }
    /// Throws ConfigError naming the field. `min_length` is n + m when known.
    void validate(Index min_length = 0) const;
};

/// Damped oscillator in (position, velocity) with constant/accelerating/decelerating
/// forcing regimes, Markov switching, a stiffness shift halfway through each trial and
/// rare measurement glitches.
DriftConfig drift_linear_preset();

std::vector<Trajectory> gen_drifting_series(const DriftConfig& config);

struct Sample {
    InputWindow x;                 // x_t, ..., x_{t-n+1}
    OutputWindow y;                // y_{t+1}, ..., y_{t+m}
    std::optional<int> intent;     // label at t
    Index t = 0;
    std::string trial;
};

/// One sample per anchor t with a full input and output window (stride 1).
/// Outputs are the first `output_dim` features (all when output_dim <= 0).
std::vector<Sample> windowize(const Trajectory& traj, Index n, Index m, Index output_dim = 0);
std::vector<Sample> windowize(const std::vector<Trajectory>& trajs, Index n, Index m, Index output_dim = 0);

struct DatasetSplit {
    std::vector<Trajectory> train;
    std::vector<Trajectory> val;
    std::vector<Trajectory> test;
};

/// Whole-trial split after a seeded shuffle; floor allocation with the remainder to test.
DatasetSplit split(const std::vector<Trajectory>& dataset, std::array<double, 3> ratios, std::uint64_t seed);

/// Header `trial,t,x_0,...,x_{d-1}[,intent]`, one row per step, trials contiguous.
void write_csv(const std::vector<Trajectory>& trajectories, const std::filesystem::path& path);
void write_csv(const std::vector<Trajectory>& trajectories, std::ostream& out);
std::vector<Trajectory> read_csv(const std::filesystem::path& path);
std::vector<Trajectory> read_csv(std::istream& in);

/// Shortest decimal representation that parses back to the same double.
std::string format_double(double value);

}  // namespace onadapt
