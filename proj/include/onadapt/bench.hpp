#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "onadapt/config.hpp"
#include "onadapt/harness.hpp"

namespace onadapt {

/// A matrix cell: `<adapter>[+<criterion>]`, e.g. "mekf", "mekf_ema+dme", "mekf+random".
/// Adapters are the AdapterKind names plus "mekf_ema_v" (mu_p = 0) and "mekf_ema_p" (mu_v = 0).
/// Criteria are "dme" (proposed), "fixed", "random" and "none"; no suffix means "none".
struct CellSpec {
    std::string name;
    AdapterConfig adapter;
    CriterionKind criterion = CriterionKind::none;
};

CellSpec parse_cell(const std::string& name, const ExperimentConfig& config);

/// The experiment's data and pretrained model for one seed.
struct Prepared {
    std::uint64_t seed = 0;
    DatasetSplit data;
    std::vector<Sample> train;  // already subsampled by train.stride
    std::vector<Sample> val;
    std::vector<Sample> test;
    ModelPtr model;
    AdaptableMask mask;
    std::vector<double> loss_trace;
};

/// Generated (generator seed mixed with `seed`) or loaded from the CSV path.
std::vector<Trajectory> load_dataset(const ExperimentConfig& config, std::uint64_t seed);

nlohmann::json model_architecture(const ExperimentConfig& config, const std::vector<Trajectory>& data);

/// Loads, splits, windowizes and, unless `pretrained` is given, trains the model.
Prepared prepare(const ExperimentConfig& config, std::uint64_t seed, ModelPtr pretrained = nullptr);

AdaptableMask model_mask(const ExperimentConfig& config, const Model& model);

struct Calibration {
    DmeThresholds thresholds;
    std::vector<double> errors;  // one-step errors of the validation pass
};

/// Single-epoch pass over the validation stream (adapted with `adapter`, or frozen if the
/// config asks for it), then nearest-rank quantiles q1/q2 of its one-step errors.
Calibration calibrate(const ExperimentConfig& config, const Adapter& adapter, const Prepared& prepared);

/// Builds the criterion for a run, calibrating first when it is the proposed one.
EpochCriterion make_criterion(const ExperimentConfig& config, CriterionKind kind, const Adapter& adapter,
                              const Prepared& prepared, std::optional<DmeThresholds>* thresholds = nullptr);

struct CellRun {
    std::uint64_t seed = 0;
    std::optional<RunResult> result;
    std::optional<DmeThresholds> thresholds;
    std::string error;  // nonempty if the run failed
};

CellRun run_cell(const ExperimentConfig& config, const CellSpec& cell, const Prepared& prepared);

struct Stat {
    double mean = 0.0;
    double std = 0.0;  // population std across seeds
    double median = 0.0;
};

Stat describe(const std::vector<double>& values);

struct CellResult {
    CellSpec spec;
    std::vector<CellRun> runs;  // in config seed order
    std::optional<Stat> mse;
    std::optional<Stat> mse_squared;
    std::optional<Stat> accuracy;
    std::size_t failures = 0;
};

struct MatrixResult {
    std::string config_digest;
    std::vector<std::uint64_t> seeds;
    std::vector<CellResult> cells;
    std::vector<double> prepare_seconds;  // per seed
};

/// Runs every configured cell (or only those listed in `only`) for every bench seed.
/// Work items run on up to `jobs` threads; results do not depend on execution order.
/// A failing run is recorded in its cell and the matrix continues.
MatrixResult run_matrix(const ExperimentConfig& config, const std::vector<std::string>& only = {}, int jobs = 1);

/// Deterministic results document (no wall-clock values).
nlohmann::json results_json(const MatrixResult& result);
/// Wall-clock statistics, kept apart from the results so those stay byte-reproducible.
nlohmann::json timing_json(const MatrixResult& result);
/// Plain-text comparison tables (optimizers, MEKF extensions, DME criteria) from a
/// results document. Cells missing from the document are left out of the tables.
std::string comparison_tables(const nlohmann::json& results);

nlohmann::json run_result_json(const RunResult& result);

}  // namespace onadapt
