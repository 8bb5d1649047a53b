#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "onadapt/data.hpp"
#include "onadapt/dme.hpp"
#include "onadapt/optimizers.hpp"
#include "onadapt/train.hpp"

namespace onadapt {

enum class CalibrationPass { adapted, frozen };

/// Everything needed to build an EpochCriterion for one run.
struct CriterionConfig {
    CriterionKind kind = CriterionKind::proposed;
    double q1 = 0.5;
    double q2 = 0.999;
    bool no_anomaly = false;  // xi2 = +inf
    int fixed_epochs = 2;
    std::array<double, 3> probabilities{0.5, 0.499, 0.001};
    std::uint64_t seed = 0;
    CalibrationPass calibration = CalibrationPass::adapted;

    void validate() const;
};

struct ModelConfig {
    std::string kind = "linear";
    Index n = 20;
    Index m = 10;
    std::optional<Index> output_dim;   // defaults to the measurement dimension
    Index hidden = 8;
    Index classifier_hidden = 8;
    std::optional<Index> classes;      // defaults to the number of intent labels in the data
    bool bias = true;
    std::optional<std::vector<std::string>> mask;  // block-name prefixes; defaults per model kind
};

struct ExperimentConfig {
    std::optional<std::string> csv;
    DriftConfig generator;
    ModelConfig model;
    TrainOptions train;
    Index train_stride = 1;  // use every k-th training window
    AdapterConfig adapter;
    double sgd_lr = 0.01;   // sgd and momentum
    double adam_lr = 0.001; // adam and amsgrad
    CriterionConfig dme;
    std::uint64_t seed = 0;
    std::array<double, 3> split{0.8, 0.1, 0.1};
    bool carry_state = false;
    std::vector<std::uint64_t> bench_seeds;
    std::vector<std::string> bench_cells;
    int jobs = 1;

    /// Canonical JSON (all defaults filled in).
    nlohmann::json document;
};

/// Defaults for every field: the drift-linear benchmark with a linear predictor.
nlohmann::json default_config();

/// Merges `doc` over the defaults and validates every field before returning.
/// Unknown keys and out-of-range values throw ConfigError naming the field path.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::string& path);

/// The configured hyperparameters for `kind`, with the learning rate of its family.
AdapterConfig adapter_for(const ExperimentConfig& config, AdapterKind kind);

/// Stable 64-bit FNV-1a digest of the canonical config document, as 16 hex digits.
std::string config_digest(const ExperimentConfig& config);

}  // namespace onadapt
