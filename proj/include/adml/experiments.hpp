#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "adml/debias.hpp"

namespace adml {

enum class McDesign { avg_derivative, elasticity };

struct McConfig {
    McDesign design = McDesign::avg_derivative;

    // Average-derivative design.
    int k = 2;
    int n = 1000;

    // Elasticity design.
    int J = 2;
    int T = 100;
    int target_product = 1;
    int presim_T = 100000;

    int replications = 200;
    int folds = 5;
    bool run_plugin = true;
    bool run_adml = true;
    std::uint64_t seed = 1;
    int threads = 0;  // 0 = hardware concurrency

    // Hyperparameters; c1 <= 0 selects the per-design default.
    double c1 = 0.0;
    double c0 = 0.1;
    int poly_degree = 3;          // avg-derivative dictionaries
    double stage1_penalty = 1e-4;
    int cv_grid_size = 100;       // stage-2 lasso CV grid
    double cv_grid_min = 1e-7;
    double cv_grid_max = 1e-1;
    double bandwidth_scale = 25.0;
    double kiv_ridge1 = 3e-6;
    double kiv_ridge2 = 3e-6;

    // Deterministic-limit hooks for the average-derivative design.
    double noise_scale = 1.0;
    bool gamma_in_span = false;
};

struct RepRecord {
    int rep = 0;
    bool ok = false;
    double theta = 0.0;
    double se = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    std::string error;
};

struct McRecords {
    double theta0 = 0.0;
    std::vector<std::string> estimator_names;
    std::vector<std::vector<RepRecord>> records;  // [estimator][replication]
};

struct EstimatorSummary {
    std::string name;
    int replications = 0;
    int failures = 0;
    double mean_theta = 0.0;
    double abs_bias = 0.0;
    double median_se = 0.0;
    double coverage = 0.0;
};

struct McSummary {
    double theta0 = 0.0;
    int replications = 0;
    std::vector<EstimatorSummary> estimators;
};

// Default penalty multipliers: 1e-2 / 1e-3 / 1e-4 for k up to 3 / up to 7 /
// beyond, and 1e-7 for the elasticity design.
double default_c1(const McConfig& config);

// |bias|, median SE (midpoint convention), and 95% coverage over successful
// replications.
McSummary summarize(const McRecords& records);

McRecords run_avg_derivative_records(const McConfig& config);
McRecords run_elasticity_records(const McConfig& config);

McSummary run_avg_derivative_mc(const McConfig& config);
McSummary run_elasticity_mc(const McConfig& config);

// Mean closed-form own-price elasticity of product 1 over a large simulation.
double approximate_theta0_elasticity(int J, int presim_T, std::uint64_t seed);

// One header row plus one row per estimator; bitwise deterministic.
std::string summary_to_csv(const McSummary& summary);
// Config echo plus seed, for the run sidecar.
std::string config_to_json(const McConfig& config, const McSummary& summary);

}  // namespace adml
