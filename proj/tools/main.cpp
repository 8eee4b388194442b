#include <CLI11.hpp>

#include <Eigen/Dense>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>

#include "adml/errors.hpp"
#include "adml/experiments.hpp"
#include "adml/matrix_io.hpp"
#include "adml/pgmm.hpp"

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << content;
}

struct McCliOptions {
    adml::McConfig config;
    std::string out_csv;
    std::string out_json;
};

void add_common_mc_flags(CLI::App* cmd, McCliOptions& opt) {
    cmd->add_option("--reps", opt.config.replications, "Monte Carlo replications")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--folds", opt.config.folds, "cross-fitting folds")
        ->check(CLI::Range(2, 1000))
        ->capture_default_str();
    cmd->add_option("--seed", opt.config.seed, "master seed")->capture_default_str();
    cmd->add_option("--threads", opt.config.threads,
                    "worker threads (0 = logical cores)")
        ->capture_default_str();
    cmd->add_option("--c1", opt.config.c1,
                    "penalty multiplier (0 = per-design default)")
        ->capture_default_str();
    cmd->add_option("--c0", opt.config.c0, "intercept penalty factor")
        ->capture_default_str();
    cmd->add_option("--out-csv", opt.out_csv, "summary table path")
        ->capture_default_str();
    cmd->add_option("--out-json", opt.out_json, "config sidecar path")
        ->capture_default_str();
}

int finish_mc_run(const adml::McConfig& config, const adml::McSummary& summary,
                  const McCliOptions& opt) {
    const std::string csv = adml::summary_to_csv(summary);
    std::cout << csv;
    if (!opt.out_csv.empty()) write_text(opt.out_csv, csv);
    if (!opt.out_json.empty()) write_text(opt.out_json, adml::config_to_json(config, summary));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Debiased estimation of functionals of IV regressions"};
    app.require_subcommand(1);
    app.set_config("--config", "", "key-value config file; flags take precedence");
    app.allow_config_extras(false);

    // mc-avg-deriv
    McCliOptions avg;
    avg.config.design = adml::McDesign::avg_derivative;
    avg.config.replications = 200;
    avg.out_csv = "avg_deriv_summary.csv";
    auto* cmd_avg = app.add_subcommand(
        "mc-avg-deriv", "Average-derivative coverage experiment (double lasso)");
    cmd_avg->add_option("--k", avg.config.k, "number of regressors")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd_avg->add_option("--n", avg.config.n, "sample size per replication")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd_avg->add_option("--degree", avg.config.poly_degree, "dictionary degree")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd_avg->add_option("--stage1-penalty", avg.config.stage1_penalty,
                        "first-stage lasso penalty")
        ->capture_default_str();
    add_common_mc_flags(cmd_avg, avg);

    // mc-elasticity
    McCliOptions ela;
    ela.config.design = adml::McDesign::elasticity;
    ela.config.replications = 100;
    ela.out_csv = "elasticity_summary.csv";
    auto* cmd_ela = app.add_subcommand(
        "mc-elasticity", "Own-price elasticity coverage experiment (kernel IV)");
    cmd_ela->add_option("--J", ela.config.J, "inside products per market")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd_ela->add_option("--T", ela.config.T, "markets per replication")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd_ela->add_option("--target", ela.config.target_product, "product index")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd_ela->add_option("--theta0-presim", ela.config.presim_T,
                        "presimulation size for the reference elasticity")
        ->check(CLI::Range(1000, 100000000))
        ->capture_default_str();
    cmd_ela->add_option("--bandwidth-scale", ela.config.bandwidth_scale,
                        "kernel bandwidth scale factor")
        ->capture_default_str();
    cmd_ela->add_option("--ridge1", ela.config.kiv_ridge1, "stage-1 kernel ridge")
        ->capture_default_str();
    cmd_ela->add_option("--ridge2", ela.config.kiv_ridge2, "stage-2 kernel ridge")
        ->capture_default_str();
    add_common_mc_flags(cmd_ela, ela);

    // solve-pgmm
    std::string g_path, m_path, omega_path;
    std::string rho_path = "rho.csv";
    std::string diag_path = "diagnostics.json";
    double lambda = -1.0, c1 = -1.0, c0 = 0.1, tol = 1e-6;
    int n_obs = 0, max_sweeps = 1000000;
    bool adaptive = false;
    auto* cmd_solve = app.add_subcommand(
        "solve-pgmm", "Solve one penalized minimum-distance problem from CSV inputs");
    cmd_solve->add_option("--G", g_path, "q x p moment matrix CSV")->required();
    cmd_solve->add_option("--M", m_path, "q-vector target CSV")->required();
    cmd_solve->add_option("--Omega", omega_path, "q x q weight CSV (default identity)");
    cmd_solve->add_option("--lambda", lambda, "absolute penalty level");
    cmd_solve->add_option("--c1", c1, "penalty multiplier; needs --n");
    cmd_solve->add_option("--n", n_obs, "observation count behind the moments");
    cmd_solve->add_option("--c0", c0, "intercept penalty factor")->capture_default_str();
    cmd_solve->add_flag("--adaptive", adaptive, "pilot fit then adaptive reweighting");
    cmd_solve->add_option("--tol", tol, "coordinate-change tolerance")
        ->capture_default_str();
    cmd_solve->add_option("--max-sweeps", max_sweeps, "sweep cap")->capture_default_str();
    cmd_solve->add_option("--out-rho", rho_path, "solution vector path")
        ->capture_default_str();
    cmd_solve->add_option("--out-diag", diag_path, "diagnostics path")
        ->capture_default_str();

    // simulate-demand
    int sim_J = 2, sim_T = 100;
    std::uint64_t sim_seed = 1;
    std::string sim_out = "markets.csv";
    auto* cmd_sim = app.add_subcommand("simulate-demand",
                                       "Write a simulated market panel as CSV");
    cmd_sim->add_option("--J", sim_J, "inside products")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd_sim->add_option("--T", sim_T, "markets")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd_sim->add_option("--seed", sim_seed, "seed")->capture_default_str();
    cmd_sim->add_option("--out", sim_out, "output path")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (cmd_avg->parsed()) {
            const adml::McSummary s = adml::run_avg_derivative_mc(avg.config);
            return finish_mc_run(avg.config, s, avg);
        }
        if (cmd_ela->parsed()) {
            const adml::McSummary s = adml::run_elasticity_mc(ela.config);
            return finish_mc_run(ela.config, s, ela);
        }
        if (cmd_sim->parsed()) {
            const auto markets =
                adml::simulate_logit_markets(sim_J, sim_T, adml::DemandParams{}, sim_seed);
            write_text(sim_out, adml::markets_to_csv(markets));
            std::cout << "wrote " << sim_out << "\n";
            return 0;
        }
        if (cmd_solve->parsed()) {
            adml::MomentSystem sys;
            sys.G = adml::read_matrix_csv(g_path);
            sys.M = adml::read_vector_csv(m_path);
            if (!omega_path.empty()) {
                const Eigen::MatrixXd om = adml::read_matrix_csv(omega_path);
                sys.omega = (om.cols() == 1 || om.rows() == 1)
                                ? adml::Weight::diagonal(
                                      om.cols() == 1 ? Eigen::VectorXd(om.col(0))
                                                     : Eigen::VectorXd(om.row(0).transpose()))
                                : adml::Weight::dense(om);
            } else {
                sys.omega = adml::Weight::identity(sys.q());
            }

            adml::PenaltyConfig pen;
            if (lambda >= 0.0 && c1 >= 0.0) {
                std::cerr << "error: give either --lambda or --c1, not both\n";
                return kExitUsage;
            }
            if (lambda >= 0.0) {
                pen = adml::PenaltyConfig::fixed(lambda, c0);
            } else if (c1 >= 0.0) {
                if (n_obs < 1) {
                    std::cerr << "error: --c1 requires --n\n";
                    return kExitUsage;
                }
                pen = adml::PenaltyConfig::from_c1(c1, sys.q(), n_obs, c0);
            } else {
                pen = adml::PenaltyConfig::fixed(0.0, c0);
            }

            adml::SolverConfig solver;
            solver.tol = tol;
            solver.max_sweeps = max_sweeps;
            const adml::RieszFit fit =
                adaptive ? adml::adaptive_solve(sys, pen, solver)
                         : adml::solve_active_set(sys, pen, solver);
            adml::write_vector_csv(rho_path, fit.rho);

            nlohmann::json diag;
            diag["lambda"] = pen.lambda;
            diag["adaptive"] = adaptive;
            diag["active_set"] = fit.active_set;
            diag["kkt_max_violation"] = fit.kkt_max_violation;
            diag["sweeps_used"] = fit.sweeps_used;
            diag["outer_iters_used"] = fit.outer_iters_used;
            diag["objective"] =
                fit.objective_trace.empty() ? 0.0 : fit.objective_trace.back();
            diag["all_zero"] = fit.active_set.empty();
            if (fit.active_set.empty())
                diag["note"] = "penalty shrank every coordinate to zero";
            write_text(diag_path, diag.dump(2) + "\n");
            std::cout << "wrote " << rho_path << " and " << diag_path << "\n";
            return 0;
        }
    } catch (const adml::DimensionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    }
    return 0;
}
