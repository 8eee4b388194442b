#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <map>
#include <tuple>
#include <vector>

#include "adml/basis.hpp"
#include "adml/demand.hpp"
#include "adml/functionals.hpp"
#include "adml/mliv.hpp"
#include "adml/pgmm.hpp"

namespace adml {

struct FoldPlan {
    int n = 0;
    int L = 0;
    std::vector<int> assignment;  // observation -> fold

    std::vector<int> in_fold(int l) const;
    std::vector<int> out_of_fold(int l) const;
};

// Balanced random partition, deterministic in the seed.
FoldPlan make_folds(int n, int L, std::uint64_t seed);

struct FoldDiagnostics {
    int fold = 0;
    int alpha_active = 0;       // nonzeros in the Riesz coefficient vector
    double alpha_kkt = 0.0;     // certified stationarity residual
    bool fell_back_identity = false;
};

struct DebiasedResult {
    double theta_hat = 0.0;
    double variance_hat = 0.0;  // mean of squared influence values
    double se = 0.0;            // sqrt(variance_hat / n)
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    Eigen::VectorXd psi_values;
    std::vector<FoldDiagnostics> per_fold;
    int excluded = 0;  // observations dropped (ill-conditioned markets)
};

// 95% normal-quantile width used throughout.
inline constexpr double kNormal975 = 1.959964;

// One JSON object with the estimate, standard error, interval and per-fold
// diagnostics; and a flat one-line CSV row (with optional header).
std::string result_to_json(const DebiasedResult& result);
std::string result_csv_header();
std::string result_to_csv_row(const DebiasedResult& result);

// gamma fitter for scalar-outcome data; the fold index lets callers vary
// internal seeds deterministically.
using GammaFitter = std::function<GammaPtr(
    int fold, const Eigen::VectorXd& Y, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z)>;

// Sample average of m(W_i, gamma_fold(i)) with the naive standard error
// sd(m)/sqrt(n); no influence correction.
DebiasedResult plugin_estimate(const LinearFunctional& spec,
                               const std::vector<GammaPtr>& gamma_per_fold,
                               const Eigen::MatrixXd& X, const FoldPlan& folds);

// Influence assembly at given nuisances: one gamma and one alpha per fold.
DebiasedResult debias_with_nuisances(
    const LinearFunctional& spec, const Eigen::VectorXd& Y, const Eigen::MatrixXd& X,
    const Eigen::MatrixXd& Z, const FoldPlan& folds, const std::vector<GammaPtr>& gammas,
    const std::vector<std::function<double(const Eigen::VectorXd&)>>& alphas);

struct LinearDebiasConfig {
    double c1 = 1e-2;   // penalty multiplier; lambda = c1 sqrt(log q / n_train)
    double c0 = 0.1;    // intercept penalty factor
    PgmmOptions pgmm;
    SolverConfig solver{1e-6, 500000, -1};  // generous cap for near-collinear bases
};

struct LinearDebiasOutputs {
    DebiasedResult debiased;
    DebiasedResult plugin;
    std::vector<GammaPtr> gammas;                 // per fold
    std::vector<Eigen::VectorXd> rho_per_fold;    // Riesz coefficients
    std::vector<std::vector<int>> train_indices;  // per fold, for audits
};

// Cross-fitted debiased estimator for a linear functional: per fold, gamma and
// the Riesz representer (penalized minimum distance on off-fold moments with
// re-estimated diagonal weights) are fit off-fold and evaluated on-fold.
LinearDebiasOutputs debias_linear(const LinearFunctional& spec, const Eigen::VectorXd& Y,
                                  const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z,
                                  const Dictionary& d_dict, const Dictionary& b_dict,
                                  const GammaFitter& fitter, const LinearDebiasConfig& config,
                                  const FoldPlan& folds);

// ---- Nonlinear (market-level) path ----

// A functional of gamma over one market with Gateaux derivative rows in every
// dictionary direction. Throws SingularSystemError on ill-conditioned markets.
struct MarketFunctional {
    std::function<double(const Market&, const GammaModel&)> value;
    std::function<Eigen::VectorXd(const Market&, const GammaModel&, const Dictionary&)>
        gateaux_all;
    bool is_linear = false;
};

// Own-price elasticity of one product, averaged over markets.
MarketFunctional elasticity_functional(int target_j, double cond_limit = 1e12);

using PooledGammaFitter =
    std::function<GammaPtr(const std::vector<int>& train_markets)>;

struct PairFits {
    // Unordered fold pair (a < b) -> fit trained on markets outside both folds.
    std::map<std::pair<int, int>, GammaPtr> fits;
    std::map<std::pair<int, int>, std::vector<int>> train_markets;

    const GammaPtr& at(int a, int b) const;
    int count() const { return static_cast<int>(fits.size()); }
};

// C(L, 2) distinct fits; the (a, b) and (b, a) requests share one fit.
PairFits fit_pair_gammas(const FoldPlan& folds, const PooledGammaFitter& fitter);

struct NonlinearMoments {
    // Per test fold: rows over off-fold markets in ascending market order.
    std::vector<MomentData> data_per_fold;
    std::vector<std::vector<int>> rows_markets;   // market id per row
    std::vector<int> excluded_per_fold;           // singular-market skips
    // Structural audit trail: (market, fold, pair-partner fold) per summand.
    std::vector<std::tuple<int, int, int>> evaluations;
};

// Double cross-fitted target vectors: the derivative at markets of fold l' is
// evaluated under the fit that excludes both l and l'.
NonlinearMoments build_M_nonlinear(const MarketFunctional& spec,
                                   const std::vector<Market>& markets,
                                   const Dictionary& d_dict, const Dictionary& b_dict,
                                   const FoldPlan& folds, const PairFits& pairs,
                                   int target_j);

struct NonlinearDebiasConfig {
    double c1 = 1e-7;
    double c0 = 0.1;
    PgmmOptions pgmm;
    // The near-unpenalized solves of this pipeline can need long sweeps on
    // strongly correlated dictionaries.
    SolverConfig solver{1e-6, 2000000, -1};
    double cond_limit = 1e12;
};

struct NonlinearDebiasOutputs {
    DebiasedResult debiased;
    DebiasedResult plugin;
    std::vector<GammaPtr> fold_gammas;
    std::vector<Eigen::VectorXd> rho_per_fold;
    int pair_fit_count = 0;
    int excluded_m_markets = 0;  // exclusions during target-vector construction
};

// Full double cross-fitted pipeline for one product's average own-price
// elasticity: pair fits, per-fold targets and weights, penalized Riesz solve,
// fold fits, and the influence assembly.
NonlinearDebiasOutputs debias_nonlinear(const std::vector<Market>& markets,
                                        const Dictionary& d_dict, const Dictionary& b_dict,
                                        const PooledGammaFitter& fitter,
                                        const NonlinearDebiasConfig& config,
                                        const FoldPlan& folds, int target_j);

}  // namespace adml
