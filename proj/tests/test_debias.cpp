#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <set>

#include "adml/debias.hpp"
#include "adml/errors.hpp"
#include "adml/rng.hpp"

using namespace adml;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Constant-prediction model used by structural tests.
class ConstGamma : public GammaModel {
public:
    ConstGamma(int dim, double c) : dim_(dim), c_(c) {}
    int input_dim() const override { return dim_; }
    double predict(const Eigen::VectorXd&) const override { return c_; }
    Eigen::VectorXd gradient(const Eigen::VectorXd&) const override {
        return Eigen::VectorXd::Zero(dim_);
    }

private:
    int dim_;
    double c_;
};

GammaFitter cheap_double_lasso_fitter(const Dictionary& xd, const Dictionary& zd,
                                      double penalty = 1e-6) {
    return [xd, zd, penalty](int fold, const VectorXd& Y, const MatrixXd& X,
                             const MatrixXd& Z) {
        DoubleLassoConfig cfg;
        cfg.stage1_penalty = penalty;
        cfg.cv_grid_size = 1;
        cfg.cv_grid_min = penalty;
        cfg.cv_seed = static_cast<std::uint64_t>(fold);
        return fit_double_lasso(Y, X, Z, xd, zd, cfg);
    };
}

}  // namespace

TEST_SUITE("debias") {

TEST_CASE("fold plans") {
    const FoldPlan p10 = make_folds(10, 5, 1);
    std::vector<int> sizes(5, 0);
    for (int f : p10.assignment) ++sizes[static_cast<std::size_t>(f)];
    for (int s : sizes) CHECK(s == 2);

    const FoldPlan p11 = make_folds(11, 5, 1);
    std::vector<int> sizes11(5, 0);
    for (int f : p11.assignment) ++sizes11[static_cast<std::size_t>(f)];
    std::sort(sizes11.begin(), sizes11.end());
    CHECK(sizes11 == std::vector<int>{2, 2, 2, 2, 3});

    CHECK(make_folds(10, 5, 7).assignment == make_folds(10, 5, 7).assignment);
    CHECK(make_folds(10, 5, 7).assignment != make_folds(10, 5, 8).assignment);
    CHECK_THROWS_AS(make_folds(3, 5, 1), DimensionError);

    // Folds partition the index set.
    std::set<int> seen;
    for (int l = 0; l < 5; ++l)
        for (int i : p11.in_fold(l)) seen.insert(i);
    CHECK(seen.size() == 11);
}

TEST_CASE("plugin estimate") {
    // gamma with a constant unit derivative: theta exactly 1, zero SE.
    const auto dict = Dictionary::polynomial(1, 1, false);
    VectorXd beta(2);
    beta << 0.0, 1.0;
    auto gamma = std::make_shared<DictionaryGamma>(dict, beta);
    const auto spec = avg_derivative_spec(0);

    const FoldPlan folds = make_folds(20, 4, 3);
    MatrixXd X(20, 1);
    Rng rng(5);
    for (int i = 0; i < 20; ++i) X(i, 0) = rng.normal();
    std::vector<GammaPtr> gammas(4, gamma);
    const DebiasedResult r = plugin_estimate(*spec, gammas, X, folds);
    CHECK(r.theta_hat == doctest::Approx(1.0));
    CHECK(r.se == doctest::Approx(0.0));

    // Permutation invariance for a fixed fit.
    MatrixXd Xp = X.colwise().reverse();
    const DebiasedResult rp = plugin_estimate(*spec, gammas, Xp, folds);
    CHECK(rp.theta_hat == doctest::Approx(r.theta_hat));
}

TEST_CASE("influence values are centered and the variance is nonnegative") {
    Rng rng(7);
    const int n = 60;
    MatrixXd X(n, 1), Z(n, 1);
    VectorXd Y(n);
    for (int i = 0; i < n; ++i) {
        X(i, 0) = rng.normal();
        Z(i, 0) = X(i, 0);
        Y[i] = X(i, 0) + 0.3 * rng.normal();
    }
    const auto dict = Dictionary::polynomial(1, 2, false);
    const FoldPlan folds = make_folds(n, 3, 11);
    const auto spec = avg_derivative_spec(0);

    std::vector<GammaPtr> gammas;
    std::vector<std::function<double(const VectorXd&)>> alphas;
    for (int l = 0; l < 3; ++l) {
        VectorXd beta(3);
        beta << 0.1 * l, 1.0, 0.05 * l;
        gammas.push_back(std::make_shared<DictionaryGamma>(dict, beta));
        alphas.push_back([](const VectorXd& z) { return z[0]; });
    }
    const DebiasedResult r = debias_with_nuisances(*spec, Y, X, Z, folds, gammas, alphas);
    CHECK(std::abs(r.psi_values.mean()) < 1e-10);
    CHECK(r.variance_hat >= 0.0);
    CHECK(r.ci_lo < r.ci_hi);
}

TEST_CASE("degenerate alpha collapses the debiased estimate to the plug-in") {
    Rng rng(13);
    const int n = 150;
    MatrixXd X(n, 1), Z(n, 1);
    VectorXd Y(n);
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        X(i, 0) = x;
        Z(i, 0) = x;
        Y[i] = x + x * x + 0.2 * rng.normal();
    }
    const auto dict = Dictionary::polynomial(1, 2, false);
    const auto spec = avg_derivative_spec(0);
    const FoldPlan folds = make_folds(n, 3, 17);

    LinearDebiasConfig cfg;
    cfg.c1 = 1e6;  // shrink every Riesz coefficient to zero
    // With the pilot fully shrunk the residual moments are degenerate, so skip
    // the weight re-estimation stage.
    cfg.pgmm.two_stage = false;
    const auto out = debias_linear(*spec, Y, X, Z, dict, dict,
                                   cheap_double_lasso_fitter(dict, dict), cfg, folds);
    for (const auto& rho : out.rho_per_fold) CHECK(rho.isZero(0.0));
    CHECK(out.debiased.theta_hat == doctest::Approx(out.plugin.theta_hat).epsilon(1e-12));
}

TEST_CASE("exact-identification toy: consistency and root-n standard errors") {
    // Z = X standard normal, gamma0(x) = x + x^2 lies in the span, theta0 = 1.
    const auto dict = Dictionary::polynomial(1, 2, false);
    const auto spec = avg_derivative_spec(0);
    auto run = [&](int n, std::uint64_t seed) {
        Rng rng(seed);
        MatrixXd X(n, 1), Z(n, 1);
        VectorXd Y(n);
        for (int i = 0; i < n; ++i) {
            const double x = rng.normal();
            X(i, 0) = x;
            Z(i, 0) = x;
            Y[i] = x + x * x + 0.5 * rng.normal();
        }
        LinearDebiasConfig cfg;
        cfg.c1 = 1e-3;
        const FoldPlan folds = make_folds(n, 5, seed + 1);
        return debias_linear(*spec, Y, X, Z, dict, dict,
                             cheap_double_lasso_fitter(dict, dict), cfg, folds);
    };
    const auto small = run(500, 21);
    const auto large = run(2000, 22);
    CHECK(std::abs(small.debiased.theta_hat - 1.0) < 0.35);
    CHECK(std::abs(large.debiased.theta_hat - 1.0) < 0.2);
    const double ratio = small.debiased.se / large.debiased.se;
    CHECK(ratio > 1.4);
    CHECK(ratio < 2.9);
}

TEST_CASE("known-representer oracle reproduces the semiparametric standard error") {
    // Exogenous design: alpha0(x) = x for standard normal X (score function),
    // gamma0(x) = x + x^2, noise sd 0.5. The influence variance is
    // Var(2X) + E[X^2] * 0.25 = 4.25.
    const double v_true = 4.25;
    const int n = 400, reps = 100;
    const auto dict = Dictionary::polynomial(1, 2, false);
    const auto spec = avg_derivative_spec(0);
    const double se_true = std::sqrt(v_true / n);

    double mean_se = 0.0;
    double mean_theta = 0.0;
    for (int r = 0; r < reps; ++r) {
        Rng rng(1000 + static_cast<std::uint64_t>(r));
        MatrixXd X(n, 1), Z(n, 1);
        VectorXd Y(n);
        for (int i = 0; i < n; ++i) {
            const double x = rng.normal();
            X(i, 0) = x;
            Z(i, 0) = x;
            Y[i] = x + x * x + 0.5 * rng.normal();
        }
        const FoldPlan folds = make_folds(n, 5, 7000 + static_cast<std::uint64_t>(r));
        std::vector<GammaPtr> gammas;
        std::vector<std::function<double(const VectorXd&)>> alphas;
        auto fitter = cheap_double_lasso_fitter(dict, dict);
        for (int l = 0; l < folds.L; ++l) {
            const auto train = folds.out_of_fold(l);
            VectorXd Yt(train.size());
            MatrixXd Xt(train.size(), 1), Zt(train.size(), 1);
            for (std::size_t i = 0; i < train.size(); ++i) {
                Yt[static_cast<Eigen::Index>(i)] = Y[train[i]];
                Xt.row(static_cast<Eigen::Index>(i)) = X.row(train[i]);
                Zt.row(static_cast<Eigen::Index>(i)) = Z.row(train[i]);
            }
            gammas.push_back(fitter(l, Yt, Xt, Zt));
            alphas.push_back([](const VectorXd& z) { return z[0]; });
        }
        const DebiasedResult res =
            debias_with_nuisances(*spec, Y, X, Z, folds, gammas, alphas);
        mean_se += res.se / reps;
        mean_theta += res.theta_hat / reps;
    }
    CHECK(std::abs(mean_theta - 1.0) < 0.05);
    CHECK(mean_se / se_true > 0.8);
    CHECK(mean_se / se_true < 1.2);
}

TEST_CASE("fold exclusion audit for the linear path") {
    Rng rng(31);
    const int n = 90;
    MatrixXd X(n, 1), Z(n, 1);
    VectorXd Y(n);
    for (int i = 0; i < n; ++i) {
        X(i, 0) = rng.normal();
        Z(i, 0) = X(i, 0);
        Y[i] = X(i, 0);
    }
    const auto dict = Dictionary::polynomial(1, 2, false);
    const auto spec = avg_derivative_spec(0);
    const FoldPlan folds = make_folds(n, 3, 37);
    LinearDebiasConfig cfg;
    const auto out = debias_linear(*spec, Y, X, Z, dict, dict,
                                   cheap_double_lasso_fitter(dict, dict), cfg, folds);
    for (int l = 0; l < folds.L; ++l) {
        const auto eval = folds.in_fold(l);
        const auto& train = out.train_indices[static_cast<std::size_t>(l)];
        for (int i : eval)
            CHECK(std::find(train.begin(), train.end(), i) == train.end());
    }
}

TEST_CASE("result serialization") {
    DebiasedResult r;
    r.theta_hat = 1.25;
    r.variance_hat = 4.0;
    r.se = 0.2;
    r.ci_lo = 1.25 - 1.959964 * 0.2;
    r.ci_hi = 1.25 + 1.959964 * 0.2;
    r.psi_values = Eigen::VectorXd::Zero(100);
    r.per_fold = {{0, 3, 1e-7, false}, {1, 4, 2e-7, false}};

    const std::string json = result_to_json(r);
    CHECK(json.find("\"theta_hat\": 1.25") != std::string::npos);
    CHECK(json.find("\"se\": 0.2") != std::string::npos);
    CHECK(json.find("\"per_fold\"") != std::string::npos);

    const std::string row = result_to_csv_row(r);
    CHECK(row.find("1.25,0.2") == 0);
    const std::string header = result_csv_header();
    const auto commas = std::count(row.begin(), row.end(), ',');
    const auto header_commas = std::count(header.begin(), header.end(), ',');
    CHECK(commas == header_commas);
}

TEST_CASE("pair fits: count and leak-free double cross-fitting") {
    DemandParams params;
    const int T = 40;
    const auto markets = simulate_logit_markets(2, T, params, 41);
    const FoldPlan folds = make_folds(T, 5, 43);
    const OmegaLayout lay = markets[0].layout();

    std::vector<std::vector<int>> recorded_train_sets;
    PooledGammaFitter mock = [&](const std::vector<int>& train) {
        recorded_train_sets.push_back(train);
        return std::make_shared<ConstGamma>(lay.dim(), 0.0);
    };
    const PairFits pairs = fit_pair_gammas(folds, mock);
    CHECK(pairs.count() == 10);
    CHECK(recorded_train_sets.size() == 10);

    // Pair (a, b) is shared with (b, a).
    CHECK(pairs.at(1, 3).get() == pairs.at(3, 1).get());

    const auto d_dict = Dictionary::polynomial(lay.dim(), 1, false);
    const auto b_dict = Dictionary::polynomial(lay.dim(), 1, false);
    const MarketFunctional spec = elasticity_functional(1);
    const NonlinearMoments nm =
        build_M_nonlinear(spec, markets, d_dict, b_dict, folds, pairs, 1);

    // No summand's market may appear in the training set of the fit used.
    for (const auto& [t, l, lp] : nm.evaluations) {
        const auto key = std::minmax(l, lp);
        const auto& train = pairs.train_markets.at(key);
        CHECK(std::find(train.begin(), train.end(), t) == train.end());
        CHECK(folds.assignment[static_cast<std::size_t>(t)] == lp);
        CHECK(l != lp);
    }

    // Every off-fold market appears exactly once per test fold.
    for (int l = 0; l < folds.L; ++l) {
        int count = 0;
        for (const auto& [t, fl, lp] : nm.evaluations)
            if (fl == l) ++count;
        CHECK(count == static_cast<int>(folds.out_of_fold(l).size()));
    }
}

TEST_CASE("linear functional through the nonlinear target builder") {
    DemandParams params;
    const int T = 30;
    const auto markets = simulate_logit_markets(2, T, params, 47);
    const FoldPlan folds = make_folds(T, 5, 53);
    const OmegaLayout lay = markets[0].layout();
    const auto d_dict = Dictionary::polynomial(lay.dim(), 1, false);
    const auto b_dict = d_dict;

    // Evaluation functional m(W, gamma) = gamma(omega_1): its Gateaux rows are
    // d(omega_1) regardless of gamma.
    MarketFunctional linear_spec;
    linear_spec.is_linear = true;
    linear_spec.value = [](const Market& m, const GammaModel& g) {
        return g.predict(build_omega(m, 1).values);
    };
    linear_spec.gateaux_all = [](const Market& m, const GammaModel&, const Dictionary& d) {
        return d.evaluate(build_omega(m, 1).values);
    };

    PooledGammaFitter mock = [&](const std::vector<int>&) {
        return std::make_shared<ConstGamma>(lay.dim(), 0.0);
    };
    const PairFits pairs = fit_pair_gammas(folds, mock);
    const NonlinearMoments nm =
        build_M_nonlinear(linear_spec, markets, d_dict, b_dict, folds, pairs, 1);

    for (int l = 0; l < folds.L; ++l) {
        // Direct off-fold average of d(omega_1).
        const auto idx = folds.out_of_fold(l);
        VectorXd direct = VectorXd::Zero(d_dict.size());
        for (int t : idx)
            direct += d_dict.evaluate(build_omega(markets[static_cast<std::size_t>(t)], 1).values);
        direct /= static_cast<double>(idx.size());
        const MomentSystem sys = nm.data_per_fold[static_cast<std::size_t>(l)].system_identity();
        CHECK((sys.M - direct).lpNorm<Eigen::Infinity>() < 1e-14);
    }
}

TEST_CASE("nonlinear pipeline smoke with the true inverse demand") {
    DemandParams params;
    const int T = 40;
    const auto markets = simulate_logit_markets(1, T, params, 59);
    const OmegaLayout lay = markets[0].layout();
    const FoldPlan folds = make_folds(T, 4, 61);
    const auto d_dict = Dictionary::polynomial(lay.dim(), 2, true);
    const auto b_dict = Dictionary::polynomial(lay.dim(), 1, false);

    // The structural function identified from data carries the mean of xi in
    // its intercept, leaving conditionally mean-zero residuals.
    const VectorXd coef = logit_gamma_coefficients(lay, params);
    const auto lin = Dictionary::polynomial(lay.dim(), 1, false);
    VectorXd beta = VectorXd::Zero(lin.size());
    beta[0] = params.xi_mean;
    for (int c = 0; c < lay.dim(); ++c) beta[1 + c] = coef[c];
    auto truth = std::make_shared<DictionaryGamma>(lin, beta);
    PooledGammaFitter oracle_fitter = [&](const std::vector<int>&) { return truth; };

    NonlinearDebiasConfig cfg;
    cfg.c1 = 1e-7;
    const auto out = debias_nonlinear(markets, d_dict, b_dict, oracle_fitter, cfg, folds, 1);
    CHECK(out.pair_fit_count == 6);  // C(4, 2)
    CHECK(std::isfinite(out.debiased.theta_hat));
    CHECK(out.debiased.se > 0.0);
    CHECK(std::abs(out.debiased.psi_values.mean()) < 1e-10);

    // With the exact gamma the plug-in and the oracle elasticities agree.
    double oracle_mean = 0.0;
    for (const auto& m : markets)
        oracle_mean += logit_elasticity_oracle(params.beta_p, m.prices[0], m.shares[1]) / T;
    CHECK(out.plugin.theta_hat == doctest::Approx(oracle_mean).epsilon(1e-10));
}

TEST_CASE("ill-conditioned markets are excluded and counted") {
    DemandParams params;
    const int T = 25;
    const auto markets = simulate_logit_markets(1, T, params, 67);
    const OmegaLayout lay = markets[0].layout();
    const FoldPlan folds = make_folds(T, 5, 71);
    const auto d_dict = Dictionary::polynomial(lay.dim(), 1, false);
    const auto b_dict = d_dict;

    // gamma linear in the stored outside share, with slope matching market 0's
    // log-share Jacobian: the response matrix is exactly singular there.
    const double L11 = 1.0 / markets[0].shares[1] + 1.0 / markets[0].shares[0];
    const auto lin = Dictionary::polynomial(lay.dim(), 1, false);
    VectorXd beta = VectorXd::Zero(lin.size());
    beta[1 + lay.share_pos(0)] = -L11;
    auto crafted = std::make_shared<DictionaryGamma>(lin, beta);
    PooledGammaFitter fitter = [&](const std::vector<int>&) { return crafted; };

    NonlinearDebiasConfig cfg;
    const auto out = debias_nonlinear(markets, d_dict, b_dict, fitter, cfg, folds, 1);
    // Market 0 enters the target sums of four folds and one evaluation pass.
    CHECK(out.excluded_m_markets >= 4);
    CHECK(out.debiased.excluded >= 1);
    CHECK(static_cast<int>(out.debiased.psi_values.size()) <= T - 1);
}

}  // TEST_SUITE
