#include "adml/debias.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "adml/errors.hpp"
#include "adml/folds.hpp"
#include "adml/matrix_io.hpp"

namespace adml {

std::vector<int> FoldPlan::in_fold(int l) const {
    std::vector<int> out;
    for (int i = 0; i < n; ++i)
        if (assignment[static_cast<std::size_t>(i)] == l) out.push_back(i);
    return out;
}

std::vector<int> FoldPlan::out_of_fold(int l) const {
    std::vector<int> out;
    for (int i = 0; i < n; ++i)
        if (assignment[static_cast<std::size_t>(i)] != l) out.push_back(i);
    return out;
}

FoldPlan make_folds(int n, int L, std::uint64_t seed) {
    FoldPlan plan;
    plan.n = n;
    plan.L = L;
    plan.assignment = balanced_fold_assignment(n, L, seed);
    return plan;
}

namespace {

DebiasedResult finalize(Eigen::VectorXd values) {
    // values are m + correction per observation; theta centers them.
    DebiasedResult r;
    const double n = static_cast<double>(values.size());
    r.theta_hat = values.mean();
    r.psi_values = values.array() - r.theta_hat;
    r.variance_hat = r.psi_values.squaredNorm() / n;
    r.se = std::sqrt(r.variance_hat / n);
    r.ci_lo = r.theta_hat - kNormal975 * r.se;
    r.ci_hi = r.theta_hat + kNormal975 * r.se;
    return r;
}

}  // namespace

DebiasedResult plugin_estimate(const LinearFunctional& spec,
                               const std::vector<GammaPtr>& gamma_per_fold,
                               const Eigen::MatrixXd& X, const FoldPlan& folds) {
    if (static_cast<int>(gamma_per_fold.size()) != folds.L)
        throw DimensionError("one gamma per fold required");
    if (static_cast<int>(X.rows()) != folds.n)
        throw DimensionError("data rows must match the fold plan");
    Eigen::VectorXd m(folds.n);
    for (int i = 0; i < folds.n; ++i) {
        const int l = folds.assignment[static_cast<std::size_t>(i)];
        m[i] = spec.value(X.row(i).transpose(),
                          *gamma_per_fold[static_cast<std::size_t>(l)]);
    }
    DebiasedResult r = finalize(std::move(m));
    // Naive plug-in SE: sample standard deviation of the functional values.
    const double n = static_cast<double>(folds.n);
    const double sample_var = r.psi_values.squaredNorm() / (n - 1.0);
    r.se = std::sqrt(sample_var / n);
    r.variance_hat = sample_var;
    r.ci_lo = r.theta_hat - kNormal975 * r.se;
    r.ci_hi = r.theta_hat + kNormal975 * r.se;
    return r;
}

DebiasedResult debias_with_nuisances(
    const LinearFunctional& spec, const Eigen::VectorXd& Y, const Eigen::MatrixXd& X,
    const Eigen::MatrixXd& Z, const FoldPlan& folds, const std::vector<GammaPtr>& gammas,
    const std::vector<std::function<double(const Eigen::VectorXd&)>>& alphas) {
    if (static_cast<int>(gammas.size()) != folds.L ||
        static_cast<int>(alphas.size()) != folds.L)
        throw DimensionError("one gamma and one alpha per fold required");
    Eigen::VectorXd values(folds.n);
    for (int i = 0; i < folds.n; ++i) {
        const int l = folds.assignment[static_cast<std::size_t>(i)];
        const Eigen::VectorXd x = X.row(i).transpose();
        const Eigen::VectorXd z = Z.row(i).transpose();
        const GammaModel& g = *gammas[static_cast<std::size_t>(l)];
        values[i] = spec.value(x, g) +
                    alphas[static_cast<std::size_t>(l)](z) * (Y[i] - g.predict(x));
    }
    return finalize(std::move(values));
}

LinearDebiasOutputs debias_linear(const LinearFunctional& spec, const Eigen::VectorXd& Y,
                                  const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z,
                                  const Dictionary& d_dict, const Dictionary& b_dict,
                                  const GammaFitter& fitter, const LinearDebiasConfig& config,
                                  const FoldPlan& folds) {
    const int n = folds.n;
    if (static_cast<int>(Y.size()) != n || static_cast<int>(X.rows()) != n ||
        static_cast<int>(Z.rows()) != n)
        throw DimensionError("data rows must match the fold plan");

    // Dictionary features once for the whole sample.
    const Eigen::MatrixXd Dfeat = d_dict.evaluate_rows(X);
    const Eigen::MatrixXd Bfeat = b_dict.evaluate_rows(Z);

    LinearDebiasOutputs out;
    out.gammas.resize(static_cast<std::size_t>(folds.L));
    out.rho_per_fold.resize(static_cast<std::size_t>(folds.L));
    out.train_indices.resize(static_cast<std::size_t>(folds.L));
    std::vector<std::function<double(const Eigen::VectorXd&)>> alphas(
        static_cast<std::size_t>(folds.L));
    std::vector<FoldDiagnostics> diags;

    for (int l = 0; l < folds.L; ++l) {
        const std::vector<int> train = folds.out_of_fold(l);
        out.train_indices[static_cast<std::size_t>(l)] = train;
        const int nt = static_cast<int>(train.size());

        Eigen::VectorXd Yt(nt);
        Eigen::MatrixXd Xt(nt, X.cols()), Zt(nt, Z.cols());
        MomentData md;
        md.D.resize(nt, d_dict.size());
        md.B.resize(nt, b_dict.size());
        md.Mvals.resize(nt, d_dict.size());
        for (int i = 0; i < nt; ++i) {
            const int row = train[static_cast<std::size_t>(i)];
            Yt[i] = Y[row];
            Xt.row(i) = X.row(row);
            Zt.row(i) = Z.row(row);
            md.D.row(i) = Dfeat.row(row);
            md.B.row(i) = Bfeat.row(row);
            md.Mvals.row(i) = spec.moment_row(X.row(row).transpose(), d_dict).transpose();
        }

        out.gammas[static_cast<std::size_t>(l)] = fitter(l, Yt, Xt, Zt);

        const PenaltyConfig pen =
            PenaltyConfig::from_c1(config.c1, d_dict.size(), nt, config.c0);
        const RieszFit fit = solve_pgmm(md, pen, config.pgmm, config.solver);
        out.rho_per_fold[static_cast<std::size_t>(l)] = fit.rho;
        diags.push_back({l, static_cast<int>(fit.active_set.size()),
                         fit.kkt_max_violation, fit.fell_back_identity});

        const Eigen::VectorXd rho = fit.rho;
        alphas[static_cast<std::size_t>(l)] = [&b_dict, rho](const Eigen::VectorXd& z) {
            return b_dict.evaluate(z).dot(rho);
        };
    }

    out.debiased = debias_with_nuisances(spec, Y, X, Z, folds, out.gammas, alphas);
    out.debiased.per_fold = diags;
    out.plugin = plugin_estimate(spec, out.gammas, X, folds);
    return out;
}

std::string result_to_json(const DebiasedResult& result) {
    nlohmann::json j;
    j["theta_hat"] = result.theta_hat;
    j["variance_hat"] = result.variance_hat;
    j["se"] = result.se;
    j["ci_95"] = {result.ci_lo, result.ci_hi};
    j["n"] = result.psi_values.size();
    j["excluded"] = result.excluded;
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& f : result.per_fold) {
        folds.push_back({{"fold", f.fold},
                         {"alpha_active", f.alpha_active},
                         {"alpha_kkt", f.alpha_kkt},
                         {"fell_back_identity", f.fell_back_identity}});
    }
    j["per_fold"] = folds;
    return j.dump(2);
}

std::string result_csv_header() {
    return "theta_hat,se,ci_lo,ci_hi,variance_hat,n,excluded";
}

std::string result_to_csv_row(const DebiasedResult& result) {
    std::ostringstream out;
    out << format_double(result.theta_hat) << ',' << format_double(result.se) << ','
        << format_double(result.ci_lo) << ',' << format_double(result.ci_hi) << ','
        << format_double(result.variance_hat) << ',' << result.psi_values.size() << ','
        << result.excluded;
    return out.str();
}

MarketFunctional elasticity_functional(int target_j, double cond_limit) {
    MarketFunctional f;
    f.is_linear = false;
    f.value = [target_j, cond_limit](const Market& m, const GammaModel& g) {
        return elasticity_matrix(m, g, cond_limit)(target_j - 1, target_j - 1);
    };
    f.gateaux_all = [target_j, cond_limit](const Market& m, const GammaModel& g,
                                           const Dictionary& dict) {
        const ElasticityContext ctx = elasticity_context(m, g, cond_limit);
        return elasticity_gateaux_all(m, ctx, dict, target_j);
    };
    return f;
}

const GammaPtr& PairFits::at(int a, int b) const {
    const auto key = std::minmax(a, b);
    const auto it = fits.find(key);
    if (it == fits.end())
        throw DimensionError("missing pair fit (" + std::to_string(a) + ", " +
                             std::to_string(b) + ")");
    return it->second;
}

PairFits fit_pair_gammas(const FoldPlan& folds, const PooledGammaFitter& fitter) {
    PairFits out;
    for (int a = 0; a < folds.L; ++a) {
        for (int b = a + 1; b < folds.L; ++b) {
            std::vector<int> train;
            for (int t = 0; t < folds.n; ++t) {
                const int f = folds.assignment[static_cast<std::size_t>(t)];
                if (f != a && f != b) train.push_back(t);
            }
            out.train_markets[{a, b}] = train;
            out.fits[{a, b}] = fitter(train);
        }
    }
    return out;
}

NonlinearMoments build_M_nonlinear(const MarketFunctional& spec,
                                   const std::vector<Market>& markets,
                                   const Dictionary& d_dict, const Dictionary& b_dict,
                                   const FoldPlan& folds, const PairFits& pairs,
                                   int target_j) {
    if (static_cast<int>(markets.size()) != folds.n)
        throw DimensionError("market count must match the fold plan");
    NonlinearMoments out;
    out.data_per_fold.resize(static_cast<std::size_t>(folds.L));
    out.rows_markets.resize(static_cast<std::size_t>(folds.L));
    out.excluded_per_fold.assign(static_cast<std::size_t>(folds.L), 0);

    for (int l = 0; l < folds.L; ++l) {
        std::vector<Eigen::VectorXd> d_rows, b_rows, m_rows;
        std::vector<int> row_markets;
        for (int t = 0; t < folds.n; ++t) {
            const int lp = folds.assignment[static_cast<std::size_t>(t)];
            if (lp == l) continue;
            const GammaPtr& gamma = pairs.at(l, lp);
            Eigen::VectorXd gate;
            try {
                gate = spec.gateaux_all(markets[static_cast<std::size_t>(t)], *gamma, d_dict);
            } catch (const SingularSystemError&) {
                ++out.excluded_per_fold[static_cast<std::size_t>(l)];
                continue;
            }
            out.evaluations.emplace_back(t, l, lp);
            const OmegaState st = build_omega(markets[static_cast<std::size_t>(t)], target_j);
            d_rows.push_back(d_dict.evaluate(st.values));
            b_rows.push_back(
                b_dict.evaluate(build_instruments(markets[static_cast<std::size_t>(t)], target_j)));
            m_rows.push_back(gate);
            row_markets.push_back(t);
        }
        MomentData md;
        const int rows = static_cast<int>(d_rows.size());
        if (rows == 0) throw NumericalError("no usable markets for fold " + std::to_string(l));
        md.D.resize(rows, d_dict.size());
        md.B.resize(rows, b_dict.size());
        md.Mvals.resize(rows, d_dict.size());
        for (int i = 0; i < rows; ++i) {
            md.D.row(i) = d_rows[static_cast<std::size_t>(i)].transpose();
            md.B.row(i) = b_rows[static_cast<std::size_t>(i)].transpose();
            md.Mvals.row(i) = m_rows[static_cast<std::size_t>(i)].transpose();
        }
        out.data_per_fold[static_cast<std::size_t>(l)] = std::move(md);
        out.rows_markets[static_cast<std::size_t>(l)] = std::move(row_markets);
    }
    return out;
}

NonlinearDebiasOutputs debias_nonlinear(const std::vector<Market>& markets,
                                        const Dictionary& d_dict, const Dictionary& b_dict,
                                        const PooledGammaFitter& fitter,
                                        const NonlinearDebiasConfig& config,
                                        const FoldPlan& folds, int target_j) {
    const int T = folds.n;
    if (static_cast<int>(markets.size()) != T)
        throw DimensionError("market count must match the fold plan");
    const MarketFunctional spec = elasticity_functional(target_j, config.cond_limit);

    NonlinearDebiasOutputs out;
    PairFits pairs = fit_pair_gammas(folds, fitter);
    out.pair_fit_count = pairs.count();

    const NonlinearMoments moments =
        build_M_nonlinear(spec, markets, d_dict, b_dict, folds, pairs, target_j);
    for (int c : moments.excluded_per_fold) out.excluded_m_markets += c;

    out.fold_gammas.resize(static_cast<std::size_t>(folds.L));
    out.rho_per_fold.resize(static_cast<std::size_t>(folds.L));
    std::vector<FoldDiagnostics> diags;
    for (int l = 0; l < folds.L; ++l) {
        out.fold_gammas[static_cast<std::size_t>(l)] = fitter(folds.out_of_fold(l));
        const MomentData& md = moments.data_per_fold[static_cast<std::size_t>(l)];
        const PenaltyConfig pen =
            PenaltyConfig::from_c1(config.c1, d_dict.size(), md.n(), config.c0);
        const RieszFit fit = solve_pgmm(md, pen, config.pgmm, config.solver);
        out.rho_per_fold[static_cast<std::size_t>(l)] = fit.rho;
        diags.push_back({l, static_cast<int>(fit.active_set.size()),
                         fit.kkt_max_violation, fit.fell_back_identity});
    }

    // Influence assembly over on-fold markets; ill-conditioned markets are
    // dropped from both the functional average and the correction, with a count.
    std::vector<double> debiased_vals, plugin_vals;
    int excluded_eval = 0;
    for (int t = 0; t < T; ++t) {
        const int l = folds.assignment[static_cast<std::size_t>(t)];
        const Market& m = markets[static_cast<std::size_t>(t)];
        const GammaModel& g = *out.fold_gammas[static_cast<std::size_t>(l)];
        double eps;
        try {
            eps = spec.value(m, g);
        } catch (const SingularSystemError&) {
            ++excluded_eval;
            continue;
        }
        const OmegaState st = build_omega(m, target_j);
        const double y = build_outcome(m, target_j);
        const double alpha =
            b_dict.evaluate(build_instruments(m, target_j))
                .dot(out.rho_per_fold[static_cast<std::size_t>(l)]);
        debiased_vals.push_back(eps + alpha * (y - g.predict(st.values)));
        plugin_vals.push_back(eps);
    }
    if (debiased_vals.empty()) throw NumericalError("all markets were excluded");

    Eigen::VectorXd dv = Eigen::Map<Eigen::VectorXd>(debiased_vals.data(),
                                                     static_cast<Eigen::Index>(debiased_vals.size()));
    Eigen::VectorXd pv = Eigen::Map<Eigen::VectorXd>(plugin_vals.data(),
                                                     static_cast<Eigen::Index>(plugin_vals.size()));
    out.debiased = finalize(dv);
    out.debiased.per_fold = diags;
    out.debiased.excluded = excluded_eval;

    // Plug-in with the naive standard error.
    DebiasedResult plug = finalize(pv);
    const double n = static_cast<double>(pv.size());
    const double sample_var = plug.psi_values.squaredNorm() / (n - 1.0);
    plug.se = std::sqrt(sample_var / n);
    plug.variance_hat = sample_var;
    plug.ci_lo = plug.theta_hat - kNormal975 * plug.se;
    plug.ci_hi = plug.theta_hat + kNormal975 * plug.se;
    plug.excluded = excluded_eval;
    out.plugin = plug;
    return out;
}

}  // namespace adml
