#include "adml/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "adml/errors.hpp"
#include "adml/matrix_io.hpp"
#include "adml/rng.hpp"

namespace adml {

namespace {

int worker_count(int requested, int jobs) {
    int t = requested > 0 ? requested
                          : static_cast<int>(std::thread::hardware_concurrency());
    if (t < 1) t = 1;
    return std::min(t, jobs);
}

// Runs fn(r) for r in [0, jobs) on a small pool; results must be written to
// per-index slots by the callee.
template <typename Fn>
void parallel_reps(int jobs, int threads, Fn&& fn) {
    const int t = worker_count(threads, jobs);
    if (t <= 1) {
        for (int r = 0; r < jobs; ++r) fn(r);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(t));
    for (int w = 0; w < t; ++w) {
        pool.emplace_back([&]() {
            while (true) {
                const int r = next.fetch_add(1);
                if (r >= jobs) break;
                fn(r);
            }
        });
    }
    for (auto& th : pool) th.join();
}

struct AvgDerivData {
    Eigen::VectorXd Y;
    Eigen::MatrixXd X;
    Eigen::MatrixXd Z;
};

// Correlated (X, Z, u) triplets per coordinate; the structural error is the
// sum of the u components.
AvgDerivData draw_avg_deriv_data(int n, int k, double noise_scale, bool gamma_in_span,
                                 std::uint64_t seed) {
    Eigen::Matrix3d cov;
    cov << 1.0, 0.8, 0.5,
           0.8, 1.0, 0.0,
           0.5, 0.0, 1.0;
    const Eigen::Matrix3d chol = cov.llt().matrixL();

    AvgDerivData d;
    d.Y.resize(n);
    d.X.resize(n, k);
    d.Z.resize(n, k);
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        double v = 0.0;
        for (int j = 0; j < k; ++j) {
            Eigen::Vector3d raw(rng.normal(), rng.normal(), rng.normal());
            const Eigen::Vector3d t = chol * raw;
            d.X(i, j) = t[0];
            d.Z(i, j) = t[1];
            v += t[2];
        }
        double gamma;
        if (gamma_in_span) {
            gamma = d.X(i, 0) + (k > 1 ? 0.5 * d.X(i, 1) * d.X(i, 1) : 0.0);
        } else {
            double rest = 0.0;
            for (int j = 1; j < k; ++j) rest += d.X(i, j) * d.X(i, j);
            gamma = d.X(i, 0) + std::exp(-0.5 * rest);
        }
        d.Y[i] = gamma + noise_scale * v;
    }
    return d;
}

RepRecord to_record(int rep, const DebiasedResult& res) {
    RepRecord r;
    r.rep = rep;
    r.ok = true;
    r.theta = res.theta_hat;
    r.se = res.se;
    r.ci_lo = res.ci_lo;
    r.ci_hi = res.ci_hi;
    return r;
}

RepRecord failed_record(int rep, const std::string& what) {
    RepRecord r;
    r.rep = rep;
    r.ok = false;
    r.error = what;
    return r;
}

}  // namespace

double default_c1(const McConfig& config) {
    if (config.design == McDesign::elasticity) return 1e-7;
    if (config.k <= 3) return 1e-2;
    if (config.k <= 7) return 1e-3;
    return 1e-4;
}

McRecords run_avg_derivative_records(const McConfig& config) {
    if (config.design != McDesign::avg_derivative)
        throw DimensionError("config design must be avg_derivative");
    if (config.replications < 1) throw DimensionError("replications must be >= 1");

    const double c1 = config.c1 > 0.0 ? config.c1 : default_c1(config);
    const auto x_dict = Dictionary::polynomial(config.k, config.poly_degree, true);
    const auto z_dict = Dictionary::polynomial(config.k, config.poly_degree, true);
    const auto spec = avg_derivative_spec(0);

    McRecords out;
    out.theta0 = 1.0;
    out.estimator_names = {"plugin", "adml"};
    out.records.assign(2, std::vector<RepRecord>(static_cast<std::size_t>(config.replications)));

    parallel_reps(config.replications, config.threads, [&](int r) {
        const std::uint64_t rep_seed = derive_seed(config.seed, static_cast<std::uint64_t>(r));
        try {
            const AvgDerivData data = draw_avg_deriv_data(
                config.n, config.k, config.noise_scale, config.gamma_in_span,
                derive_seed(rep_seed, 1));
            const FoldPlan folds = make_folds(config.n, config.folds, derive_seed(rep_seed, 2));

            GammaFitter fitter = [&](int fold, const Eigen::VectorXd& Y,
                                     const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z) {
                DoubleLassoConfig dl;
                dl.stage1_penalty = config.stage1_penalty;
                dl.cv_grid_size = config.cv_grid_size;
                dl.cv_grid_min = config.cv_grid_min;
                dl.cv_grid_max = config.cv_grid_max;
                dl.cv_seed = derive_seed(rep_seed, 100 + static_cast<std::uint64_t>(fold));
                return fit_double_lasso(Y, X, Z, x_dict, z_dict, dl);
            };

            LinearDebiasConfig ldc;
            ldc.c1 = c1;
            ldc.c0 = config.c0;
            const LinearDebiasOutputs res = debias_linear(
                *spec, data.Y, data.X, data.Z, x_dict, z_dict, fitter, ldc, folds);
            out.records[0][static_cast<std::size_t>(r)] = to_record(r, res.plugin);
            out.records[1][static_cast<std::size_t>(r)] = to_record(r, res.debiased);
        } catch (const std::exception& e) {
            out.records[0][static_cast<std::size_t>(r)] = failed_record(r, e.what());
            out.records[1][static_cast<std::size_t>(r)] = failed_record(r, e.what());
        }
    });
    return out;
}

double approximate_theta0_elasticity(int J, int presim_T, std::uint64_t seed) {
    if (presim_T < 1000) throw DimensionError("presimulation needs at least 1000 markets");
    const DemandParams params;
    const auto markets = simulate_logit_markets(J, presim_T, params, seed);
    double sum = 0.0;
    for (const auto& m : markets)
        sum += logit_elasticity_oracle(params.beta_p, m.prices[0], m.shares[1]);
    return sum / static_cast<double>(presim_T);
}

McRecords run_elasticity_records(const McConfig& config) {
    if (config.design != McDesign::elasticity)
        throw DimensionError("config design must be elasticity");
    if (config.replications < 1) throw DimensionError("replications must be >= 1");

    const double c1 = config.c1 > 0.0 ? config.c1 : default_c1(config);
    const DemandParams params;
    const OmegaLayout layout{config.J, 3};
    const int z_dim = config.J * 5;
    const auto d_dict = Dictionary::polynomial(layout.dim(), 2, true);
    const auto b_dict = Dictionary::polynomial(z_dim, 2, false);

    McRecords out;
    out.theta0 =
        approximate_theta0_elasticity(config.J, config.presim_T, derive_seed(config.seed, 0xF0));
    out.estimator_names = {"plugin", "adml"};
    out.records.assign(2, std::vector<RepRecord>(static_cast<std::size_t>(config.replications)));

    parallel_reps(config.replications, config.threads, [&](int r) {
        const std::uint64_t rep_seed = derive_seed(config.seed, static_cast<std::uint64_t>(r));
        try {
            const auto markets =
                simulate_logit_markets(config.J, config.T, params, derive_seed(rep_seed, 1));
            const FoldPlan folds = make_folds(config.T, config.folds, derive_seed(rep_seed, 2));

            PooledGammaFitter fitter = [&](const std::vector<int>& train) {
                const int rows = static_cast<int>(train.size()) * config.J;
                Eigen::VectorXd Y(rows);
                Eigen::MatrixXd X(rows, layout.dim()), Z(rows, z_dim);
                std::vector<int> groups(static_cast<std::size_t>(rows));
                int at = 0;
                for (int t : train) {
                    const Market& m = markets[static_cast<std::size_t>(t)];
                    for (int j = 1; j <= config.J; ++j) {
                        Y[at] = build_outcome(m, j);
                        X.row(at) = build_omega(m, j).values.transpose();
                        Z.row(at) = build_instruments(m, j).transpose();
                        groups[static_cast<std::size_t>(at)] = t;
                        ++at;
                    }
                }
                KernelIvConfig kiv;
                kiv.bandwidth_scale = config.bandwidth_scale;
                kiv.ridge1 = config.kiv_ridge1;
                kiv.ridge2 = config.kiv_ridge2;
                return fit_kernel_iv(Y, X, Z, kiv, groups);
            };

            NonlinearDebiasConfig ndc;
            ndc.c1 = c1;
            ndc.c0 = config.c0;
            const NonlinearDebiasOutputs res = debias_nonlinear(
                markets, d_dict, b_dict, fitter, ndc, folds, config.target_product);
            out.records[0][static_cast<std::size_t>(r)] = to_record(r, res.plugin);
            out.records[1][static_cast<std::size_t>(r)] = to_record(r, res.debiased);
        } catch (const std::exception& e) {
            out.records[0][static_cast<std::size_t>(r)] = failed_record(r, e.what());
            out.records[1][static_cast<std::size_t>(r)] = failed_record(r, e.what());
        }
    });
    return out;
}

McSummary summarize(const McRecords& records) {
    McSummary s;
    s.theta0 = records.theta0;
    for (std::size_t e = 0; e < records.estimator_names.size(); ++e) {
        const auto& recs = records.records[e];
        EstimatorSummary es;
        es.name = records.estimator_names[e];
        es.replications = static_cast<int>(recs.size());
        if (s.replications == 0) s.replications = es.replications;

        std::vector<double> ses;
        double mean_theta = 0.0;
        int ok = 0, covered = 0;
        for (const auto& rec : recs) {
            if (!rec.ok) {
                ++es.failures;
                continue;
            }
            ++ok;
            mean_theta += rec.theta;
            ses.push_back(rec.se);
            if (rec.ci_lo <= records.theta0 && records.theta0 <= rec.ci_hi) ++covered;
        }
        if (ok == 0) throw NumericalError("all replications failed for " + es.name);
        es.mean_theta = mean_theta / ok;
        es.abs_bias = std::abs(es.mean_theta - records.theta0);
        es.coverage = static_cast<double>(covered) / ok;
        std::sort(ses.begin(), ses.end());
        const std::size_t m = ses.size();
        es.median_se = (m % 2 == 1) ? ses[m / 2] : 0.5 * (ses[m / 2 - 1] + ses[m / 2]);
        s.estimators.push_back(std::move(es));
    }
    return s;
}

McSummary run_avg_derivative_mc(const McConfig& config) {
    return summarize(run_avg_derivative_records(config));
}

McSummary run_elasticity_mc(const McConfig& config) {
    return summarize(run_elasticity_records(config));
}

std::string summary_to_csv(const McSummary& summary) {
    std::ostringstream out;
    out << "estimator,replications,failures,abs_bias,median_se,coverage,mean_theta,theta0\n";
    for (const auto& e : summary.estimators) {
        out << e.name << ',' << e.replications << ',' << e.failures << ','
            << format_double(e.abs_bias) << ',' << format_double(e.median_se) << ','
            << format_double(e.coverage) << ',' << format_double(e.mean_theta) << ','
            << format_double(summary.theta0) << '\n';
    }
    return out.str();
}

std::string config_to_json(const McConfig& config, const McSummary& summary) {
    nlohmann::json j;
    j["design"] = config.design == McDesign::avg_derivative ? "avg_derivative" : "elasticity";
    if (config.design == McDesign::avg_derivative) {
        j["k"] = config.k;
        j["n"] = config.n;
        j["poly_degree"] = config.poly_degree;
        j["stage1_penalty"] = config.stage1_penalty;
        j["noise_scale"] = config.noise_scale;
        j["gamma_in_span"] = config.gamma_in_span;
    } else {
        j["J"] = config.J;
        j["T"] = config.T;
        j["target_product"] = config.target_product;
        j["presim_T"] = config.presim_T;
        j["bandwidth_scale"] = config.bandwidth_scale;
        j["kiv_ridge1"] = config.kiv_ridge1;
        j["kiv_ridge2"] = config.kiv_ridge2;
    }
    j["replications"] = config.replications;
    j["folds"] = config.folds;
    j["seed"] = config.seed;
    j["c1"] = config.c1 > 0.0 ? config.c1 : default_c1(config);
    j["c0"] = config.c0;
    j["theta0"] = summary.theta0;
    return j.dump(2);
}

}  // namespace adml
