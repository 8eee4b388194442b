#include "adml/mliv.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "adml/errors.hpp"
#include "adml/folds.hpp"
#include "adml/rng.hpp"

namespace adml {

std::vector<int> balanced_fold_assignment(int n, int L, std::uint64_t seed) {
    if (L < 2 || L > n) throw DimensionError("fold count must satisfy 2 <= L <= n");
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1));
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    std::vector<int> fold_of(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        fold_of[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = i % L;
    return fold_of;
}

Eigen::VectorXd GammaModel::predict_rows(const Eigen::MatrixXd& points) const {
    Eigen::VectorXd out(points.rows());
    for (Eigen::Index i = 0; i < points.rows(); ++i)
        out[i] = predict(points.row(i).transpose());
    return out;
}

DictionaryGamma::DictionaryGamma(Dictionary dict, Eigen::VectorXd beta)
    : dict_(std::move(dict)), beta_(std::move(beta)) {
    if (beta_.size() != dict_.size())
        throw DimensionError("coefficient length must equal dictionary size");
}

double DictionaryGamma::predict(const Eigen::VectorXd& x) const {
    return dict_.evaluate(x).dot(beta_);
}

Eigen::VectorXd DictionaryGamma::gradient(const Eigen::VectorXd& x) const {
    return dict_.partials_matrix(x).transpose() * beta_;
}

KernelIvGamma::KernelIvGamma(Eigen::MatrixXd stage1_x, Eigen::VectorXd alpha, double sigma_x)
    : x1_(std::move(stage1_x)), alpha_(std::move(alpha)), sigma_x_(sigma_x) {
    if (alpha_.size() != x1_.rows())
        throw DimensionError("alpha length must equal stage-1 sample size");
    if (!(sigma_x_ > 0.0)) throw NumericalError("kernel bandwidth must be positive");
}

double KernelIvGamma::predict(const Eigen::VectorXd& x) const {
    const double inv = 1.0 / (2.0 * sigma_x_ * sigma_x_);
    double out = 0.0;
    for (Eigen::Index i = 0; i < x1_.rows(); ++i) {
        const double d2 = (x1_.row(i).transpose() - x).squaredNorm();
        out += alpha_[i] * std::exp(-d2 * inv);
    }
    return out;
}

Eigen::VectorXd KernelIvGamma::gradient(const Eigen::VectorXd& x) const {
    const double inv = 1.0 / (2.0 * sigma_x_ * sigma_x_);
    const double s2 = sigma_x_ * sigma_x_;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(x.size());
    for (Eigen::Index i = 0; i < x1_.rows(); ++i) {
        const Eigen::VectorXd diff = x1_.row(i).transpose() - x;
        g += (alpha_[i] * std::exp(-diff.squaredNorm() * inv) / s2) * diff;
    }
    return g;
}

ScalarField ScalarField::from_dictionary(const Dictionary& dict, int index) {
    ScalarField f;
    f.value = [dict, index](const Eigen::VectorXd& x) { return dict.evaluate(x)[index]; };
    f.gradient = [dict, index](const Eigen::VectorXd& x) {
        Eigen::VectorXd g(dict.input_dim());
        for (int c = 0; c < dict.input_dim(); ++c) g[c] = dict.partial(x, c)[index];
        return g;
    };
    return f;
}

double median_heuristic(const Eigen::MatrixXd& points, double scale, int max_points) {
    const int n = static_cast<int>(points.rows());
    if (n < 2) throw DimensionError("median heuristic requires at least two points");
    std::vector<int> keep;
    if (n <= max_points) {
        keep.resize(static_cast<std::size_t>(n));
        std::iota(keep.begin(), keep.end(), 0);
    } else {
        keep.reserve(static_cast<std::size_t>(max_points));
        const double stride = static_cast<double>(n) / max_points;
        for (int i = 0; i < max_points; ++i)
            keep.push_back(static_cast<int>(i * stride));
    }
    std::vector<double> dists;
    dists.reserve(keep.size() * (keep.size() - 1) / 2);
    for (std::size_t a = 0; a < keep.size(); ++a)
        for (std::size_t b = a + 1; b < keep.size(); ++b)
            dists.push_back((points.row(keep[a]) - points.row(keep[b])).norm());
    const std::size_t mid = (dists.size() - 1) / 2;
    std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(mid),
                     dists.end());
    const double med = dists[mid];
    if (!(med > 0.0)) throw NumericalError("median heuristic: all points identical");
    return med * scale;
}

Eigen::VectorXd lasso_regression(const Eigen::MatrixXd& F, const Eigen::VectorXd& y,
                                 double lambda, const SolverConfig& config,
                                 const std::optional<Eigen::VectorXd>& init) {
    if (F.rows() != y.size()) throw DimensionError("feature rows must equal outcome length");
    const double n = static_cast<double>(F.rows());
    QuadForm qf;
    qf.H = F.transpose() * F / n;
    qf.c = F.transpose() * y / n;
    qf.m0 = y.squaredNorm() / n;
    Eigen::VectorXd w = Eigen::VectorXd::Ones(F.cols());
    w[0] = 0.0;  // intercept is never penalized
    return solve_quadratic_l1(qf, lambda, w, config, init, true).rho;
}

namespace {

Eigen::MatrixXd gaussian_kernel(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                double sigma) {
    const Eigen::VectorXd a2 = A.rowwise().squaredNorm();
    const Eigen::VectorXd b2 = B.rowwise().squaredNorm();
    Eigen::MatrixXd d2 = -2.0 * A * B.transpose();
    d2.colwise() += a2;
    d2.rowwise() += b2.transpose();
    return (-d2.cwiseMax(0.0) / (2.0 * sigma * sigma)).array().exp().matrix();
}

}  // namespace

GammaPtr fit_double_lasso(const Eigen::VectorXd& Y, const Eigen::MatrixXd& X,
                          const Eigen::MatrixXd& Z, const Dictionary& x_dict,
                          const Dictionary& z_dict, const DoubleLassoConfig& config,
                          DoubleLassoDiagnostics* diag) {
    const int n = static_cast<int>(Y.size());
    if (X.rows() != n || Z.rows() != n) throw DimensionError("Y, X, Z row counts differ");
    if (X.cols() != x_dict.input_dim() || Z.cols() != z_dict.input_dim())
        throw DimensionError("dictionary input dims do not match data");
    if (n <= config.cv_folds) throw DimensionError("need more observations than CV folds");

    const Eigen::MatrixXd Dx = x_dict.evaluate_rows(X);
    const Eigen::MatrixXd Bz = z_dict.evaluate_rows(Z);
    const int q = static_cast<int>(Dx.cols());

    // Stage 1: project each non-constant dictionary feature on the instruments.
    Eigen::MatrixXd Dhat(n, q);
    Dhat.col(0).setOnes();
    for (int j = 1; j < q; ++j) {
        const Eigen::VectorXd pi =
            lasso_regression(Bz, Dx.col(j), config.stage1_penalty, config.solver);
        Dhat.col(j) = Bz * pi;
    }

    // Stage 2: K-fold CV for the outcome lasso penalty over a log-spaced grid,
    // swept from the most to the least shrunk with warm starts.
    std::vector<double> grid(static_cast<std::size_t>(config.cv_grid_size));
    if (config.cv_grid_size == 1) {
        grid[0] = config.cv_grid_min;
    } else {
        const double lmin = std::log(config.cv_grid_min);
        const double lmax = std::log(config.cv_grid_max);
        for (int g = 0; g < config.cv_grid_size; ++g)
            grid[static_cast<std::size_t>(g)] =
                std::exp(lmin + (lmax - lmin) * g / (config.cv_grid_size - 1));
    }
    const std::vector<int> fold_of = balanced_fold_assignment(n, config.cv_folds, config.cv_seed);

    std::vector<double> mse(grid.size(), 0.0);
    std::vector<bool> failed(grid.size(), false);
    for (int k = 0; k < config.cv_folds; ++k) {
        std::vector<int> tr, te;
        for (int i = 0; i < n; ++i)
            (fold_of[static_cast<std::size_t>(i)] == k ? te : tr).push_back(i);
        Eigen::MatrixXd Ftr(static_cast<Eigen::Index>(tr.size()), q);
        Eigen::VectorXd ytr(static_cast<Eigen::Index>(tr.size()));
        for (std::size_t i = 0; i < tr.size(); ++i) {
            Ftr.row(static_cast<Eigen::Index>(i)) = Dhat.row(tr[i]);
            ytr[static_cast<Eigen::Index>(i)] = Y[tr[i]];
        }
        Eigen::MatrixXd Fte(static_cast<Eigen::Index>(te.size()), q);
        Eigen::VectorXd yte(static_cast<Eigen::Index>(te.size()));
        for (std::size_t i = 0; i < te.size(); ++i) {
            Fte.row(static_cast<Eigen::Index>(i)) = Dhat.row(te[i]);
            yte[static_cast<Eigen::Index>(i)] = Y[te[i]];
        }
        std::optional<Eigen::VectorXd> warm;
        for (int g = config.cv_grid_size - 1; g >= 0; --g) {
            if (failed[static_cast<std::size_t>(g)]) continue;
            try {
                const Eigen::VectorXd beta = lasso_regression(
                    Ftr, ytr, grid[static_cast<std::size_t>(g)], config.solver, warm);
                warm = beta;
                mse[static_cast<std::size_t>(g)] +=
                    (yte - Fte * beta).squaredNorm() / static_cast<double>(te.size());
            } catch (const NumericalError&) {
                failed[static_cast<std::size_t>(g)] = true;
            }
        }
    }

    int best = -1;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        if (failed[g]) continue;
        if (best < 0 || mse[g] < mse[static_cast<std::size_t>(best)])
            best = static_cast<int>(g);
    }
    if (best < 0) throw NumericalError("every stage-2 CV grid point failed");

    const Eigen::VectorXd beta =
        lasso_regression(Dhat, Y, grid[static_cast<std::size_t>(best)], config.solver);

    if (diag) {
        diag->selected_lambda = grid[static_cast<std::size_t>(best)];
        diag->cv_curve.assign(grid.size(), std::numeric_limits<double>::infinity());
        for (std::size_t g = 0; g < grid.size(); ++g)
            if (!failed[g]) diag->cv_curve[g] = mse[g] / config.cv_folds;
        diag->excluded_grid.clear();
        for (std::size_t g = 0; g < grid.size(); ++g)
            if (failed[g]) diag->excluded_grid.push_back(static_cast<int>(g));
    }
    return std::make_shared<DictionaryGamma>(x_dict, beta);
}

GammaPtr fit_kernel_iv(const Eigen::VectorXd& Y, const Eigen::MatrixXd& X,
                       const Eigen::MatrixXd& Z, const KernelIvConfig& config,
                       const std::vector<int>& groups) {
    const int n = static_cast<int>(Y.size());
    if (X.rows() != n || Z.rows() != n) throw DimensionError("Y, X, Z row counts differ");
    if (n < 20) throw DimensionError("kernel IV requires n >= 20");
    if (!(config.split_fraction > 0.0 && config.split_fraction < 1.0))
        throw DimensionError("split_fraction must lie in (0, 1)");

    std::vector<int> s1, s2;
    if (groups.empty()) {
        int m = static_cast<int>(std::lround(n * config.split_fraction));
        m = std::clamp(m, 1, n - 1);
        for (int i = 0; i < n; ++i) (i < m ? s1 : s2).push_back(i);
    } else {
        if (static_cast<int>(groups.size()) != n)
            throw DimensionError("groups length must equal n");
        std::vector<int> uniq;
        for (int g : groups)
            if (std::find(uniq.begin(), uniq.end(), g) == uniq.end()) uniq.push_back(g);
        int mg = static_cast<int>(std::lround(uniq.size() * config.split_fraction));
        mg = std::clamp(mg, 1, static_cast<int>(uniq.size()) - 1);
        std::vector<int> first(uniq.begin(), uniq.begin() + mg);
        for (int i = 0; i < n; ++i) {
            const bool in1 = std::find(first.begin(), first.end(),
                                       groups[static_cast<std::size_t>(i)]) != first.end();
            (in1 ? s1 : s2).push_back(i);
        }
    }

    const auto take = [](const Eigen::MatrixXd& m, const std::vector<int>& rows) {
        Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
        for (std::size_t i = 0; i < rows.size(); ++i)
            out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
        return out;
    };
    const Eigen::MatrixXd X1 = take(X, s1);
    const Eigen::MatrixXd Z1 = take(Z, s1);
    const Eigen::MatrixXd Z2 = take(Z, s2);
    Eigen::VectorXd Y2(static_cast<Eigen::Index>(s2.size()));
    for (std::size_t i = 0; i < s2.size(); ++i) Y2[static_cast<Eigen::Index>(i)] = Y[s2[i]];

    const double sigma_x = median_heuristic(X1, config.bandwidth_scale);
    const double sigma_z = median_heuristic(Z1, config.bandwidth_scale);

    const int n1 = static_cast<int>(s1.size());
    const int n2 = static_cast<int>(s2.size());
    const Eigen::MatrixXd Kzz = gaussian_kernel(Z1, Z1, sigma_z);
    const Eigen::MatrixXd Kz12 = gaussian_kernel(Z1, Z2, sigma_z);
    Eigen::MatrixXd ridge1 = Kzz;
    ridge1.diagonal().array() += n1 * config.ridge1;
    const Eigen::MatrixXd W = ridge1.ldlt().solve(Kz12);  // n1 x n2

    const Eigen::MatrixXd Kxx = gaussian_kernel(X1, X1, sigma_x);
    Eigen::MatrixXd A = W * W.transpose() * Kxx;
    A.diagonal().array() += n2 * config.ridge2;
    const Eigen::VectorXd alpha = A.partialPivLu().solve(W * Y2);

    return std::make_shared<KernelIvGamma>(X1, alpha, sigma_x);
}

}  // namespace adml
