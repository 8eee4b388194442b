#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "adml/errors.hpp"
#include "adml/mliv.hpp"
#include "adml/rng.hpp"

using namespace adml;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

void check_gradient_fd(const GammaModel& g, Rng& rng, int npoints, double lo, double hi) {
    const double h = 1e-5;
    for (int rep = 0; rep < npoints; ++rep) {
        VectorXd x(g.input_dim());
        for (int c = 0; c < g.input_dim(); ++c) x[c] = rng.uniform(lo, hi);
        const VectorXd grad = g.gradient(x);
        for (int c = 0; c < g.input_dim(); ++c) {
            VectorXd up = x, dn = x;
            up[c] += h;
            dn[c] -= h;
            const double fd = (g.predict(up) - g.predict(dn)) / (2.0 * h);
            const double scale = std::max({1.0, std::abs(fd), std::abs(grad[c])});
            CHECK(std::abs(grad[c] - fd) / scale < 1e-4);
        }
    }
}

}  // namespace

TEST_SUITE("mliv") {

TEST_CASE("median heuristic") {
    MatrixXd two(2, 1);
    two << 0.0, 1.0;
    CHECK(median_heuristic(two) == doctest::Approx(1.0));

    MatrixXd three(3, 1);
    three << 0.0, 1.0, 2.0;
    // Pairwise distances {1, 1, 2}: median 1.
    CHECK(median_heuristic(three) == doctest::Approx(1.0));
    CHECK(median_heuristic(three, 25.0) == doctest::Approx(25.0));

    MatrixXd same = MatrixXd::Zero(5, 2);
    CHECK_THROWS_AS(median_heuristic(same), NumericalError);
}

TEST_CASE("double lasso recovers an exogenous linear truth") {
    // Y = 2X, Z = X, noiseless; tiny penalties and degree-1 dictionaries.
    Rng rng(101);
    const int n = 2000;
    MatrixXd X(n, 1), Z(n, 1);
    VectorXd Y(n);
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        X(i, 0) = x;
        Z(i, 0) = x;
        Y[i] = 2.0 * x;
    }
    DoubleLassoConfig cfg;
    cfg.stage1_penalty = 1e-10;
    cfg.cv_grid_min = 1e-12;
    cfg.cv_grid_max = 1e-10;
    cfg.cv_grid_size = 3;
    auto gamma = fit_double_lasso(Y, X, Z, Dictionary::polynomial(1, 1, false),
                                  Dictionary::polynomial(1, 1, false), cfg);
    const auto* dict_gamma = dynamic_cast<const DictionaryGamma*>(gamma.get());
    REQUIRE(dict_gamma != nullptr);
    CHECK(dict_gamma->coefficients()[1] == doctest::Approx(2.0).epsilon(1e-3));
}

TEST_CASE("double lasso constant outcome keeps only the intercept") {
    Rng rng(103);
    const int n = 200;
    MatrixXd X(n, 1), Z(n, 1);
    VectorXd Y = VectorXd::Constant(n, 3.5);
    for (int i = 0; i < n; ++i) {
        X(i, 0) = rng.normal();
        Z(i, 0) = rng.normal();
    }
    DoubleLassoConfig cfg;
    cfg.cv_grid_min = 1e-3;
    cfg.cv_grid_max = 1e-1;
    cfg.cv_grid_size = 5;
    auto gamma = fit_double_lasso(Y, X, Z, Dictionary::polynomial(1, 2, false),
                                  Dictionary::polynomial(1, 2, false), cfg);
    Rng probe(5);
    for (int rep = 0; rep < 10; ++rep) {
        VectorXd x(1);
        x << probe.normal();
        CHECK(gamma->predict(x) == doctest::Approx(3.5).epsilon(1e-6));
    }
}

TEST_CASE("double lasso at zero penalty equals two-stage least squares") {
    Rng rng(107);
    const int n = 500;
    MatrixXd X(n, 2), Z(n, 2);
    VectorXd Y(n);
    for (int i = 0; i < n; ++i) {
        const double z0 = rng.normal(), z1 = rng.normal();
        const double u = rng.normal();
        const double x0 = z0 + 0.3 * u + 0.2 * rng.normal();
        const double x1 = 0.5 * z1 + 0.1 * rng.normal();
        X.row(i) << x0, x1;
        Z.row(i) << z0, z1;
        Y[i] = 1.0 + 2.0 * x0 - x1 + u;
    }
    const auto xd = Dictionary::polynomial(2, 1, false);
    const auto zd = Dictionary::polynomial(2, 1, false);
    DoubleLassoConfig cfg;
    cfg.stage1_penalty = 0.0;
    cfg.cv_grid_min = 0.0;
    cfg.cv_grid_max = 0.0;
    cfg.cv_grid_size = 1;
    cfg.solver.tol = 1e-12;
    cfg.solver.max_sweeps = 200000;
    auto gamma = fit_double_lasso(Y, X, Z, xd, zd, cfg);
    const auto* dg = dynamic_cast<const DictionaryGamma*>(gamma.get());
    REQUIRE(dg != nullptr);

    // Textbook 2SLS on the same dictionaries.
    const MatrixXd F = xd.evaluate_rows(X);
    const MatrixXd B = zd.evaluate_rows(Z);
    const MatrixXd Fhat = B * (B.transpose() * B).ldlt().solve(B.transpose() * F);
    const VectorXd beta_2sls = (Fhat.transpose() * Fhat).ldlt().solve(Fhat.transpose() * Y);
    CHECK((dg->coefficients() - beta_2sls).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("kernel IV fits a smooth exogenous truth") {
    Rng rng(109);
    const int n = 1000;
    MatrixXd X(n, 1), Z(n, 1);
    VectorXd Y(n);
    for (int i = 0; i < n; ++i) {
        const double x = rng.uniform(-3.0, 3.0);
        X(i, 0) = x;
        Z(i, 0) = x;
        Y[i] = std::sin(x) + 0.05 * rng.normal();
    }
    KernelIvConfig cfg;
    cfg.bandwidth_scale = 0.5;
    cfg.ridge1 = 1e-6;
    cfg.ridge2 = 1e-6;
    auto gamma = fit_kernel_iv(Y, X, Z, cfg);
    double sse = 0.0;
    const int m = 200;
    Rng probe(11);
    for (int i = 0; i < m; ++i) {
        VectorXd x(1);
        x << probe.uniform(-2.8, 2.8);
        const double err = gamma->predict(x) - std::sin(x[0]);
        sse += err * err;
    }
    CHECK(std::sqrt(sse / m) < 0.1);
}

TEST_CASE("kernel IV interpolation limit") {
    // Identical stage splits, Z = X, vanishing ridges: predictions at the
    // stage-1 points approach the labels.
    Rng rng(113);
    const int half = 30;
    MatrixXd X(2 * half, 1), Z(2 * half, 1);
    VectorXd Y(2 * half);
    for (int i = 0; i < half; ++i) {
        const double x = 0.3 * i - 4.0;
        const double y = 0.5 * x + std::cos(x);
        X(i, 0) = x;
        Z(i, 0) = x;
        Y[i] = y;
        X(half + i, 0) = x;
        Z(half + i, 0) = x;
        Y[half + i] = y;
    }
    KernelIvConfig cfg;
    cfg.bandwidth_scale = 1.0;
    cfg.ridge1 = 1e-10;
    cfg.ridge2 = 1e-10;
    auto gamma = fit_kernel_iv(Y, X, Z, cfg);
    for (int i = 0; i < half; ++i) {
        VectorXd x(1);
        x << X(i, 0);
        CHECK(gamma->predict(x) == doctest::Approx(Y[i]).epsilon(1e-3));
    }
}

TEST_CASE("gradients match finite differences") {
    Rng rng(127);

    SUBCASE("dictionary gamma") {
        const auto dict = Dictionary::polynomial(3, 3, true);
        VectorXd beta(dict.size());
        for (int k = 0; k < beta.size(); ++k) beta[k] = rng.normal();
        DictionaryGamma g(dict, beta);
        check_gradient_fd(g, rng, 50, -1.0, 1.0);
    }

    SUBCASE("kernel IV gamma") {
        const int n = 120;
        MatrixXd X(n, 2), Z(n, 2);
        VectorXd Y(n);
        for (int i = 0; i < n; ++i) {
            X.row(i) << rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5);
            Z.row(i) = X.row(i);
            Y[i] = X(i, 0) - 0.5 * X(i, 1) * X(i, 1) + 0.02 * rng.normal();
        }
        KernelIvConfig cfg;
        cfg.bandwidth_scale = 1.0;
        auto gamma = fit_kernel_iv(Y, X, Z, cfg);
        check_gradient_fd(*gamma, rng, 50, -1.0, 1.0);
    }
}

TEST_CASE("kernel IV gradient decays far from training points") {
    Rng rng(131);
    const int n = 60;
    MatrixXd X(n, 1), Z(n, 1);
    VectorXd Y(n);
    for (int i = 0; i < n; ++i) {
        X(i, 0) = rng.uniform(-1.0, 1.0);
        Z(i, 0) = X(i, 0);
        Y[i] = X(i, 0);
    }
    KernelIvConfig cfg;
    cfg.bandwidth_scale = 0.5;
    auto gamma = fit_kernel_iv(Y, X, Z, cfg);
    VectorXd far(1);
    far << 1e3;
    CHECK(gamma->gradient(far).norm() < 1e-8);
}

TEST_CASE("linear dictionary gamma has a constant gradient") {
    const auto dict = Dictionary::polynomial(2, 1, false);
    VectorXd beta(3);
    beta << 0.0, 1.0, 3.0;  // x0 + 3 x1
    DictionaryGamma g(dict, beta);
    Rng rng(137);
    for (int rep = 0; rep < 5; ++rep) {
        VectorXd x(2);
        x << rng.normal(), rng.normal();
        const VectorXd grad = g.gradient(x);
        CHECK(grad[0] == doctest::Approx(1.0));
        CHECK(grad[1] == doctest::Approx(3.0));
    }
}

TEST_CASE("predict on empty input returns empty") {
    const auto dict = Dictionary::polynomial(2, 1, false);
    DictionaryGamma g(dict, VectorXd::Zero(3));
    MatrixXd empty(0, 2);
    CHECK(g.predict_rows(empty).size() == 0);
}

TEST_CASE("gradient line integral reproduces prediction differences") {
    // Fundamental-theorem check along a segment, by Simpson quadrature.
    Rng rng(139);
    const auto dict = Dictionary::polynomial(2, 3, true);
    VectorXd beta(dict.size());
    for (int k = 0; k < beta.size(); ++k) beta[k] = 0.3 * rng.normal();
    DictionaryGamma g(dict, beta);

    VectorXd a(2), b(2);
    a << -0.4, 0.2;
    b << 0.7, -0.5;
    const VectorXd dir = b - a;
    const int steps = 200;
    double integral = 0.0;
    for (int s = 0; s < steps; ++s) {
        const double t0 = static_cast<double>(s) / steps;
        const double t1 = static_cast<double>(s + 1) / steps;
        const double tm = 0.5 * (t0 + t1);
        const double f0 = g.gradient(a + t0 * dir).dot(dir);
        const double fm = g.gradient(a + tm * dir).dot(dir);
        const double f1 = g.gradient(a + t1 * dir).dot(dir);
        integral += (f0 + 4.0 * fm + f1) / 6.0 / steps;
    }
    CHECK(std::abs(integral - (g.predict(b) - g.predict(a))) < 1e-3);
}

TEST_CASE("kernel IV predictions are invariant to order within stages") {
    Rng rng(151);
    const int n = 80;
    MatrixXd X(n, 1), Z(n, 1);
    VectorXd Y(n);
    for (int i = 0; i < n; ++i) {
        X(i, 0) = rng.uniform(-2.0, 2.0);
        Z(i, 0) = X(i, 0);
        Y[i] = std::sin(X(i, 0)) + 0.05 * rng.normal();
    }
    // Reverse rows within each half; the stage split is preserved.
    MatrixXd Xp = X, Zp = Z;
    VectorXd Yp = Y;
    const int half = n / 2;
    for (int i = 0; i < half; ++i) {
        Xp.row(i) = X.row(half - 1 - i);
        Zp.row(i) = Z.row(half - 1 - i);
        Yp[i] = Y[half - 1 - i];
        Xp.row(half + i) = X.row(n - 1 - i);
        Zp.row(half + i) = Z.row(n - 1 - i);
        Yp[half + i] = Y[n - 1 - i];
    }
    KernelIvConfig cfg;
    cfg.bandwidth_scale = 1.0;
    cfg.ridge1 = 1e-5;
    cfg.ridge2 = 1e-5;
    auto a = fit_kernel_iv(Y, X, Z, cfg);
    auto b = fit_kernel_iv(Yp, Xp, Zp, cfg);
    Rng probe(17);
    for (int rep = 0; rep < 20; ++rep) {
        VectorXd x(1);
        x << probe.uniform(-1.8, 1.8);
        CHECK(std::abs(a->predict(x) - b->predict(x)) < 1e-8);
    }
}

TEST_CASE("fits are invariant to observation order") {
    Rng rng(149);
    const int n = 300;
    MatrixXd X(n, 2), Z(n, 2);
    VectorXd Y(n);
    for (int i = 0; i < n; ++i) {
        const double z0 = rng.normal(), z1 = rng.normal();
        X.row(i) << z0 + 0.2 * rng.normal(), z1 + 0.2 * rng.normal();
        Z.row(i) << z0, z1;
        Y[i] = X(i, 0) + 0.5 * X(i, 1) + 0.1 * rng.normal();
    }

    // Reversal permutation, applied consistently to rows; CV folds are supplied
    // through the seed so the fold of each observation follows its new index.
    MatrixXd Xp(n, 2), Zp(n, 2);
    VectorXd Yp(n);
    for (int i = 0; i < n; ++i) {
        Xp.row(i) = X.row(n - 1 - i);
        Zp.row(i) = Z.row(n - 1 - i);
        Yp[i] = Y[n - 1 - i];
    }

    const auto xd = Dictionary::polynomial(2, 2, true);
    const auto zd = Dictionary::polynomial(2, 2, true);
    DoubleLassoConfig cfg;
    cfg.cv_grid_size = 1;      // fixed penalty; fold noise is not under test
    cfg.cv_grid_min = 1e-4;
    cfg.solver.tol = 1e-12;
    cfg.solver.max_sweeps = 200000;
    auto g1 = fit_double_lasso(Y, X, Z, xd, zd, cfg);
    auto g2 = fit_double_lasso(Yp, Xp, Zp, xd, zd, cfg);
    const auto* a = dynamic_cast<const DictionaryGamma*>(g1.get());
    const auto* b = dynamic_cast<const DictionaryGamma*>(g2.get());
    REQUIRE(a != nullptr);
    REQUIRE(b != nullptr);
    CHECK((a->coefficients() - b->coefficients()).lpNorm<Eigen::Infinity>() < 1e-10);
}

}  // TEST_SUITE
