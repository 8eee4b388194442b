#include "adml/pgmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "adml/errors.hpp"

namespace adml {

Weight Weight::identity(int q) {
    Weight w;
    w.q_ = q;
    w.diag_ = Eigen::VectorXd::Ones(q);
    return w;
}

Weight Weight::diagonal(Eigen::VectorXd entries) {
    if ((entries.array() <= 0.0).any())
        throw DegenerateMomentError("diagonal weight entries must be strictly positive");
    Weight w;
    w.q_ = static_cast<int>(entries.size());
    w.diag_ = std::move(entries);
    return w;
}

Weight Weight::dense(Eigen::MatrixXd omega) {
    if (omega.rows() != omega.cols()) throw DimensionError("weight matrix must be square");
    if (!omega.isApprox(omega.transpose(), 1e-10))
        throw DimensionError("weight matrix must be symmetric");
    Weight w;
    w.q_ = static_cast<int>(omega.rows());
    w.dense_ = std::move(omega);
    return w;
}

Eigen::VectorXd Weight::apply_scaled(const Eigen::VectorXd& v) const {
    if (is_diagonal()) return (diag_.array() * v.array()).matrix() / q_;
    return dense_ * v / q_;
}

Eigen::MatrixXd Weight::quad_form(const Eigen::MatrixXd& G) const {
    if (is_diagonal()) return G.transpose() * (diag_ / q_).asDiagonal() * G;
    return G.transpose() * (dense_ / q_) * G;
}

Eigen::VectorXd Weight::cross(const Eigen::MatrixXd& G, const Eigen::VectorXd& M) const {
    return G.transpose() * apply_scaled(M);
}

void MomentSystem::validate() const {
    if (M.size() != G.rows()) throw DimensionError("M length must equal rows of G");
    if (omega.q() != q()) throw DimensionError("weight dimension must equal rows of G");
}

PenaltyConfig PenaltyConfig::from_c1(double c1, int q, int n, double c0) {
    if (c1 < 0.0) throw DimensionError("c1 must be nonnegative");
    if (q < 1 || n < 1) throw DimensionError("from_c1 requires q >= 1 and n >= 1");
    PenaltyConfig p;
    p.lambda = c1 * std::sqrt(std::log(static_cast<double>(q)) / n);
    p.c0 = c0;
    return p;
}

PenaltyConfig PenaltyConfig::fixed(double lambda, double c0) {
    if (lambda < 0.0) throw DimensionError("lambda must be nonnegative");
    PenaltyConfig p;
    p.lambda = lambda;
    p.c0 = c0;
    return p;
}

Eigen::VectorXd PenaltyConfig::weights(int p) const {
    Eigen::VectorXd w;
    if (adaptive_weights) {
        if (adaptive_weights->size() != p)
            throw DimensionError("adaptive weights length must equal p");
        if ((adaptive_weights->array() <= 0.0).any())
            throw DimensionError("adaptive weights must be strictly positive");
        w = *adaptive_weights;
    } else {
        w = Eigen::VectorXd::Ones(p);
    }
    w[0] *= c0;
    return w;
}

double soft_threshold(double z, double tau) {
    if (z > tau) return z - tau;
    if (z < -tau) return z + tau;
    return 0.0;
}

namespace {

QuadForm make_quad_form(const MomentSystem& s) {
    QuadForm qf;
    qf.H = s.omega.quad_form(s.G);
    qf.c = s.omega.cross(s.G, s.M);
    qf.m0 = s.M.dot(s.omega.apply_scaled(s.M));
    return qf;
}

// Coordinate-descent engine over the quadratic form; maintains g = H * rho.
class CdEngine {
public:
    CdEngine(const QuadForm& qf, double lambda, Eigen::VectorXd weights,
             Eigen::VectorXd rho0)
        : H_(qf.H), c_(qf.c), m0_(qf.m0), lambda_(lambda), w_(std::move(weights)),
          rho_(std::move(rho0)) {
        const int p = static_cast<int>(H_.rows());
        for (int j = 0; j < p; ++j) {
            if (H_(j, j) <= 0.0) {
                frozen_.push_back(j);
                rho_[j] = 0.0;
            }
        }
        refresh_g();
    }

    // One pass over the given coordinates; returns the max coordinate change.
    double sweep(const std::vector<int>& coords) {
        double max_change = 0.0;
        for (int j : coords) {
            const double bj = H_(j, j);
            if (bj <= 0.0) continue;  // frozen
            const double aj = c_[j] - g_[j] + bj * rho_[j];
            const double next = soft_threshold(aj / bj, w_[j] * lambda_ / bj);
            const double delta = next - rho_[j];
            if (delta != 0.0) {
                rho_[j] = next;
                g_ += H_.col(j) * delta;
            }
            max_change = std::max(max_change, std::abs(delta));
        }
        return max_change;
    }

    void refresh_g() { g_ = H_ * rho_; }

    // Worst violation of the stationarity conditions over the given coordinates.
    double kkt_excess(const std::vector<int>& coords) const {
        double worst = 0.0;
        for (int j : coords) {
            if (H_(j, j) <= 0.0) continue;
            const double rj = c_[j] - g_[j];
            const double thr = w_[j] * lambda_;
            const double e = (rho_[j] != 0.0)
                                 ? std::abs(rj - thr * (rho_[j] > 0.0 ? 1.0 : -1.0))
                                 : std::max(0.0, std::abs(rj) - thr);
            worst = std::max(worst, e);
        }
        return worst;
    }

    double objective() const {
        return m0_ - 2.0 * c_.dot(rho_) + rho_.dot(g_) +
               2.0 * lambda_ * (w_.array() * rho_.array().abs()).sum();
    }

    Eigen::VectorXd gradient_residual() const { return c_ - g_; }
    const Eigen::VectorXd& rho() const { return rho_; }
    const std::vector<int>& frozen() const { return frozen_; }

private:
    const Eigen::MatrixXd& H_;
    const Eigen::VectorXd& c_;
    double m0_;
    double lambda_;
    Eigen::VectorXd w_;
    Eigen::VectorXd rho_;
    Eigen::VectorXd g_;
    std::vector<int> frozen_;
};

std::vector<int> all_coords(int p) {
    std::vector<int> v(static_cast<std::size_t>(p));
    std::iota(v.begin(), v.end(), 0);
    return v;
}

std::vector<int> nonzero_indices(const Eigen::VectorXd& rho) {
    std::vector<int> out;
    for (int j = 0; j < rho.size(); ++j)
        if (rho[j] != 0.0) out.push_back(j);
    return out;
}

RieszFit solve_quadratic_cd(const QuadForm& qf, double lambda,
                            const Eigen::VectorXd& weights, const SolverConfig& config,
                            const std::optional<Eigen::VectorXd>& init) {
    const int p = static_cast<int>(qf.H.rows());
    Eigen::VectorXd rho0 = init ? *init : Eigen::VectorXd::Zero(p);
    if (rho0.size() != p) throw DimensionError("init length must equal p");
    CdEngine eng(qf, lambda, weights, rho0);
    const std::vector<int> coords = all_coords(p);
    const double kkt_target = config.tol * (1.0 + lambda);

    RieszFit fit;
    double last_change = std::numeric_limits<double>::infinity();
    double best_kkt = std::numeric_limits<double>::infinity();
    int stalled = 0;
    for (int sweep = 1; sweep <= config.max_sweeps; ++sweep) {
        last_change = eng.sweep(coords);
        fit.sweeps_used = sweep;
        if (sweep % 64 == 0) eng.refresh_g();  // counter FP drift in g
        fit.objective_trace.push_back(eng.objective());
        if (last_change >= config.tol) {
            best_kkt = std::numeric_limits<double>::infinity();
            stalled = 0;
            continue;
        }
        // Polish toward stationarity; stop once no real progress is left.
        eng.refresh_g();
        const double kkt = eng.kkt_excess(coords);
        if (kkt <= kkt_target) break;
        if (kkt > 0.99 * best_kkt) {
            if (++stalled >= 10) break;
        } else {
            stalled = 0;
        }
        best_kkt = std::min(best_kkt, kkt);
    }
    if (last_change >= config.tol)
        throw NonConvergenceError("coordinate descent hit max_sweeps without converging");
    eng.refresh_g();
    fit.rho = eng.rho();
    fit.kkt_max_violation = eng.kkt_excess(coords);
    fit.active_set = nonzero_indices(fit.rho);
    fit.frozen = eng.frozen();
    return fit;
}

RieszFit solve_quadratic_active_set(const QuadForm& qf, double lambda,
                                    const Eigen::VectorXd& weights,
                                    const SolverConfig& config,
                                    const std::optional<Eigen::VectorXd>& init) {
    const int p = static_cast<int>(qf.H.rows());
    Eigen::VectorXd rho0 = init ? *init : Eigen::VectorXd::Zero(p);
    if (rho0.size() != p) throw DimensionError("init length must equal p");
    CdEngine eng(qf, lambda, weights, rho0);
    const std::vector<int> coords = all_coords(p);
    const double kkt_target = config.tol * (1.0 + lambda);
    const int max_outer = config.max_outer < 0 ? p : config.max_outer;

    RieszFit fit;
    int sweeps = 0;
    bool exhausted = false;
    double last_change = std::numeric_limits<double>::infinity();
    auto one_sweep = [&](const std::vector<int>& cs) {
        if (sweeps >= config.max_sweeps) {
            exhausted = true;
            return last_change;
        }
        ++sweeps;
        last_change = eng.sweep(cs);
        fit.objective_trace.push_back(eng.objective());
        return last_change;
    };

    one_sweep(coords);  // full pass
    std::vector<bool> in_active(static_cast<std::size_t>(p), false);
    std::vector<int> active;
    for (int j : nonzero_indices(eng.rho())) {
        in_active[static_cast<std::size_t>(j)] = true;
        active.push_back(j);
    }

    int augmentations = 0;
    while (!exhausted) {
        // Inner cycles on the current active set, with a stall escape on the
        // stationarity polish.
        double best_kkt = std::numeric_limits<double>::infinity();
        int stalled = 0;
        bool inner_done = active.empty();
        while (!inner_done && !exhausted) {
            const double change = one_sweep(active);
            if (exhausted) break;
            if (change >= config.tol) {
                best_kkt = std::numeric_limits<double>::infinity();
                stalled = 0;
                continue;
            }
            const double kkt = eng.kkt_excess(active);
            if (kkt <= kkt_target) break;
            if (kkt > 0.99 * best_kkt) {
                if (++stalled >= 10) break;
            } else {
                stalled = 0;
            }
            best_kkt = std::min(best_kkt, kkt);
        }
        eng.refresh_g();
        const Eigen::VectorXd r = eng.gradient_residual();
        std::vector<int> violators;
        for (int j = 0; j < p; ++j) {
            if (in_active[static_cast<std::size_t>(j)]) continue;
            if (qf.H(j, j) <= 0.0) continue;
            if (std::abs(r[j]) > weights[j] * lambda) violators.push_back(j);
        }
        if (violators.empty()) break;
        if (++augmentations > max_outer)
            throw NonConvergenceError("active-set solver exceeded max outer iterations");
        for (int j : violators) {
            in_active[static_cast<std::size_t>(j)] = true;
            active.push_back(j);
        }
        std::sort(active.begin(), active.end());
    }
    if (exhausted && last_change >= config.tol)
        throw NonConvergenceError("active-set solver hit max_sweeps without converging");

    fit.sweeps_used = sweeps;
    fit.outer_iters_used = augmentations;
    fit.rho = eng.rho();
    fit.kkt_max_violation = eng.kkt_excess(coords);
    fit.active_set = nonzero_indices(fit.rho);
    fit.frozen = eng.frozen();
    return fit;
}

}  // namespace

RieszFit solve_quadratic_l1(const QuadForm& qf, double lambda,
                            const Eigen::VectorXd& weights, const SolverConfig& config,
                            const std::optional<Eigen::VectorXd>& init, bool active_set) {
    if (qf.H.rows() != qf.H.cols()) throw DimensionError("H must be square");
    if (qf.c.size() != qf.H.rows()) throw DimensionError("c length must equal rows of H");
    if (weights.size() != qf.H.rows()) throw DimensionError("weights length must equal p");
    return active_set ? solve_quadratic_active_set(qf, lambda, weights, config, init)
                      : solve_quadratic_cd(qf, lambda, weights, config, init);
}

double objective_value(const MomentSystem& system, const PenaltyConfig& penalty,
                       const Eigen::VectorXd& rho) {
    system.validate();
    if (rho.size() != system.p()) throw DimensionError("rho length must equal cols of G");
    const Eigen::VectorXd resid = system.M - system.G * rho;
    const Eigen::VectorXd w = penalty.weights(system.p());
    return resid.dot(system.omega.apply_scaled(resid)) +
           2.0 * penalty.lambda * (w.array() * rho.array().abs()).sum();
}

RieszFit solve_cd(const MomentSystem& system, const PenaltyConfig& penalty,
                  const SolverConfig& config, const std::optional<Eigen::VectorXd>& init) {
    system.validate();
    return solve_quadratic_l1(make_quad_form(system), penalty.lambda,
                              penalty.weights(system.p()), config, init, false);
}

RieszFit solve_active_set(const MomentSystem& system, const PenaltyConfig& penalty,
                          const SolverConfig& config,
                          const std::optional<Eigen::VectorXd>& init) {
    system.validate();
    return solve_quadratic_l1(make_quad_form(system), penalty.lambda,
                              penalty.weights(system.p()), config, init, true);
}

KktReport kkt_violations(const MomentSystem& system, const PenaltyConfig& penalty,
                         const Eigen::VectorXd& rho, double slack) {
    system.validate();
    if (rho.size() != system.p()) throw DimensionError("rho length must equal cols of G");
    const QuadForm qf = make_quad_form(system);
    const Eigen::VectorXd w = penalty.weights(system.p());
    const Eigen::VectorXd r = qf.c - qf.H * rho;
    KktReport report;
    for (int j = 0; j < system.p(); ++j) {
        const double thr = w[j] * penalty.lambda;
        double excess;
        bool active = rho[j] != 0.0;
        if (active) {
            excess = std::abs(r[j] - thr * (rho[j] > 0.0 ? 1.0 : -1.0));
        } else {
            excess = std::abs(r[j]) - thr;
        }
        report.max_excess = std::max(report.max_excess, excess);
        if (excess > slack) report.violations.push_back({j, excess, active});
    }
    return report;
}

Eigen::VectorXd closed_form_gmm(const MomentSystem& system) {
    system.validate();
    if (system.p() > system.q())
        throw SingularSystemError("closed-form solution requires p <= q");
    const QuadForm qf = make_quad_form(system);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(qf.H);
    if (!lu.isInvertible())
        throw SingularSystemError("normal matrix G' Omega_q G is singular");
    Eigen::VectorXd rho = lu.solve(qf.c);
    rho += lu.solve(qf.c - qf.H * rho);  // one refinement step
    return rho;
}

Eigen::VectorXd diagonal_weights(const Eigen::MatrixXd& psi_moments, double floor) {
    if (psi_moments.rows() < 2) throw DimensionError("diagonal weights require n >= 2");
    const Eigen::VectorXd sig2 =
        psi_moments.array().square().colwise().mean().transpose();
    for (int j = 0; j < sig2.size(); ++j) {
        if (sig2[j] < floor)
            throw DegenerateMomentError("moment " + std::to_string(j) +
                                        " has degenerate second moment " +
                                        std::to_string(sig2[j]));
    }
    return sig2.cwiseInverse();
}

MomentSystem MomentData::system(const Weight& w) const {
    MomentSystem s;
    s.G = D.transpose() * B / n();
    s.M = Mvals.colwise().mean().transpose();
    s.omega = w;
    return s;
}

MomentSystem MomentData::system_identity() const { return system(Weight::identity(q())); }

Eigen::MatrixXd MomentData::psi_at(const Eigen::VectorXd& rho) const {
    if (rho.size() != p()) throw DimensionError("rho length must equal p");
    const Eigen::VectorXd alpha = B * rho;  // n
    return Mvals - (D.array().colwise() * alpha.array()).matrix();
}

MomentData MomentData::subset(const std::vector<int>& rows) const {
    MomentData out;
    out.D.resize(static_cast<Eigen::Index>(rows.size()), D.cols());
    out.B.resize(static_cast<Eigen::Index>(rows.size()), B.cols());
    out.Mvals.resize(static_cast<Eigen::Index>(rows.size()), Mvals.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.D.row(static_cast<Eigen::Index>(i)) = D.row(rows[i]);
        out.B.row(static_cast<Eigen::Index>(i)) = B.row(rows[i]);
        out.Mvals.row(static_cast<Eigen::Index>(i)) = Mvals.row(rows[i]);
    }
    return out;
}

namespace {

Eigen::VectorXd uncentered_second_moments(const Eigen::MatrixXd& psi) {
    return psi.array().square().colwise().mean().transpose();
}

// Scaling the weight matrix and the penalty by the same constant leaves the
// minimizer unchanged; normalizing to unit geometric mean keeps the quadratic
// form commensurate with the absolute solver tolerances.
double geometric_mean(const Eigen::VectorXd& w) {
    return std::exp(w.array().log().mean());
}

}  // namespace

RieszFit two_stage_solve(const MomentData& data, const PenaltyConfig& penalty,
                         const SolverConfig& config) {
    RieszFit stage1 = solve_active_set(data.system_identity(), penalty, config);
    const Eigen::MatrixXd psi = data.psi_at(stage1.rho);
    const Eigen::VectorXd sig2 = uncentered_second_moments(psi);
    if ((sig2.array() < 1e-12).all()) {
        stage1.fell_back_identity = true;
        return stage1;
    }
    Eigen::VectorXd w = diagonal_weights(psi);
    const double scale = geometric_mean(w);
    PenaltyConfig pen = penalty;
    pen.lambda = penalty.lambda / scale;
    w /= scale;
    return solve_active_set(data.system(Weight::diagonal(w)), pen, config, stage1.rho);
}

RieszFit adaptive_solve(const MomentSystem& system, const PenaltyConfig& penalty,
                        const SolverConfig& config, double eps_w) {
    PenaltyConfig pilot = penalty;
    pilot.adaptive_weights.reset();
    RieszFit stage1 = solve_active_set(system, pilot, config);
    PenaltyConfig refit = penalty;
    refit.adaptive_weights =
        stage1.rho.array().abs().max(eps_w).inverse().matrix();
    return solve_active_set(system, refit, config, stage1.rho);
}

namespace {

// Closed-form warm start; the l1 problem is strictly convex whenever the
// normal matrix is invertible, so initialization only affects the sweep count.
std::optional<Eigen::VectorXd> closed_form_init(const MomentSystem& sys) {
    if (sys.p() > sys.q()) return std::nullopt;
    try {
        return closed_form_gmm(sys);
    } catch (const SingularSystemError&) {
        return std::nullopt;
    }
}

}  // namespace

RieszFit solve_pgmm(const MomentData& data, const PenaltyConfig& penalty,
                    const PgmmOptions& opts, const SolverConfig& config) {
    PenaltyConfig pilot = penalty;
    pilot.adaptive_weights.reset();
    const MomentSystem identity_system = data.system_identity();
    RieszFit stage1 =
        solve_active_set(identity_system, pilot, config, closed_form_init(identity_system));
    if (!opts.two_stage && !opts.adaptive) return stage1;

    Weight w = Weight::identity(data.q());
    PenaltyConfig refit = penalty;
    bool fell_back = false;
    if (opts.two_stage) {
        const Eigen::MatrixXd psi = data.psi_at(stage1.rho);
        const Eigen::VectorXd sig2 = uncentered_second_moments(psi);
        if ((sig2.array() < 1e-12).all()) {
            fell_back = true;
        } else {
            Eigen::VectorXd dw = diagonal_weights(psi);
            const double scale = geometric_mean(dw);
            dw /= scale;
            refit.lambda = penalty.lambda / scale;
            w = Weight::diagonal(dw);
        }
    }
    if (opts.adaptive) {
        refit.adaptive_weights =
            stage1.rho.array().abs().max(opts.eps_w).inverse().matrix();
    } else {
        refit.adaptive_weights.reset();
    }
    const MomentSystem refit_system = data.system(w);
    std::optional<Eigen::VectorXd> init = closed_form_init(refit_system);
    if (!init) init = stage1.rho;
    RieszFit out = solve_active_set(refit_system, refit, config, init);
    out.fell_back_identity = fell_back;
    return out;
}

CvReport cross_validate_c1(const MomentData& data, const std::vector<int>& fold_of,
                           int n_folds, const std::vector<double>& grid,
                           const PenaltyConfig& tmpl, const PgmmOptions& opts,
                           const SolverConfig& config) {
    if (n_folds < 2) throw DimensionError("cross-validation requires K >= 2");
    if (grid.empty()) throw DimensionError("cross-validation grid is empty");
    if (static_cast<int>(fold_of.size()) != data.n())
        throw DimensionError("fold assignment length must equal n");

    std::vector<std::vector<int>> train_rows(static_cast<std::size_t>(n_folds));
    std::vector<std::vector<int>> test_rows(static_cast<std::size_t>(n_folds));
    for (int i = 0; i < data.n(); ++i) {
        for (int k = 0; k < n_folds; ++k) {
            (fold_of[static_cast<std::size_t>(i)] == k ? test_rows : train_rows)
                [static_cast<std::size_t>(k)]
                    .push_back(i);
        }
    }

    CvReport report;
    report.curve.assign(grid.size(), std::numeric_limits<double>::infinity());
    for (std::size_t gi = 0; gi < grid.size(); ++gi) {
        double total = 0.0;
        bool ok = true;
        for (int k = 0; k < n_folds && ok; ++k) {
            const auto& tr = train_rows[static_cast<std::size_t>(k)];
            const auto& te = test_rows[static_cast<std::size_t>(k)];
            if (tr.empty() || te.empty()) {
                ok = false;
                report.failures.push_back("fold " + std::to_string(k) + " is empty");
                break;
            }
            try {
                const MomentData train = data.subset(tr);
                const MomentData test = data.subset(te);
                PenaltyConfig pen = tmpl;
                pen.lambda = grid[gi] * std::sqrt(std::log(static_cast<double>(data.q())) /
                                                  static_cast<double>(train.n()));
                const RieszFit fit = solve_pgmm(train, pen, opts, config);
                const Eigen::VectorXd w_test = diagonal_weights(test.psi_at(fit.rho));
                MomentSystem held = test.system(Weight::diagonal(w_test));
                const Eigen::VectorXd resid = held.M - held.G * fit.rho;
                total += resid.dot(held.omega.apply_scaled(resid));
            } catch (const NumericalError& e) {
                ok = false;
                report.failures.push_back("candidate " + std::to_string(gi) + " fold " +
                                          std::to_string(k) + ": " + e.what());
            }
        }
        if (ok) {
            report.curve[gi] = total;
        } else {
            report.excluded.push_back(static_cast<int>(gi));
        }
    }

    for (std::size_t gi = 0; gi < grid.size(); ++gi) {
        if (report.selected_index < 0 ||
            report.curve[gi] < report.curve[static_cast<std::size_t>(report.selected_index)]) {
            if (std::isfinite(report.curve[gi])) {
                report.selected_index = static_cast<int>(gi);
            }
        }
    }
    if (report.selected_index < 0)
        throw NumericalError("every cross-validation candidate failed");
    report.selected_c1 = grid[static_cast<std::size_t>(report.selected_index)];
    return report;
}

}  // namespace adml
