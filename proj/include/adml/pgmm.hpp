#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

namespace adml {

// Weight matrix for the quadratic form; diagonal entries must be strictly
// positive, dense form symmetric PSD. The objective always uses Omega / q.
class Weight {
public:
    static Weight identity(int q);
    static Weight diagonal(Eigen::VectorXd entries);
    static Weight dense(Eigen::MatrixXd omega);

    bool is_diagonal() const { return dense_.size() == 0; }
    int q() const { return q_; }
    const Eigen::VectorXd& diag() const { return diag_; }
    const Eigen::MatrixXd& dense_matrix() const { return dense_; }

    // (Omega/q) * v
    Eigen::VectorXd apply_scaled(const Eigen::VectorXd& v) const;
    // G' (Omega/q) G and G' (Omega/q) M
    Eigen::MatrixXd quad_form(const Eigen::MatrixXd& G) const;
    Eigen::VectorXd cross(const Eigen::MatrixXd& G, const Eigen::VectorXd& M) const;

private:
    int q_ = 0;
    Eigen::VectorXd diag_;   // empty when dense
    Eigen::MatrixXd dense_;  // empty when diagonal
};

// One penalized minimum-distance problem: min (M - G rho)' (Omega/q) (M - G rho)
// + 2 lambda sum_j w_j |rho_j|.
struct MomentSystem {
    Eigen::MatrixXd G;  // q x p
    Eigen::VectorXd M;  // q
    Weight omega;

    int q() const { return static_cast<int>(G.rows()); }
    int p() const { return static_cast<int>(G.cols()); }
    void validate() const;
};

struct PenaltyConfig {
    double lambda = 0.0;  // base penalty level
    double c0 = 0.1;      // intercept penalty factor applied to coordinate 0
    // Optional per-coordinate adaptive weights (all > 0); the intercept factor
    // multiplies on top of these.
    std::optional<Eigen::VectorXd> adaptive_weights;

    // lambda = c1 * sqrt(log(q) / n)
    static PenaltyConfig from_c1(double c1, int q, int n, double c0 = 0.1);
    static PenaltyConfig fixed(double lambda, double c0 = 0.1);

    // Effective per-coordinate weights w_j (intercept factor included).
    Eigen::VectorXd weights(int p) const;
};

struct SolverConfig {
    double tol = 1e-6;     // max coordinate change per full cycle
    int max_sweeps = 10000;
    int max_outer = -1;    // active-set outer cap; -1 means p
};

struct RieszFit {
    Eigen::VectorXd rho;
    std::vector<int> active_set;          // indices of nonzero coordinates
    std::vector<double> objective_trace;  // per-sweep objective values
    double kkt_max_violation = 0.0;
    int sweeps_used = 0;
    int outer_iters_used = 0;
    std::vector<int> frozen;  // coordinates with zero curvature, pinned at 0
    bool fell_back_identity = false;  // two-stage fallback marker
};

struct KktViolation {
    int index;
    double excess;   // amount by which the condition is violated
    bool active;     // true if rho_j != 0
};

struct KktReport {
    std::vector<KktViolation> violations;
    double max_excess = 0.0;
    bool empty() const { return violations.empty(); }
};

double soft_threshold(double z, double tau);

// Generic l1-penalized convex quadratic shared by the minimum-distance solver
// and the regression lasso: min m0 - 2 c'rho + rho' H rho + 2 lambda sum w_j|rho_j|.
struct QuadForm {
    Eigen::MatrixXd H;
    Eigen::VectorXd c;
    double m0 = 0.0;
};

RieszFit solve_quadratic_l1(const QuadForm& qf, double lambda,
                            const Eigen::VectorXd& weights, const SolverConfig& config,
                            const std::optional<Eigen::VectorXd>& init, bool active_set);

double objective_value(const MomentSystem& system, const PenaltyConfig& penalty,
                       const Eigen::VectorXd& rho);

RieszFit solve_cd(const MomentSystem& system, const PenaltyConfig& penalty,
                  const SolverConfig& config = {},
                  const std::optional<Eigen::VectorXd>& init = std::nullopt);

RieszFit solve_active_set(const MomentSystem& system, const PenaltyConfig& penalty,
                          const SolverConfig& config = {},
                          const std::optional<Eigen::VectorXd>& init = std::nullopt);

KktReport kkt_violations(const MomentSystem& system, const PenaltyConfig& penalty,
                         const Eigen::VectorXd& rho, double slack);

// Unpenalized minimum-distance solution (G' Omega_q G)^{-1} G' Omega_q M.
Eigen::VectorXd closed_form_gmm(const MomentSystem& system);

// Inverse second-moment weights from per-observation moment values at a pilot
// estimate; sigma_j^2 is the uncentered mean of squares of column j.
Eigen::VectorXd diagonal_weights(const Eigen::MatrixXd& psi_moments,
                                 double floor = 1e-12);

// Observation-level ingredients of a PGMM problem, kept so the weight matrix
// can be re-estimated at a pilot solution and folds can be resampled.
struct MomentData {
    Eigen::MatrixXd D;      // n x q, d_j(X_i)
    Eigen::MatrixXd B;      // n x p, b_k(Z_i)
    Eigen::MatrixXd Mvals;  // n x q, m(W_i, d_j)

    int n() const { return static_cast<int>(D.rows()); }
    int q() const { return static_cast<int>(D.cols()); }
    int p() const { return static_cast<int>(B.cols()); }

    MomentSystem system(const Weight& w) const;
    MomentSystem system_identity() const;
    // Per-observation moment values psi_ij = Mvals_ij - D_ij * (B_i . rho).
    Eigen::MatrixXd psi_at(const Eigen::VectorXd& rho) const;
    MomentData subset(const std::vector<int>& rows) const;
};

// Stage 1 solves under the identity weight; stage 2 re-solves under the
// diagonal weight estimated at the stage-1 solution, warm-started there.
RieszFit two_stage_solve(const MomentData& data, const PenaltyConfig& penalty,
                         const SolverConfig& config = {});

// Pilot fit with unit adaptive weights, then refit with weights 1/|rho_j|
// floored at eps_w, warm-started at the pilot.
RieszFit adaptive_solve(const MomentSystem& system, const PenaltyConfig& penalty,
                        const SolverConfig& config = {}, double eps_w = 1e-8);

// Composition used by the estimation pipelines: one pilot (identity weight,
// unit adaptive weights), then one refit with the re-estimated diagonal weight
// and/or adaptive weights.
struct PgmmOptions {
    bool two_stage = true;
    bool adaptive = true;
    double eps_w = 1e-8;
};

RieszFit solve_pgmm(const MomentData& data, const PenaltyConfig& penalty,
                    const PgmmOptions& opts, const SolverConfig& config = {});

struct CvReport {
    double selected_c1 = 0.0;
    int selected_index = -1;
    std::vector<double> curve;            // CV criterion per grid point (inf if excluded)
    std::vector<int> excluded;            // grid indices excluded by fold failures
    std::vector<std::string> failures;    // human-readable failure notes
};

// K-fold cross-validation of the penalty multiplier c1 on the out-of-sample
// minimum-distance objective; held-out weights are re-estimated on the held-out
// fold at the training solution. Ties break toward the smallest grid index.
CvReport cross_validate_c1(const MomentData& data, const std::vector<int>& fold_of,
                           int n_folds, const std::vector<double>& grid,
                           const PenaltyConfig& tmpl, const PgmmOptions& opts,
                           const SolverConfig& config = {});

}  // namespace adml
