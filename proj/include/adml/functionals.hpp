#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>

#include "adml/basis.hpp"
#include "adml/demand.hpp"
#include "adml/mliv.hpp"

namespace adml {

// A linear functional m(W, gamma) of the structural function, evaluated at
// x-observations. Linearity means the moment row m(W, d) needs no gamma.
class LinearFunctional {
public:
    virtual ~LinearFunctional() = default;
    virtual double value(const Eigen::VectorXd& x, const GammaModel& gamma) const = 0;
    // m(W, d_j) for every dictionary function at once.
    virtual Eigen::VectorXd moment_row(const Eigen::VectorXd& x,
                                       const Dictionary& dict) const = 0;
    // Gateaux derivative in a generic direction; ignores gamma by linearity.
    virtual double gateaux(const Eigen::VectorXd& x, const ScalarField& zeta) const = 0;
};

using LinearFunctionalPtr = std::shared_ptr<const LinearFunctional>;

// omega(X) * d gamma / d x_coord.
LinearFunctionalPtr avg_derivative_spec(
    int coord, std::function<double(const Eigen::VectorXd&)> weight = nullptr);

// gamma(g(X)) - gamma(X).
LinearFunctionalPtr policy_effect_spec(
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> transform);

// G = (1/n) sum d(X_i) b(Z_i)'.
Eigen::MatrixXd build_G_hat(const Dictionary& d_dict, const Dictionary& b_dict,
                            const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z);

// M_j = (1/n) sum m(W_i, d_j).
Eigen::VectorXd build_M_linear(const LinearFunctional& spec, const Dictionary& d_dict,
                               const Eigen::MatrixXd& X);

// L_jk = d log(s_j / s_0) / d s_k = 1[j=k]/s_j + 1/s_0 over inside goods, with
// s_0 = 1 - sum of inside shares held implicit.
Eigen::MatrixXd log_share_jacobian(const Eigen::VectorXd& shares, double tol = 1e-10);

// Chain-rule derivative matrices of a fitted gamma over one market:
// price_jac(j,k) = d gamma(omega_j) / d p_k, share_jac(j,k) = d gamma(omega_j) / d s_k.
struct GammaJacobians {
    Eigen::MatrixXd price;  // J x J
    Eigen::MatrixXd share;  // J x J
};

GammaJacobians gamma_jacobians(const GammaModel& gamma, const Market& market);

// Same assembly applied to the Jacobian rows of an arbitrary direction; rows
// of `partials` hold the direction's gradient over omega coordinates, one row
// per product.
GammaJacobians assemble_jacobians(const Eigen::MatrixXd& partials, const OmegaLayout& layout);

struct ElasticityContext {
    Eigen::MatrixXd A_inv;      // (L - share_jac)^{-1}
    Eigen::MatrixXd price_jac;  // Gamma^p at the evaluation gamma
    Eigen::MatrixXd dsdp;       // A^{-1} Gamma^p
    double condition = 0.0;     // condition estimate of A
};

// Builds the implicit-function-theorem context; throws SingularSystemError
// when cond(A) exceeds cond_limit (default 1e12), tagging the market id.
ElasticityContext elasticity_context(const Market& market, const GammaModel& gamma,
                                     double cond_limit = 1e12, int market_id = -1);

// Full J x J elasticity matrix eps_jk = (p_k / s_j) [A^{-1} Gamma^p]_jk.
Eigen::MatrixXd elasticity_matrix(const Market& market, const GammaModel& gamma,
                                  double cond_limit = 1e12, int market_id = -1);

// Formula-level variant used when the derivative matrices are supplied directly.
Eigen::MatrixXd elasticity_matrix_from(const Eigen::VectorXd& shares,
                                       const Eigen::VectorXd& prices,
                                       const Eigen::MatrixXd& price_jac,
                                       const Eigen::MatrixXd& share_jac,
                                       double cond_limit = 1e12, int market_id = -1);

// Gateaux derivative of eps_jj in one generic direction.
double elasticity_gateaux(const Market& market, const GammaModel& gamma,
                          const ScalarField& zeta, int target_j,
                          double cond_limit = 1e12, int market_id = -1);

// Gateaux derivative of eps_jj in the direction of every dictionary function,
// reusing one context per market.
Eigen::VectorXd elasticity_gateaux_all(const Market& market, const ElasticityContext& ctx,
                                       const Dictionary& d_dict, int target_j);

// beta_p * price * (1 - share); requires share in (0, 1).
double logit_elasticity_oracle(double beta_p, double price, double share);

}  // namespace adml
