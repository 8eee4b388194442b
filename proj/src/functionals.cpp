#include "adml/functionals.hpp"

#include <cmath>

#include "adml/errors.hpp"

namespace adml {

namespace {

class AvgDerivative : public LinearFunctional {
public:
    AvgDerivative(int coord, std::function<double(const Eigen::VectorXd&)> weight)
        : coord_(coord), weight_(std::move(weight)) {}

    double value(const Eigen::VectorXd& x, const GammaModel& gamma) const override {
        return w(x) * gamma.gradient(x)[coord_];
    }
    Eigen::VectorXd moment_row(const Eigen::VectorXd& x,
                               const Dictionary& dict) const override {
        return w(x) * dict.partial(x, coord_);
    }
    double gateaux(const Eigen::VectorXd& x, const ScalarField& zeta) const override {
        return w(x) * zeta.gradient(x)[coord_];
    }

private:
    double w(const Eigen::VectorXd& x) const { return weight_ ? weight_(x) : 1.0; }
    int coord_;
    std::function<double(const Eigen::VectorXd&)> weight_;
};

class PolicyEffect : public LinearFunctional {
public:
    explicit PolicyEffect(std::function<Eigen::VectorXd(const Eigen::VectorXd&)> transform)
        : transform_(std::move(transform)) {}

    double value(const Eigen::VectorXd& x, const GammaModel& gamma) const override {
        return gamma.predict(transform_(x)) - gamma.predict(x);
    }
    Eigen::VectorXd moment_row(const Eigen::VectorXd& x,
                               const Dictionary& dict) const override {
        return dict.evaluate(transform_(x)) - dict.evaluate(x);
    }
    double gateaux(const Eigen::VectorXd& x, const ScalarField& zeta) const override {
        return zeta.value(transform_(x)) - zeta.value(x);
    }

private:
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> transform_;
};

}  // namespace

LinearFunctionalPtr avg_derivative_spec(int coord,
                                        std::function<double(const Eigen::VectorXd&)> weight) {
    if (coord < 0) throw DimensionError("derivative coordinate must be nonnegative");
    return std::make_shared<AvgDerivative>(coord, std::move(weight));
}

LinearFunctionalPtr policy_effect_spec(
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> transform) {
    return std::make_shared<PolicyEffect>(std::move(transform));
}

Eigen::MatrixXd build_G_hat(const Dictionary& d_dict, const Dictionary& b_dict,
                            const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z) {
    if (X.rows() != Z.rows()) throw DimensionError("X and Z row counts differ");
    if (X.rows() == 0) throw DimensionError("empty data in build_G_hat");
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(d_dict.size(), b_dict.size());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        G.noalias() += d_dict.evaluate(X.row(i).transpose()) *
                       b_dict.evaluate(Z.row(i).transpose()).transpose();
    }
    return G / static_cast<double>(X.rows());
}

Eigen::VectorXd build_M_linear(const LinearFunctional& spec, const Dictionary& d_dict,
                               const Eigen::MatrixXd& X) {
    if (X.rows() == 0) throw DimensionError("empty data in build_M_linear");
    Eigen::VectorXd M = Eigen::VectorXd::Zero(d_dict.size());
    for (Eigen::Index i = 0; i < X.rows(); ++i)
        M += spec.moment_row(X.row(i).transpose(), d_dict);
    return M / static_cast<double>(X.rows());
}

Eigen::MatrixXd log_share_jacobian(const Eigen::VectorXd& shares, double tol) {
    const int J = static_cast<int>(shares.size()) - 1;
    if (J < 1) throw DimensionError("log_share_jacobian needs at least one inside good");
    if ((shares.array() <= 0.0).any())
        throw NumericalError("log_share_jacobian: shares must be strictly positive");
    if (std::abs(shares.sum() - 1.0) > tol)
        throw NumericalError("log_share_jacobian: shares do not lie on the simplex");
    const double inv_s0 = 1.0 / shares[0];
    Eigen::MatrixXd L = Eigen::MatrixXd::Constant(J, J, inv_s0);
    for (int j = 0; j < J; ++j) L(j, j) += 1.0 / shares[j + 1];
    return L;
}

GammaJacobians assemble_jacobians(const Eigen::MatrixXd& partials,
                                  const OmegaLayout& layout) {
    const int J = layout.J;
    if (partials.rows() != J || partials.cols() != layout.dim())
        throw DimensionError("partials must be J x dim(omega)");
    GammaJacobians jac;
    jac.price = Eigen::MatrixXd::Zero(J, J);
    jac.share = Eigen::MatrixXd::Zero(J, J);
    for (int j = 1; j <= J; ++j) {
        const auto row = partials.row(j - 1);
        const int b0 = layout.block_of_rival(j, 0);
        double own_price = 0.0;
        for (int b = 0; b < J; ++b) own_price += row[layout.price_pos(b)];
        const double s0_sensitivity = row[layout.share_pos(b0)];
        for (int m = 1; m <= J; ++m) {
            if (m == j) {
                jac.price(j - 1, m - 1) = own_price;
                // Own share is not stored; only the dependent outside share moves.
                jac.share(j - 1, m - 1) = -s0_sensitivity;
            } else {
                const int bm = layout.block_of_rival(j, m);
                jac.price(j - 1, m - 1) = -row[layout.price_pos(bm)];
                jac.share(j - 1, m - 1) = row[layout.share_pos(bm)] - s0_sensitivity;
            }
        }
    }
    return jac;
}

GammaJacobians gamma_jacobians(const GammaModel& gamma, const Market& market) {
    const OmegaLayout layout = market.layout();
    if (gamma.input_dim() != layout.dim())
        throw DimensionError("gamma input dim does not match the omega layout");
    Eigen::MatrixXd partials(layout.J, layout.dim());
    for (int j = 1; j <= layout.J; ++j)
        partials.row(j - 1) = gamma.gradient(build_omega(market, j).values).transpose();
    return assemble_jacobians(partials, layout);
}

namespace {

ElasticityContext context_from(const Eigen::VectorXd& shares,
                               const Eigen::MatrixXd& price_jac,
                               const Eigen::MatrixXd& share_jac, double cond_limit,
                               int market_id) {
    const Eigen::MatrixXd L = log_share_jacobian(shares);
    const Eigen::MatrixXd A = L - share_jac;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
    if (!lu.isInvertible())
        throw SingularSystemError("singular share-response matrix in market " +
                                  std::to_string(market_id));
    const Eigen::MatrixXd A_inv = lu.inverse();
    const double cond = A.norm() * A_inv.norm();  // Frobenius condition estimate
    if (cond > cond_limit)
        throw SingularSystemError("ill-conditioned share-response matrix (cond ~ " +
                                  std::to_string(cond) + ") in market " +
                                  std::to_string(market_id));
    ElasticityContext ctx;
    ctx.A_inv = A_inv;
    ctx.price_jac = price_jac;
    ctx.dsdp = A_inv * price_jac;
    ctx.condition = cond;
    return ctx;
}

}  // namespace

ElasticityContext elasticity_context(const Market& market, const GammaModel& gamma,
                                     double cond_limit, int market_id) {
    const GammaJacobians jac = gamma_jacobians(gamma, market);
    return context_from(market.shares, jac.price, jac.share, cond_limit, market_id);
}

Eigen::MatrixXd elasticity_matrix_from(const Eigen::VectorXd& shares,
                                       const Eigen::VectorXd& prices,
                                       const Eigen::MatrixXd& price_jac,
                                       const Eigen::MatrixXd& share_jac, double cond_limit,
                                       int market_id) {
    const ElasticityContext ctx =
        context_from(shares, price_jac, share_jac, cond_limit, market_id);
    const int J = static_cast<int>(prices.size());
    Eigen::MatrixXd eps(J, J);
    for (int j = 0; j < J; ++j)
        for (int k = 0; k < J; ++k)
            eps(j, k) = prices[k] / shares[j + 1] * ctx.dsdp(j, k);
    return eps;
}

Eigen::MatrixXd elasticity_matrix(const Market& market, const GammaModel& gamma,
                                  double cond_limit, int market_id) {
    const GammaJacobians jac = gamma_jacobians(gamma, market);
    return elasticity_matrix_from(market.shares, market.prices, jac.price, jac.share,
                                  cond_limit, market_id);
}

double elasticity_gateaux(const Market& market, const GammaModel& gamma,
                          const ScalarField& zeta, int target_j, double cond_limit,
                          int market_id) {
    const OmegaLayout layout = market.layout();
    const ElasticityContext ctx = elasticity_context(market, gamma, cond_limit, market_id);
    Eigen::MatrixXd zeta_partials(layout.J, layout.dim());
    for (int j = 1; j <= layout.J; ++j)
        zeta_partials.row(j - 1) = zeta.gradient(build_omega(market, j).values).transpose();
    const GammaJacobians zjac = assemble_jacobians(zeta_partials, layout);
    const int j = target_j - 1;
    const double term1 = (ctx.A_inv.row(j) * zjac.price.col(j))(0);
    const double term2 = (ctx.A_inv.row(j) * zjac.share * ctx.dsdp.col(j))(0);
    return market.prices[j] / market.shares[target_j] * (term1 + term2);
}

Eigen::VectorXd elasticity_gateaux_all(const Market& market, const ElasticityContext& ctx,
                                       const Dictionary& d_dict, int target_j) {
    const OmegaLayout layout = market.layout();
    if (d_dict.input_dim() != layout.dim())
        throw DimensionError("dictionary input dim does not match the omega layout");
    const int J = layout.J;
    const int q = d_dict.size();
    // partial of every basis function at every product state: J stacked q x dim.
    std::vector<Eigen::MatrixXd> partials;
    partials.reserve(static_cast<std::size_t>(J));
    for (int j = 1; j <= J; ++j)
        partials.push_back(d_dict.partials_matrix(build_omega(market, j).values));

    const int j = target_j - 1;
    const Eigen::VectorXd u = ctx.A_inv.row(j).transpose();  // J
    const Eigen::VectorXd v = ctx.dsdp.col(j);               // J
    const double prefactor = market.prices[j] / market.shares[target_j];

    Eigen::VectorXd out(q);
    Eigen::MatrixXd zp(J, J), zs(J, J);
    for (int k = 0; k < q; ++k) {
        // Assemble the direction's Jacobian rows from the cached partials.
        Eigen::MatrixXd dir_partials(J, layout.dim());
        for (int row = 0; row < J; ++row)
            dir_partials.row(row) = partials[static_cast<std::size_t>(row)].row(k);
        const GammaJacobians zjac = assemble_jacobians(dir_partials, layout);
        const double term1 = u.dot(zjac.price.col(j));
        const double term2 = u.dot(zjac.share * v);
        out[k] = prefactor * (term1 + term2);
    }
    return out;
}

double logit_elasticity_oracle(double beta_p, double price, double share) {
    if (!(share > 0.0 && share < 1.0))
        throw DimensionError("logit elasticity oracle requires share in (0, 1)");
    return beta_p * price * (1.0 - share);
}

}  // namespace adml
