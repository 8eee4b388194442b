#include "adml/demand.hpp"

#include <cmath>
#include <sstream>

#include "adml/errors.hpp"
#include "adml/matrix_io.hpp"
#include "adml/rng.hpp"

namespace adml {

std::vector<Market> simulate_logit_markets(int J, int T, const DemandParams& params,
                                           std::uint64_t seed) {
    if (J < 1 || T < 1) throw DimensionError("simulate_logit_markets requires J, T >= 1");
    const int dx2 = 3;
    std::vector<Market> markets;
    markets.reserve(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
        Market m;
        m.J = J;
        m.seed = seed;
        m.x1.resize(J);
        m.x2.resize(J, dx2);
        m.xi.resize(J);
        m.cost.resize(J);
        m.prices.resize(J);
        for (int j = 0; j < J; ++j) m.x1[j] = rng.uniform();
        for (int j = 0; j < J; ++j)
            for (int c = 0; c < dx2; ++c) m.x2(j, c) = rng.uniform();
        for (int j = 0; j < J; ++j) m.xi[j] = rng.normal(params.xi_mean, params.xi_sd);
        for (int j = 0; j < J; ++j) m.cost[j] = rng.uniform();
        for (int j = 0; j < J; ++j) {
            const double e = rng.uniform(0.0, 0.1);
            m.prices[j] = 0.5 * std::abs(1.0 + m.x1[j] + m.x2.row(j).sum() + m.xi[j] +
                                         m.cost[j] + e);
        }
        Eigen::VectorXd delta(J);
        for (int j = 0; j < J; ++j) {
            delta[j] = params.beta_p * m.prices[j] + params.beta_x[0] * m.x1[j] +
                       params.beta_x[1] * m.x2(j, 0) + params.beta_x[2] * m.x2(j, 1) +
                       params.beta_x[3] * m.x2(j, 2) + m.xi[j];
        }
        const double denom = 1.0 + delta.array().exp().sum();
        m.shares.resize(J + 1);
        m.shares[0] = 1.0 / denom;
        for (int j = 0; j < J; ++j) m.shares[j + 1] = std::exp(delta[j]) / denom;
        markets.push_back(std::move(m));
    }
    return markets;
}

OmegaState build_omega(const Market& market, int j) {
    if (j < 1 || j > market.J) throw DimensionError("product index out of range");
    const OmegaLayout layout = market.layout();
    OmegaState st;
    st.product = j;
    st.layout = layout;
    st.values.resize(layout.dim());
    for (int b = 0; b < layout.J; ++b) {
        const int k = layout.rival_of_block(j, b);
        st.values[layout.share_pos(b)] = market.shares[k];
        if (k == 0) {
            // Outside good is normalized to zero, so differences are own levels.
            st.values[layout.price_pos(b)] = market.prices[j - 1];
            for (int c = 0; c < layout.dim_x2; ++c)
                st.values[layout.x2_pos(b, c)] = market.x2(j - 1, c);
        } else {
            st.values[layout.price_pos(b)] = market.prices[j - 1] - market.prices[k - 1];
            for (int c = 0; c < layout.dim_x2; ++c)
                st.values[layout.x2_pos(b, c)] = market.x2(j - 1, c) - market.x2(k - 1, c);
        }
    }
    return st;
}

Eigen::VectorXd build_instruments(const Market& market, int j) {
    if (j < 1 || j > market.J) throw DimensionError("product index out of range");
    const int dx2 = market.dim_x2();
    const int width = 2 + dx2;  // x1 diff, x2 diffs, cost diff
    Eigen::VectorXd z(market.J * width);
    const OmegaLayout layout = market.layout();
    for (int b = 0; b < market.J; ++b) {
        const int k = layout.rival_of_block(j, b);
        const int base = b * width;
        if (k == 0) {
            z[base] = market.x1[j - 1];
            for (int c = 0; c < dx2; ++c) z[base + 1 + c] = market.x2(j - 1, c);
            z[base + 1 + dx2] = market.cost[j - 1];
        } else {
            z[base] = market.x1[j - 1] - market.x1[k - 1];
            for (int c = 0; c < dx2; ++c)
                z[base + 1 + c] = market.x2(j - 1, c) - market.x2(k - 1, c);
            z[base + 1 + dx2] = market.cost[j - 1] - market.cost[k - 1];
        }
    }
    return z;
}

double build_outcome(const Market& market, int j) {
    if (j < 1 || j > market.J) throw DimensionError("product index out of range");
    if (!(market.shares[j] > 0.0) || !(market.shares[0] > 0.0))
        throw NumericalError("zero share in outcome construction");
    return std::log(market.shares[j] / market.shares[0]) - market.x1[j - 1];
}

Eigen::VectorXd outside_state(const OmegaState& omega) {
    const OmegaLayout& lay = omega.layout;
    const int j = omega.product;
    // Own share recovered from the simplex; own deltas from the k = 0 block.
    double own_share = 1.0;
    for (int b = 0; b < lay.J; ++b) own_share -= omega.values[lay.share_pos(b)];
    const int b0 = lay.block_of_rival(j, 0);
    Eigen::VectorXd delta_j0(1 + lay.dim_x2);
    delta_j0[0] = omega.values[lay.price_pos(b0)];
    for (int c = 0; c < lay.dim_x2; ++c) delta_j0[1 + c] = omega.values[lay.x2_pos(b0, c)];

    // The outside good's rivals are the inside goods 1..J ascending.
    Eigen::VectorXd out(lay.dim());
    for (int k = 1; k <= lay.J; ++k) {
        const int ob = k - 1;
        if (k == j) {
            out[lay.share_pos(ob)] = own_share;
            out[lay.price_pos(ob)] = -delta_j0[0];
            for (int c = 0; c < lay.dim_x2; ++c) out[lay.x2_pos(ob, c)] = -delta_j0[1 + c];
        } else {
            const int b = lay.block_of_rival(j, k);
            out[lay.share_pos(ob)] = omega.values[lay.share_pos(b)];
            out[lay.price_pos(ob)] = omega.values[lay.price_pos(b)] - delta_j0[0];
            for (int c = 0; c < lay.dim_x2; ++c)
                out[lay.x2_pos(ob, c)] = omega.values[lay.x2_pos(b, c)] - delta_j0[1 + c];
        }
    }
    return out;
}

Eigen::VectorXd logit_gamma_coefficients(const OmegaLayout& layout,
                                         const DemandParams& params) {
    Eigen::VectorXd coef = Eigen::VectorXd::Zero(layout.dim());
    // Own levels live in the outside-good block, which is block 0 for every
    // inside product (the outside good precedes all inside rivals).
    coef[layout.price_pos(0)] = params.beta_p;
    for (int c = 0; c < layout.dim_x2; ++c)
        coef[layout.x2_pos(0, c)] = params.beta_x[1 + c];
    return coef;
}

std::string markets_to_csv(const std::vector<Market>& markets) {
    std::ostringstream out;
    out << "market,product,share,outside_share,price,x1";
    const int dx2 = markets.empty() ? 3 : markets.front().dim_x2();
    for (int c = 0; c < dx2; ++c) out << ",x2_" << (c + 1);
    out << ",cost,xi\n";
    for (std::size_t t = 0; t < markets.size(); ++t) {
        const Market& m = markets[t];
        for (int j = 1; j <= m.J; ++j) {
            out << t << ',' << j << ',' << format_double(m.shares[j]) << ','
                << format_double(m.shares[0]) << ',' << format_double(m.prices[j - 1]) << ','
                << format_double(m.x1[j - 1]);
            for (int c = 0; c < dx2; ++c) out << ',' << format_double(m.x2(j - 1, c));
            out << ',' << format_double(m.cost[j - 1]) << ',' << format_double(m.xi[j - 1])
                << '\n';
        }
    }
    return out.str();
}

}  // namespace adml
