#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace adml {

// Layout of the per-product symmetric state: one block per rival (outside good
// first, then inside rivals in ascending product index), each block holding
// (share, price difference, characteristic differences).
struct OmegaLayout {
    int J = 0;       // inside products
    int dim_x2 = 3;  // nonlinear characteristics

    int block_width() const { return 2 + dim_x2; }
    int dim() const { return J * block_width(); }

    // Rival product index of block b for product j (blocks ascend over
    // {0..J} \ {j}).
    int rival_of_block(int j, int b) const { return b < j ? b : b + 1; }
    int block_of_rival(int j, int k) const { return k < j ? k : k - 1; }

    int share_pos(int b) const { return b * block_width(); }
    int price_pos(int b) const { return b * block_width() + 1; }
    int x2_pos(int b, int c) const { return b * block_width() + 2 + c; }
};

struct Market {
    int J = 0;
    Eigen::VectorXd shares;  // J + 1, outside good first
    Eigen::VectorXd prices;  // J
    Eigen::VectorXd x1;      // J
    Eigen::MatrixXd x2;      // J x dim_x2
    Eigen::VectorXd cost;    // J
    Eigen::VectorXd xi;      // J, retained for oracles
    std::uint64_t seed = 0;

    int dim_x2() const { return static_cast<int>(x2.cols()); }
    OmegaLayout layout() const { return OmegaLayout{J, dim_x2()}; }
};

struct DemandParams {
    double beta_p = -2.0;
    Eigen::Vector4d beta_x{1.0, -0.5, 0.5, 1.0};  // on (x1, x2_1, x2_2, x2_3)
    double xi_mean = 1.0;
    double xi_sd = 0.15;
};

struct OmegaState {
    int product = 0;  // 1-based product index
    OmegaLayout layout;
    Eigen::VectorXd values;
};

// Deterministic in the seed: market t consumes a dedicated substream, drawing
// x1 (by product), x2 (product-major), xi, cost, and price noise in that order.
std::vector<Market> simulate_logit_markets(int J, int T, const DemandParams& params,
                                           std::uint64_t seed);

// State vector for product j: blocks (s_k, p_j - p_k, x2_j - x2_k) over rivals
// k ascending with the outside good first; the k = 0 block carries own levels.
OmegaState build_omega(const Market& market, int j);

// Instrument vector for product j: per-rival blocks of exogenous differences
// (x1_j - x1_k, x2_j - x2_k, cost_j - cost_k), same rival ordering as omega.
Eigen::VectorXd build_instruments(const Market& market, int j);

// y_jt = log(s_j / s_0) - x1_j.
double build_outcome(const Market& market, int j);

// The outside good's state reconstructed from any product's state.
Eigen::VectorXd outside_state(const OmegaState& omega);

// True inverse-demand function of the logit DGP expressed over omega
// coordinates: beta_p * p_j + x2_j' beta_x2 via the own-level block.
Eigen::VectorXd logit_gamma_coefficients(const OmegaLayout& layout,
                                         const DemandParams& params);

// One row per product-market: market, product, share, outside share, price,
// x1, x2..., cost, xi.
std::string markets_to_csv(const std::vector<Market>& markets);

}  // namespace adml
