#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace adml {

// One monomial over the input coordinates, stored as (coordinate, power) factors
// with strictly increasing coordinates. An empty factor list is the constant 1.
struct Monomial {
    std::vector<std::pair<int, int>> factors;

    int degree() const {
        int d = 0;
        for (auto& [c, a] : factors) d += a;
        return d;
    }
};

// A raw empirical moment over per-rival state blocks: the rival average of
// s^share_power * prod_c Delta_c^delta_powers[c], where s is the leading entry
// of each block and Delta the remaining entries.
struct EmMoment {
    int share_power = 0;
    std::vector<int> delta_powers;

    int order() const {
        int n = share_power;
        for (int p : delta_powers) n += p;
        return n;
    }
};

// Dictionaries are immutable after construction; evaluation is pure.
class Dictionary {
public:
    // All pure powers x_c^a (a <= degree) and, optionally, the pairwise products
    // x_c^a x_e^b with a + b <= degree and c < e. Constant first, then powers of
    // each coordinate in ascending coordinate / ascending exponent order, then
    // interaction terms in ascending (c, e, a, b) order.
    static Dictionary polynomial(int dim, int degree, bool interactions);

    // Symmetric empirical-moment dictionary over a state laid out as num_rivals
    // consecutive blocks of width 1 + dim_delta (leading share-like entry, then
    // dim_delta difference entries). Raw moments are rival averages indexed by
    // admissible multi-indices of total order in [min_order, max_order]; the
    // emitted features apply an outer polynomial map to the raw moment vector.
    static Dictionary empirical_moments(int num_rivals, int dim_delta, int min_order,
                                        int max_order, int outer_degree,
                                        bool outer_interactions);

    int input_dim() const { return input_dim_; }
    int size() const;

    // Feature vector at a point; entry 0 is always 1.
    Eigen::VectorXd evaluate(const Eigen::VectorXd& point) const;

    // Analytic partial derivative of every feature with respect to one coordinate.
    Eigen::VectorXd partial(const Eigen::VectorXd& point, int coord) const;

    // size x input_dim matrix of all partials at a point.
    Eigen::MatrixXd partials_matrix(const Eigen::VectorXd& point) const;

    // Row i holds evaluate(points.row(i)).
    Eigen::MatrixXd evaluate_rows(const Eigen::MatrixXd& points) const;

    // Human-readable descriptor list (used by tests and the CLI diagnostics).
    std::vector<std::string> describe() const;

    bool is_empirical_moment() const;
    // Raw moment vector of an EM dictionary (before the outer map).
    Eigen::VectorXd raw_moments(const Eigen::VectorXd& point) const;
    int num_raw_moments() const;

private:
    struct PolyData {
        std::vector<Monomial> monomials;
    };
    struct EmData {
        int num_rivals = 0;
        int dim_delta = 0;
        std::vector<EmMoment> moments;
        std::vector<Monomial> outer;  // monomials over the raw moment vector
    };

    Dictionary() = default;

    int input_dim_ = 0;
    std::variant<PolyData, EmData> data_;
};

// Enumerates the monomial list used by Dictionary::polynomial (exposed so the
// EM dictionary can reuse it for the outer map).
std::vector<Monomial> enumerate_poly_monomials(int dim, int degree, bool interactions);

// Admissible EM multi-indices: total order n in [min_order, max_order], leading
// power positive, and for n >= 2 at least one difference entry with positive power.
std::vector<EmMoment> enumerate_em_moments(int dim_delta, int min_order, int max_order);

}  // namespace adml
