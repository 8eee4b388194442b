#include "adml/basis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "adml/errors.hpp"

namespace adml {

namespace {

double monomial_value(const Monomial& m, const Eigen::VectorXd& x) {
    double v = 1.0;
    for (auto& [c, a] : m.factors) {
        double p = 1.0;
        const double xc = x[c];
        for (int i = 0; i < a; ++i) p *= xc;
        v *= p;
    }
    return v;
}

// d/dx_coord of a monomial.
double monomial_partial(const Monomial& m, const Eigen::VectorXd& x, int coord) {
    double v = 0.0;
    for (std::size_t k = 0; k < m.factors.size(); ++k) {
        if (m.factors[k].first != coord) continue;
        const int a = m.factors[k].second;
        double term = static_cast<double>(a);
        for (std::size_t l = 0; l < m.factors.size(); ++l) {
            const auto& [c, p] = m.factors[l];
            const int power = (l == k) ? p - 1 : p;
            double xp = 1.0;
            for (int i = 0; i < power; ++i) xp *= x[c];
            term *= xp;
        }
        v += term;
    }
    return v;
}

}  // namespace

std::vector<Monomial> enumerate_poly_monomials(int dim, int degree, bool interactions) {
    std::vector<Monomial> out;
    out.push_back(Monomial{});  // constant
    for (int c = 0; c < dim; ++c)
        for (int a = 1; a <= degree; ++a) out.push_back(Monomial{{{c, a}}});
    if (interactions) {
        for (int c = 0; c < dim; ++c)
            for (int e = c + 1; e < dim; ++e)
                for (int a = 1; a < degree; ++a)
                    for (int b = 1; a + b <= degree; ++b)
                        out.push_back(Monomial{{{c, a}, {e, b}}});
    }
    return out;
}

std::vector<EmMoment> enumerate_em_moments(int dim_delta, int min_order, int max_order) {
    std::vector<EmMoment> out;
    std::vector<int> idx(static_cast<std::size_t>(dim_delta) + 1, 0);
    // Recursive enumeration in lexicographic multi-index order.
    auto rec = [&](auto&& self, int pos, int remaining) -> void {
        if (pos == dim_delta) {
            idx[static_cast<std::size_t>(pos)] = remaining;
            const int n = std::accumulate(idx.begin(), idx.end(), 0);
            if (idx[0] <= 0) return;
            if (n >= 2) {
                bool has_delta = false;
                for (int k = 1; k <= dim_delta; ++k)
                    if (idx[static_cast<std::size_t>(k)] > 0) has_delta = true;
                if (!has_delta) return;
            }
            EmMoment m;
            m.share_power = idx[0];
            m.delta_powers.assign(idx.begin() + 1, idx.end());
            out.push_back(std::move(m));
            return;
        }
        for (int a = remaining; a >= 0; --a) {
            idx[static_cast<std::size_t>(pos)] = a;
            self(self, pos + 1, remaining - a);
        }
    };
    for (int n = min_order; n <= max_order; ++n) rec(rec, 0, n);
    return out;
}

Dictionary Dictionary::polynomial(int dim, int degree, bool interactions) {
    if (dim < 1 || degree < 1)
        throw DimensionError("polynomial dictionary requires dim >= 1 and degree >= 1");
    Dictionary d;
    d.input_dim_ = dim;
    d.data_ = PolyData{enumerate_poly_monomials(dim, degree, interactions)};
    return d;
}

Dictionary Dictionary::empirical_moments(int num_rivals, int dim_delta, int min_order,
                                         int max_order, int outer_degree,
                                         bool outer_interactions) {
    if (num_rivals < 1 || dim_delta < 1)
        throw DimensionError("empirical-moment dictionary requires num_rivals, dim_delta >= 1");
    if (min_order < 1 || min_order > max_order)
        throw DimensionError("empirical-moment dictionary requires 1 <= min_order <= max_order");
    if (outer_degree < 1) throw DimensionError("outer_degree must be >= 1");
    EmData em;
    em.num_rivals = num_rivals;
    em.dim_delta = dim_delta;
    em.moments = enumerate_em_moments(dim_delta, min_order, max_order);
    if (em.moments.empty()) throw DimensionError("empty admissible empirical-moment set");
    em.outer = enumerate_poly_monomials(static_cast<int>(em.moments.size()), outer_degree,
                                        outer_interactions);
    Dictionary d;
    d.input_dim_ = num_rivals * (1 + dim_delta);
    d.data_ = std::move(em);
    return d;
}

int Dictionary::size() const {
    if (auto* p = std::get_if<PolyData>(&data_)) return static_cast<int>(p->monomials.size());
    return static_cast<int>(std::get<EmData>(data_).outer.size());
}

bool Dictionary::is_empirical_moment() const { return std::holds_alternative<EmData>(data_); }

int Dictionary::num_raw_moments() const {
    return static_cast<int>(std::get<EmData>(data_).moments.size());
}

namespace {

// Per-rival contribution to one raw moment.
double em_block_term(const EmMoment& m, const Eigen::VectorXd& x, int block, int width) {
    const int base = block * width;
    double v = 1.0;
    for (int i = 0; i < m.share_power; ++i) v *= x[base];
    for (std::size_t c = 0; c < m.delta_powers.size(); ++c)
        for (int i = 0; i < m.delta_powers[c]; ++i) v *= x[base + 1 + static_cast<int>(c)];
    return v;
}

}  // namespace

Eigen::VectorXd Dictionary::raw_moments(const Eigen::VectorXd& point) const {
    const auto& em = std::get<EmData>(data_);
    const int width = 1 + em.dim_delta;
    Eigen::VectorXd out(static_cast<Eigen::Index>(em.moments.size()));
    std::vector<double> terms(static_cast<std::size_t>(em.num_rivals));
    for (std::size_t k = 0; k < em.moments.size(); ++k) {
        for (int b = 0; b < em.num_rivals; ++b)
            terms[static_cast<std::size_t>(b)] = em_block_term(em.moments[k], point, b, width);
        // Canonical summation order makes the feature bitwise invariant under
        // rival-block permutation.
        std::sort(terms.begin(), terms.end());
        double s = 0.0;
        for (double t : terms) s += t;
        out[static_cast<Eigen::Index>(k)] = s / em.num_rivals;
    }
    return out;
}

Eigen::VectorXd Dictionary::evaluate(const Eigen::VectorXd& point) const {
    if (point.size() != input_dim_)
        throw DimensionError("dictionary evaluate: point has dim " +
                             std::to_string(point.size()) + ", expected " +
                             std::to_string(input_dim_));
    if (auto* p = std::get_if<PolyData>(&data_)) {
        Eigen::VectorXd out(static_cast<Eigen::Index>(p->monomials.size()));
        for (std::size_t k = 0; k < p->monomials.size(); ++k)
            out[static_cast<Eigen::Index>(k)] = monomial_value(p->monomials[k], point);
        return out;
    }
    const auto& em = std::get<EmData>(data_);
    const Eigen::VectorXd m = raw_moments(point);
    Eigen::VectorXd out(static_cast<Eigen::Index>(em.outer.size()));
    for (std::size_t k = 0; k < em.outer.size(); ++k)
        out[static_cast<Eigen::Index>(k)] = monomial_value(em.outer[k], m);
    return out;
}

Eigen::VectorXd Dictionary::partial(const Eigen::VectorXd& point, int coord) const {
    if (point.size() != input_dim_)
        throw DimensionError("dictionary partial: point has dim " + std::to_string(point.size()) +
                             ", expected " + std::to_string(input_dim_));
    if (coord < 0 || coord >= input_dim_)
        throw DimensionError("dictionary partial: coordinate out of range");
    if (auto* p = std::get_if<PolyData>(&data_)) {
        Eigen::VectorXd out(static_cast<Eigen::Index>(p->monomials.size()));
        for (std::size_t k = 0; k < p->monomials.size(); ++k)
            out[static_cast<Eigen::Index>(k)] = monomial_partial(p->monomials[k], point, coord);
        return out;
    }
    const auto& em = std::get<EmData>(data_);
    const int width = 1 + em.dim_delta;
    const int block = coord / width;
    const int pos = coord % width;
    const Eigen::VectorXd m = raw_moments(point);
    // dm_k / d point_coord: only the owning block's term moves.
    Eigen::VectorXd dm(static_cast<Eigen::Index>(em.moments.size()));
    for (std::size_t k = 0; k < em.moments.size(); ++k) {
        const EmMoment& mom = em.moments[k];
        const int power = (pos == 0) ? mom.share_power
                                     : mom.delta_powers[static_cast<std::size_t>(pos - 1)];
        if (power == 0) {
            dm[static_cast<Eigen::Index>(k)] = 0.0;
            continue;
        }
        const int base = block * width;
        double term = static_cast<double>(power);
        for (int e = 0; e < width; ++e) {
            const int pw = (e == 0) ? mom.share_power
                                    : mom.delta_powers[static_cast<std::size_t>(e - 1)];
            const int eff = (e == pos) ? pw - 1 : pw;
            double xp = 1.0;
            for (int i = 0; i < eff; ++i) xp *= point[base + e];
            term *= xp;
        }
        dm[static_cast<Eigen::Index>(k)] = term / em.num_rivals;
    }
    Eigen::VectorXd out(static_cast<Eigen::Index>(em.outer.size()));
    for (std::size_t k = 0; k < em.outer.size(); ++k) {
        double v = 0.0;
        for (auto& [c, __] : em.outer[k].factors) {
            (void)__;
            if (dm[c] != 0.0) {
                v += monomial_partial(em.outer[k], m, c) * dm[c];
            }
        }
        // Avoid double counting: monomial_partial already sums over repeated
        // coordinates, but outer monomials store each coordinate once.
        out[static_cast<Eigen::Index>(k)] = v;
    }
    return out;
}

Eigen::MatrixXd Dictionary::partials_matrix(const Eigen::VectorXd& point) const {
    Eigen::MatrixXd out(size(), input_dim_);
    for (int c = 0; c < input_dim_; ++c) out.col(c) = partial(point, c);
    return out;
}

Eigen::MatrixXd Dictionary::evaluate_rows(const Eigen::MatrixXd& points) const {
    Eigen::MatrixXd out(points.rows(), size());
    for (Eigen::Index i = 0; i < points.rows(); ++i)
        out.row(i) = evaluate(points.row(i).transpose()).transpose();
    return out;
}

std::vector<std::string> Dictionary::describe() const {
    std::vector<std::string> out;
    auto mono_str = [](const Monomial& m, const std::string& var) {
        if (m.factors.empty()) return std::string("1");
        std::ostringstream ss;
        bool first = true;
        for (auto& [c, a] : m.factors) {
            if (!first) ss << "*";
            first = false;
            ss << var << c;
            if (a > 1) ss << "^" << a;
        }
        return ss.str();
    };
    if (auto* p = std::get_if<PolyData>(&data_)) {
        for (const auto& m : p->monomials) out.push_back(mono_str(m, "x"));
        return out;
    }
    const auto& em = std::get<EmData>(data_);
    for (const auto& m : em.outer) out.push_back(mono_str(m, "m"));
    return out;
}

}  // namespace adml
