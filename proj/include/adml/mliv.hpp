#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "adml/basis.hpp"
#include "adml/pgmm.hpp"

namespace adml {

// A fitted structural function: deterministic prediction with an analytic
// gradient. Instances are immutable and safe for concurrent evaluation.
class GammaModel {
public:
    virtual ~GammaModel() = default;
    virtual int input_dim() const = 0;
    virtual double predict(const Eigen::VectorXd& x) const = 0;
    virtual Eigen::VectorXd gradient(const Eigen::VectorXd& x) const = 0;

    Eigen::VectorXd predict_rows(const Eigen::MatrixXd& points) const;
};

using GammaPtr = std::shared_ptr<const GammaModel>;

// gamma(x) = d(x)' beta over a dictionary.
class DictionaryGamma : public GammaModel {
public:
    DictionaryGamma(Dictionary dict, Eigen::VectorXd beta);
    int input_dim() const override { return dict_.input_dim(); }
    double predict(const Eigen::VectorXd& x) const override;
    Eigen::VectorXd gradient(const Eigen::VectorXd& x) const override;
    const Eigen::VectorXd& coefficients() const { return beta_; }
    const Dictionary& dictionary() const { return dict_; }

private:
    Dictionary dict_;
    Eigen::VectorXd beta_;
};

// Gaussian-kernel two-stage ridge fit: gamma(x) = sum_i alpha_i k(x_i, x).
class KernelIvGamma : public GammaModel {
public:
    KernelIvGamma(Eigen::MatrixXd stage1_x, Eigen::VectorXd alpha, double sigma_x);
    int input_dim() const override { return static_cast<int>(x1_.cols()); }
    double predict(const Eigen::VectorXd& x) const override;
    Eigen::VectorXd gradient(const Eigen::VectorXd& x) const override;
    double sigma_x() const { return sigma_x_; }

private:
    Eigen::MatrixXd x1_;
    Eigen::VectorXd alpha_;
    double sigma_x_;
};

// base + scale * field, used for directional perturbations of a fit.
struct ScalarField {
    std::function<double(const Eigen::VectorXd&)> value;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> gradient;

    static ScalarField from_dictionary(const Dictionary& dict, int index);
};

class ShiftedGamma : public GammaModel {
public:
    ShiftedGamma(GammaPtr base, ScalarField field, double scale)
        : base_(std::move(base)), field_(std::move(field)), scale_(scale) {}
    int input_dim() const override { return base_->input_dim(); }
    double predict(const Eigen::VectorXd& x) const override {
        return base_->predict(x) + scale_ * field_.value(x);
    }
    Eigen::VectorXd gradient(const Eigen::VectorXd& x) const override {
        return base_->gradient(x) + scale_ * field_.gradient(x);
    }

private:
    GammaPtr base_;
    ScalarField field_;
    double scale_;
};

struct DoubleLassoConfig {
    double stage1_penalty = 1e-4;
    int cv_folds = 3;
    int cv_grid_size = 100;
    double cv_grid_min = 1e-7;
    double cv_grid_max = 1e-1;
    std::uint64_t cv_seed = 0;
    // Lightly penalized lasso paths on correlated polynomial features need a
    // large sweep budget; warm starts keep the realized cost small.
    SolverConfig solver{1e-6, 1000000, -1};
};

struct DoubleLassoDiagnostics {
    double selected_lambda = 0.0;
    std::vector<double> cv_curve;      // mean held-out MSE per grid point
    std::vector<int> excluded_grid;    // grid points dropped by fold failures
};

// Stage 1 projects each non-constant d_j(X) on b(Z) by lasso at a fixed
// penalty; stage 2 selects the outcome lasso penalty by K-fold CV on the
// fitted features. Prediction applies the stage-2 coefficients to raw d(x).
GammaPtr fit_double_lasso(const Eigen::VectorXd& Y, const Eigen::MatrixXd& X,
                          const Eigen::MatrixXd& Z, const Dictionary& x_dict,
                          const Dictionary& z_dict, const DoubleLassoConfig& config = {},
                          DoubleLassoDiagnostics* diag = nullptr);

struct KernelIvConfig {
    double bandwidth_scale = 25.0;
    // The solves add n_stage * ridge * I. With wide bandwidths the kernel's
    // informative variation is small, so the defaults are kept light.
    double ridge1 = 3e-6;
    double ridge2 = 3e-6;
    double split_fraction = 0.5;
};

// Two-stage Gaussian kernel ridge. When groups are supplied the stage split is
// at group granularity (first split_fraction of distinct group ids in order of
// appearance); otherwise the leading rows form stage 1.
GammaPtr fit_kernel_iv(const Eigen::VectorXd& Y, const Eigen::MatrixXd& X,
                       const Eigen::MatrixXd& Z, const KernelIvConfig& config = {},
                       const std::vector<int>& groups = {});

// Median pairwise Euclidean distance, subsampled to at most max_points rows
// (even stride), times scale.
double median_heuristic(const Eigen::MatrixXd& points, double scale = 1.0,
                        int max_points = 2000);

// Plain lasso of y on features F (unpenalized intercept column expected at 0),
// solving (1/n)||y - F beta||^2 + 2 lambda |beta_{-0}|_1.
Eigen::VectorXd lasso_regression(const Eigen::MatrixXd& F, const Eigen::VectorXd& y,
                                 double lambda, const SolverConfig& config = {},
                                 const std::optional<Eigen::VectorXd>& init = std::nullopt);

}  // namespace adml
