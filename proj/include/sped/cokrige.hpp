#pragma once

// Separable co-kriging over functional inputs.
//
// Responses y_i in R^m (log-stress on a fixed strain grid) are modeled jointly as
// Cov(y(a), y(b)) = rho(a, b) * Sigma with mean P beta, P = [1, log s].
// Conditioning on n runs gives
//
//     mean(new) = P beta + E^T R^{-1} r,      E = Y - 1_n (P beta)^T
//     cov(new)  = (1 - r^T R^{-1} r) Sigma
//
// so the nm x nm Kronecker system never has to be formed.

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "sped/error.hpp"
#include "sped/spectral.hpp"

namespace sped {

inline constexpr Index kDefaultStrainLevels = 41;
inline constexpr double kFirstStrainLevel = 0.00375;
inline constexpr double kLastStrainLevel = 0.15;

/// Strictly increasing positive strain levels (fractions, not percent).
struct StrainGrid {
    VectorXd levels;

    Index size() const { return levels.size(); }

    void validate() const {
        if (levels.size() == 0) throw InvalidInput("strain grid is empty");
        if (!levels.allFinite()) throw InvalidInput("strain grid has non-finite levels");
        for (Index j = 0; j < levels.size(); ++j) {
            if (levels[j] <= 0.0) throw InvalidInput("strain levels must be positive");
            if (j > 0 && levels[j] <= levels[j - 1]) throw InvalidInput("strain levels must be strictly increasing");
        }
    }
};

/// 41 levels uniformly spaced on [0.375%, 15%]; s = 0 is excluded because of the log basis.
inline StrainGrid default_strain_grid() {
    return StrainGrid{VectorXd::LinSpaced(kDefaultStrainLevels, kFirstStrainLevel, kLastStrainLevel)};
}

struct ResponseCurve {
    VectorXd values;
    bool in_log_space = false;

    Index size() const { return values.size(); }
};

inline ResponseCurve log_transform(const ResponseCurve& curve) {
    if (curve.in_log_space) throw InvalidInput("curve is already in log space");
    if (!curve.values.allFinite() || (curve.values.array() <= 0.0).any())
        throw InvalidInput("log transform needs finite positive stresses");
    return {curve.values.array().log().matrix(), true};
}

inline ResponseCurve back_transform(const ResponseCurve& curve) {
    if (!curve.in_log_space) throw InvalidInput("curve is not in log space");
    return {curve.values.array().exp().matrix(), false};
}

/// P = [1_m, log(s)].
inline MatrixXd mean_basis(const StrainGrid& grid) {
    grid.validate();
    MatrixXd P(grid.size(), 2);
    P.col(0).setOnes();
    P.col(1) = grid.levels.array().log().matrix();
    return P;
}

/// Fit diagnostics persisted with the model.
struct FitMetadata {
    double lambda_I = 0.0;
    double lambda_o = 0.0;
    double objective = 0.0;
    int iterations = 0;
};

/// Predictive distribution at one input: N(mean, scale * Sigma).
struct Prediction {
    ResponseCurve mean;  // log space
    double scale = 0.0;  // v = 1 - r^T R^{-1} r
    std::shared_ptr<const MatrixXd> sigma;

    MatrixXd covariance() const { return scale * (*sigma); }
    VectorXd marginal_variance() const { return scale * sigma->diagonal(); }
};

/// Conditioned co-kriging model. Immutable; every cache is derived from the
/// stored parameters in the constructor.
class TrainedEmulator {
public:
    TrainedEmulator(std::vector<StructureDesign> designs, StrainGrid grid, MatrixXd log_responses, KernelParams params,
                    VectorXd beta, MatrixXd sigma, FitMetadata meta = {})
        : designs_(std::move(designs)),
          grid_(std::move(grid)),
          Y_(std::move(log_responses)),
          params_(std::move(params)),
          beta_(std::move(beta)),
          sigma_(std::make_shared<const MatrixXd>(std::move(sigma))),
          meta_(meta) {
        P_ = mean_basis(grid_);
        const Index n = Index(designs_.size());
        const Index m = grid_.size();
        if (n == 0) throw InvalidInput("emulator needs at least one design");
        if (Y_.rows() != n || Y_.cols() != m) throw InvalidInput("response matrix must be n x m");
        if (!Y_.allFinite()) throw InvalidInput("responses must be finite");
        if (beta_.size() != P_.cols()) throw InvalidInput("beta length must match the basis");
        if (beta_.size() >= 2 && !(beta_[1] > 0.0)) throw InvalidInput("beta_2 must be positive (monotone mean)");
        const MatrixXd& S = *sigma_;
        if (S.rows() != m || S.cols() != m) throw InvalidInput("Sigma must be m x m");
        if (!S.allFinite() || (S - S.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, S.cwiseAbs().maxCoeff()))
            throw InvalidInput("Sigma must be symmetric");
        if (Eigen::LLT<MatrixXd>(S).info() != Eigen::Success) throw InvalidInput("Sigma must be positive definite");

        inputs_ = embed_designs(designs_, params_.family);
        detail::validate_params(params_, inputs_.dims());
        const MatrixXd R = assemble_correlation(pairwise_distances(inputs_), params_.theta, params_.theta_d, params_.nugget);
        chol_ = factorize_correlation(R);
        mu_ = P_ * beta_;
        residuals_ = Y_.rowwise() - mu_.transpose();
        weighted_residuals_ = chol_.solve(residuals_);
    }

    const std::vector<StructureDesign>& designs() const { return designs_; }
    const StrainGrid& grid() const { return grid_; }
    const MatrixXd& log_responses() const { return Y_; }
    const KernelParams& params() const { return params_; }
    const VectorXd& beta() const { return beta_; }
    const MatrixXd& sigma() const { return *sigma_; }
    const MatrixXd& basis() const { return P_; }
    const VectorXd& prior_mean() const { return mu_; }
    const FitMetadata& metadata() const { return meta_; }
    const KernelInputs& inputs() const { return inputs_; }
    const Eigen::LLT<MatrixXd>& chol_r() const { return chol_; }
    /// E = Y - 1 mu^T (n x m).
    const MatrixXd& residuals() const { return residuals_; }
    /// R^{-1} E.
    const MatrixXd& weighted_residuals() const { return weighted_residuals_; }
    Index num_designs() const { return Index(designs_.size()); }
    Index num_levels() const { return grid_.size(); }

    /// Prediction for an already-embedded input (used by the inverse-design loop).
    Prediction predict_embedded(const VectorXd& z, double diameter) const {
        const VectorXd r = cross_correlation(z, diameter, inputs_, params_);
        return predict_from_cross(r);
    }

    Prediction predict_from_cross(const VectorXd& r) const {
        const VectorXd mean = mu_ + weighted_residuals_.transpose() * r;
        const VectorXd Rinv_r = chol_.solve(r);
        double v = 1.0 - r.dot(Rinv_r);
        if (v < -1e-8) throw InternalError("negative predictive scale " + std::to_string(v));
        v = std::clamp(v, 0.0, 1.0);
        return Prediction{ResponseCurve{mean, true}, v, sigma_};
    }

private:
    std::vector<StructureDesign> designs_;
    StrainGrid grid_;
    MatrixXd Y_;
    KernelParams params_;
    VectorXd beta_;
    std::shared_ptr<const MatrixXd> sigma_;
    FitMetadata meta_;

    MatrixXd P_;
    KernelInputs inputs_;
    Eigen::LLT<MatrixXd> chol_;
    VectorXd mu_;
    MatrixXd residuals_;
    MatrixXd weighted_residuals_;
};

/// Posterior mean and scale at a new design.
inline Prediction predict(const TrainedEmulator& model, const StructureDesign& query) {
    if (query.curve.size() != model.inputs().curve_points)
        throw InvalidInput("query curve length does not match the training designs");
    return model.predict_embedded(kernel_features(query, model.params().family), query.diameter);
}

/// Standard normal quantile.
inline double normal_quantile(double prob) {
    static const boost::math::normal_distribution<double> standard;
    return boost::math::quantile(standard, prob);
}

struct PredictiveBand {
    ResponseCurve lower;
    ResponseCurve upper;
};

/// Pointwise HPD band in log space: mean_j +- z_{(1+level)/2} sqrt(v Sigma_jj).
inline PredictiveBand hpd_interval(const Prediction& pred, double level) {
    if (!(level > 0.0 && level < 1.0)) throw InvalidInput("interval level must lie in (0, 1)");
    if (pred.scale < -1e-8) throw InternalError("negative predictive scale");
    const double z = normal_quantile(0.5 * (1.0 + level));
    const VectorXd half = z * (std::max(pred.scale, 0.0) * pred.sigma->diagonal()).array().sqrt().matrix();
    return {ResponseCurve{pred.mean.values - half, true}, ResponseCurve{pred.mean.values + half, true}};
}

}  // namespace sped
