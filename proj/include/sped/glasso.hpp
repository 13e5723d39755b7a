#pragma once

// Graphical lasso by blockwise coordinate descent over the columns of the
// covariance iterate, each column solved exactly.
//
// Solves   max_{Theta > 0}  log det Theta - tr(S Theta) - lambda * sum_{i != j} |Theta_ij|
//
// The diagonal is unpenalized, so the covariance iterate keeps W_jj = S_jj.
// A full elementwise penalty (diagonal included) is obtained by passing
// S + lambda I, which is how the co-kriging Sigma update calls it.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "sped/error.hpp"

namespace sped {

struct GlassoOptions {
    double tol = 1e-6;  // bound on the KKT residual at return
    int max_iter = 1000;
    int inner_max_iter = 2000;  // active-set steps per column solve
};

struct GlassoResult {
    Eigen::MatrixXd precision;   // symmetric, exact zeros where penalized out
    Eigen::MatrixXd covariance;  // covariance iterate, equal to precision^{-1} at optimum
    int iterations = 0;
    double kkt_residual = 0.0;
};

/// Largest violation of the optimality conditions, given covariance = precision^{-1}:
/// active entries need (cov - S)_ij = lambda sign(Theta_ij), inactive ones |(cov - S)_ij| <= lambda,
/// and the diagonal needs cov_jj = S_jj. Entry (i, j) is measured in units of sqrt(S_ii S_jj).
inline double glasso_kkt_residual(const Eigen::MatrixXd& S, const Eigen::MatrixXd& precision,
                                  const Eigen::MatrixXd& covariance, double lambda) {
    if (!precision.allFinite() || !covariance.allFinite()) return std::numeric_limits<double>::infinity();
    const auto m = S.rows();
    double worst = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
        worst = std::max(worst, std::abs(covariance(i, i) - S(i, i)) / S(i, i));
        for (Eigen::Index j = 0; j < m; ++j) {
            if (i == j) continue;
            const double g = covariance(i, j) - S(i, j);
            const double t = precision(i, j);
            double v = std::abs(g) - lambda;
            if (t > 0.0) v = std::abs(g - lambda);
            else if (t < 0.0) v = std::abs(g + lambda);
            worst = std::max(worst, v / std::sqrt(S(i, i) * S(j, j)));
        }
    }
    return worst;
}

inline double glasso_kkt_residual(const Eigen::MatrixXd& S, const Eigen::MatrixXd& precision, double lambda) {
    Eigen::LLT<Eigen::MatrixXd> llt(precision);
    if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
    const Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(S.rows(), S.cols()));
    return glasso_kkt_residual(S, precision, cov, lambda);
}

namespace detail {

/// min 0.5 x^T A x - b^T x + lambda |x|_1 for SPD A by feature-sign search
/// (exact solves on the signed active set, line search over sign crossings).
/// `x` carries the warm start in and the solution out.
inline bool lasso_feature_sign(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, double lambda, Eigen::VectorXd& x,
                               int max_steps) {
    using Eigen::Index;
    using Eigen::VectorXd;
    const Index n = b.size();
    const double slack = 1e-12 * std::max(1.0, b.cwiseAbs().maxCoeff());
    auto value = [&](const VectorXd& z) { return 0.5 * z.dot(A * z) - b.dot(z) + lambda * z.cwiseAbs().sum(); };
    VectorXd sign = x.unaryExpr([](double v) { return double((v > 0.0) - (v < 0.0)); });
    for (int step = 0; step < max_steps; ++step) {
        std::vector<Index> act;
        for (Index k = 0; k < n; ++k)
            if (sign[k] != 0.0) act.push_back(k);
        bool settled = act.empty();
        if (!settled) {
            const VectorXd rhs = b(act) - lambda * sign(act);
            VectorXd target = x;
            const VectorXd solved = Eigen::LLT<Eigen::MatrixXd>(A(act, act)).solve(rhs);
            target(act) = solved;
            // candidates: the full step and every point where an active coefficient leaves its sign
            VectorXd best = target;
            double best_f = value(target);
            Index best_zero = -1;
            for (Index k : act) {
                if (target[k] * sign[k] > 0.0) continue;
                const double t = x[k] / (x[k] - target[k]);
                VectorXd z = x + t * (target - x);
                z[k] = 0.0;
                const double f = value(z);
                if (f < best_f) {
                    best = z;
                    best_f = f;
                    best_zero = k;
                }
            }
            x = best;
            if (best_zero >= 0) x[best_zero] = 0.0;
            for (Index k = 0; k < n; ++k) sign[k] = double((x[k] > 0.0) - (x[k] < 0.0));
            settled = best_zero < 0;
            for (Index k : act) settled = settled && target[k] * sign[k] > 0.0;
        }
        if (!settled) continue;
        const VectorXd g = A * x - b;
        Index pick = -1;
        double worst = lambda + slack;
        for (Index k = 0; k < n; ++k)
            if (sign[k] == 0.0 && std::abs(g[k]) > worst) {
                worst = std::abs(g[k]);
                pick = k;
            }
        if (pick < 0) return true;
        sign[pick] = g[pick] > 0.0 ? -1.0 : 1.0;
    }
    return false;
}

}  // namespace detail

/// Sparse precision estimate from a symmetric matrix S with positive diagonal.
/// `warm_precision`, when given, seeds the per-column regressions.
inline GlassoResult graphical_lasso(const Eigen::MatrixXd& S, double lambda, const GlassoOptions& opt = {},
                                    const std::optional<Eigen::MatrixXd>& warm_precision = std::nullopt) {
    using Eigen::Index;
    using Eigen::MatrixXd;
    const Index m = S.rows();
    if (S.cols() != m || m == 0) throw InvalidInput("glasso input must be a non-empty square matrix");
    if (!S.allFinite()) throw InvalidInput("glasso input must be finite");
    if ((S - S.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, S.cwiseAbs().maxCoeff()))
        throw InvalidInput("glasso input must be symmetric");
    if ((S.diagonal().array() <= 0.0).any()) throw InvalidInput("glasso input needs a positive diagonal");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidInput("glasso penalty must be finite and nonnegative");

    // W: covariance iterate; B: column j holds the regression of j on the rest.
    // S itself is dual-feasible, so the iterates stay positive definite when S is
    MatrixXd W = S;
    MatrixXd B = MatrixXd::Zero(m, m);
    if (warm_precision && warm_precision->rows() == m && warm_precision->cols() == m) {
        const MatrixXd& T = *warm_precision;
        if (T.allFinite() && (T.diagonal().array() > 0.0).all()) {
            for (Index j = 0; j < m; ++j) {
                B.col(j) = -T.col(j) / T(j, j);
                B(j, j) = 0.0;
            }
        }
    }

    GlassoResult res;
    res.kkt_residual = std::numeric_limits<double>::infinity();
    MatrixXd Theta(m, m);
    std::vector<Index> rest(static_cast<std::size_t>(m - 1));
    for (res.iterations = 1; res.iterations <= opt.max_iter; ++res.iterations) {
        for (Index j = 0; j < m; ++j) {
            for (Index k = 0, r = 0; k < m; ++k)
                if (k != j) rest[std::size_t(r++)] = k;
            const MatrixXd A = W(rest, rest);
            const Eigen::VectorXd b = S(rest, j);
            Eigen::VectorXd beta = B(rest, j);
            if (!detail::lasso_feature_sign(A, b, lambda, beta, opt.inner_max_iter))
                throw ConvergenceError("graphical lasso column solve did not terminate", res.kkt_residual);
            B(rest, j) = beta;
            const Eigen::VectorXd w = A * beta;
            W(rest, j) = w;
            W(j, rest) = w.transpose();
        }

        // Optimality is certified column by column on W and B, without inverting the precision:
        // W_12 = W_11 beta, and beta satisfies the lasso conditions against the current W_11.
        double worst = 0.0;
        for (Index j = 0; j < m; ++j) {
            for (Index k = 0, r = 0; k < m; ++k)
                if (k != j) rest[std::size_t(r++)] = k;
            const Eigen::VectorXd beta = B(rest, j);
            const Eigen::VectorXd w = W(rest, rest) * beta;
            const Eigen::VectorXd g = w - S(rest, j);
            for (Index r = 0; r < m - 1; ++r) {
                const Index k = rest[std::size_t(r)];
                double v = std::abs(g[r]) - lambda;
                if (beta[r] > 0.0) v = std::abs(g[r] + lambda);
                else if (beta[r] < 0.0) v = std::abs(g[r] - lambda);
                v = std::max(v, std::abs(W(k, j) - w[r]));
                worst = std::max(worst, v / std::sqrt(S(k, k) * S(j, j)));
            }
        }
        res.kkt_residual = worst;
        if (!(worst <= opt.tol)) continue;

        // precision from the regressions: theta_jj = 1 / (w_jj - w_12^T beta), theta_12 = -beta theta_jj
        for (Index j = 0; j < m; ++j) {
            double quad = 0.0;
            for (Index l = 0; l < m; ++l)
                if (l != j) quad += W(j, l) * B(l, j);
            const double tjj = 1.0 / (W(j, j) - quad);
            Theta.col(j) = -B.col(j) * tjj;
            Theta(j, j) = tjj;
        }
        Theta = 0.5 * (Theta + Theta.transpose()).eval();
        res.covariance = 0.5 * (W + W.transpose());
        if (!Theta.allFinite() || Eigen::LLT<MatrixXd>(Theta).info() != Eigen::Success) {
            // Near-singular W: the regression form loses the smallest eigenvalues to cancellation
            // in theta_jj. Invert W directly and keep the zero pattern when that stays definite.
            const Eigen::LLT<MatrixXd> cw(res.covariance);
            if (cw.info() != Eigen::Success)
                throw ConvergenceError("graphical lasso covariance is not positive definite", worst);
            MatrixXd inv = cw.solve(MatrixXd::Identity(m, m));
            inv = 0.5 * (inv + inv.transpose()).eval();
            Theta = inv;
            for (Index i = 0; i < m; ++i)
                for (Index j = 0; j < m; ++j)
                    if (i != j && B(i, j) == 0.0 && B(j, i) == 0.0) Theta(i, j) = 0.0;
            if (Eigen::LLT<MatrixXd>(Theta).info() != Eigen::Success) Theta = inv;
        }
        res.precision = Theta;
        return res;
    }
    throw ConvergenceError("graphical lasso did not converge (KKT residual " + std::to_string(res.kkt_residual) + ")",
                           res.kkt_residual);
}

}  // namespace sped
