#pragma once

// Shared fixtures: frozen golden values, random designs, dense reference
// computations that never use the Kronecker shortcuts.

#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "sped/sped.hpp"

namespace testutil {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline const nlohmann::json& golden() {
    static const nlohmann::json j = [] {
        std::ifstream in(SPED_GOLDEN_DIR "/golden.json");
        return nlohmann::json::parse(in);
    }();
    return j;
}

inline VectorXd vec(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const VectorXd>(v.data(), Index(v.size()));
}

inline MatrixXd mat(const nlohmann::json& j) {
    MatrixXd M(Index(j.size()), Index(j[0].size()));
    for (Index i = 0; i < M.rows(); ++i) M.row(i) = vec(j[std::size_t(i)]).transpose();
    return M;
}

inline double uniform(std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline sped::StructureDesign random_design(std::mt19937_64& rng, Index p, double amp = 1.0) {
    sped::StructureDesign d;
    d.diameter = uniform(rng, 0.2, 2.0);
    d.curve.length_mm = sped::kDefaultStructureLength;
    d.curve.values.resize(p);
    for (Index k = 0; k < p; ++k) d.curve.values[k] = uniform(rng, -amp, amp);
    return d;
}

inline std::vector<sped::StructureDesign> random_designs(std::mt19937_64& rng, Index n, Index p, double amp = 1.0) {
    std::vector<sped::StructureDesign> out;
    for (Index i = 0; i < n; ++i) out.push_back(random_design(rng, p, amp));
    return out;
}

/// Full-length DFT by the textbook complex sum.
inline std::vector<std::complex<double>> full_dft(const VectorXd& x) {
    const Index p = x.size();
    std::vector<std::complex<double>> out(static_cast<std::size_t>(p));
    for (Index k = 0; k < p; ++k) {
        std::complex<double> acc = 0.0;
        for (Index l = 0; l < p; ++l)
            acc += x[l] * std::polar(1.0, -2.0 * std::numbers::pi * double(l) * double(k) / double(p));
        out[std::size_t(k)] = acc;
    }
    return out;
}

/// Kernel evaluated entry by entry from the brute-force DFT.
inline double brute_sped(const sped::StructureDesign& a, const sped::StructureDesign& b, const VectorXd& theta,
                         double theta_d) {
    const auto fa = full_dft(a.curve.values), fb = full_dft(b.curve.values);
    double e = theta_d * (a.diameter - b.diameter) * (a.diameter - b.diameter);
    for (Index k = 0; k < theta.size(); ++k) {
        const double diff = std::abs(fa[std::size_t(k)]) - std::abs(fb[std::size_t(k)]);
        e += theta[k] * diff * diff;
    }
    return std::exp(-e);
}

inline MatrixXd brute_R(const std::vector<sped::StructureDesign>& ds, const VectorXd& theta, double theta_d,
                        double nugget) {
    const Index n = Index(ds.size());
    MatrixXd R(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j)
            R(i, j) = brute_sped(ds[std::size_t(i)], ds[std::size_t(j)], theta, theta_d) + (i == j ? nugget : 0.0);
    return R;
}

inline MatrixXd kron(const MatrixXd& A, const MatrixXd& B) {
    MatrixXd K(A.rows() * B.rows(), A.cols() * B.cols());
    for (Index i = 0; i < A.rows(); ++i)
        for (Index j = 0; j < A.cols(); ++j) K.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
    return K;
}

/// y_{1:n} stacked run by run: entry (i m + j) = Y(i, j).
inline VectorXd stack_rows(const MatrixXd& Y) {
    VectorXd y(Y.size());
    for (Index i = 0; i < Y.rows(); ++i) y.segment(i * Y.cols(), Y.cols()) = Y.row(i).transpose();
    return y;
}

inline double logdet(const MatrixXd& A) {
    return std::log(A.determinant());
}

/// Penalized negative log-posterior from the dense (nm) x (nm) covariance R (x) Sigma.
inline double dense_objective(const MatrixXd& R, const MatrixXd& Sigma, const MatrixXd& P, const VectorXd& beta,
                              const MatrixXd& Y, const VectorXd& theta, double lambda_I, double lambda_o) {
    const Index n = R.rows(), m = Sigma.rows();
    const VectorXd mean = kron(MatrixXd::Ones(n, 1), P) * beta;
    const VectorXd r = stack_rows(Y) - mean;
    const MatrixXd C = kron(R, Sigma);
    const MatrixXd W = Sigma.inverse();
    return double(n) * logdet(Sigma) + double(m) * logdet(R) + lambda_I * theta.sum() +
           lambda_o * W.cwiseAbs().sum() + r.dot(C.inverse() * r);
}

/// Conditional normal of y_new given y_{1:n} under the joint (n+1)m Gaussian.
struct DenseConditional {
    VectorXd mean;
    MatrixXd cov;
};

inline DenseConditional dense_predict(const MatrixXd& Rfull, const MatrixXd& Sigma, const MatrixXd& P,
                                      const VectorXd& beta, const MatrixXd& Y) {
    // Rfull is (n+1) x (n+1) with the new point last
    const Index n = Rfull.rows() - 1, m = Sigma.rows();
    const MatrixXd C = kron(Rfull, Sigma);
    const VectorXd mu = kron(MatrixXd::Ones(n + 1, 1), P) * beta;
    const MatrixXd Coo = C.topLeftCorner(n * m, n * m);
    const MatrixXd Cno = C.bottomLeftCorner(m, n * m);
    const MatrixXd Cnn = C.bottomRightCorner(m, m);
    const VectorXd resid = stack_rows(Y) - mu.head(n * m);
    return {mu.tail(m) + Cno * Coo.inverse() * resid, Cnn - Cno * Coo.inverse() * Cno.transpose()};
}

/// Dense GLS beta with X = 1_n (x) P and weight (R (x) Sigma)^{-1}.
inline VectorXd dense_gls(const MatrixXd& R, const MatrixXd& Sigma, const MatrixXd& P, const MatrixXd& Y) {
    const Index n = R.rows();
    const MatrixXd X = kron(MatrixXd::Ones(n, 1), P);
    const MatrixXd Winv = kron(R, Sigma).inverse();
    return (X.transpose() * Winv * X).ldlt().solve(X.transpose() * Winv * stack_rows(Y));
}

inline MatrixXd random_spd(std::mt19937_64& rng, Index m, double ridge = 0.5) {
    MatrixXd A(m, m);
    for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < m; ++j) A(i, j) = uniform(rng, -1.0, 1.0);
    return A * A.transpose() + ridge * MatrixXd::Identity(m, m);
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

inline double rel_err(const VectorXd& a, const VectorXd& b) {
    return (a - b).norm() / std::max(1.0, b.norm());
}

inline double rel_err(const MatrixXd& a, const MatrixXd& b) {
    return (a - b).norm() / std::max(1.0, b.norm());
}

}  // namespace testutil
