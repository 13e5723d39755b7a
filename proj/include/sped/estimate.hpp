#pragma once

// MAP estimation of (beta, theta, theta_d, Sigma) for the co-kriging model.
//
// Objective (penalized negative log-posterior), with E = Y - 1_n (P beta)^T:
//
//   l(beta, theta, Sigma) = n log det Sigma + m log det R_theta
//                         + lambda_I sum_k theta_k + lambda_o ||Sigma^{-1}||_1
//                         + tr(Sigma^{-1} E^T R_theta^{-1} E)
//
// The last term is the Kronecker quadratic form (vec E)^T (R^{-1} (x) Sigma^{-1}) vec E.
// Blockwise coordinate descent cycles Sigma (graphical lasso), beta
// (generalized least squares) and theta (box-constrained L-BFGS).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/LU>

#include "sped/box_lbfgs.hpp"
#include "sped/cokrige.hpp"
#include "sped/error.hpp"
#include "sped/glasso.hpp"
#include "sped/metrics.hpp"
#include "sped/spectral.hpp"

namespace sped {

/// Training runs: designs with their log-stress responses on a shared grid.
struct TrainingData {
    std::vector<StructureDesign> designs;
    StrainGrid grid;
    MatrixXd log_responses;  // n x m

    Index size() const { return Index(designs.size()); }
};

struct ThetaOptConfig {
    int max_iter = 200;
    double grad_tol = 1e-5;
    int memory = 10;
};

struct FitConfig {
    double lambda_I = 0.0;
    double lambda_o = 0.1;
    int max_sweeps = 50;
    double sweep_tol = 1e-6;
    int restarts = 5;
    std::uint64_t seed = 1;
    double glasso_tol = 1e-6;
    int glasso_max_iter = 1000;
    ThetaOptConfig theta_opt;
    double nugget = 1e-8;
    double epsilon_beta = 1e-6;
    KernelFamily family = KernelFamily::sped;

    void validate() const {
        if (!(lambda_I >= 0.0) || !(lambda_o >= 0.0)) throw InvalidInput("penalties must be nonnegative");
        if (!(sweep_tol > 0.0) || !(glasso_tol > 0.0) || !(theta_opt.grad_tol > 0.0))
            throw InvalidInput("tolerances must be positive");
        if (max_sweeps < 1 || restarts < 1) throw InvalidInput("max_sweeps and restarts must be at least 1");
        if (!(nugget >= 0.0)) throw InvalidInput("nugget must be nonnegative");
        if (!(epsilon_beta > 0.0)) throw InvalidInput("epsilon_beta must be positive");
    }
};

/// One BCD run.
struct RunTrace {
    std::vector<double> objectives;  // initial value, then one per full sweep
    int active_frequencies = 0;      // theta_k > 0
    int precision_offdiag_nonzeros = 0;
    bool converged = false;
    bool line_search_warning = false;
    bool failed = false;
    std::string error;
};

struct FitTrace {
    std::uint64_t seed = 0;
    int best_run = -1;
    std::vector<RunTrace> runs;
};

/// Current iterate of the descent. `precision` is primary (it carries the
/// exact zeros of the graphical lasso); `sigma` is its inverse.
struct ModelState {
    VectorXd beta;
    VectorXd theta;
    double theta_d = 0.0;
    MatrixXd precision;
    MatrixXd sigma;
};

/// Everything about the training data that does not change during a fit.
class FitProblem {
public:
    FitProblem(const TrainingData& data, KernelFamily family, double nugget)
        : inputs_(embed_designs(data.designs, family)),
          pd_(pairwise_distances(inputs_)),
          P_(mean_basis(data.grid)),
          Y_(data.log_responses),
          nugget_(nugget) {
        if (Y_.rows() != inputs_.size() || Y_.cols() != P_.rows())
            throw InvalidInput("responses must be n x m for n designs and m strain levels");
        if (!Y_.allFinite()) throw InvalidInput("responses must be finite");

        // Normalization used by the theta optimizer: with phi_k = theta_k * scale_k,
        // phi = 1 puts the average pairwise exponent at one.
        const Index K = inputs_.dims();
        const double npairs = double(std::max<Index>(pd_.pairs(), 1));
        VectorXd mean_dist = pd_.pairs() > 0 ? VectorXd(pd_.coords.colwise().sum().transpose() / npairs) : VectorXd::Zero(K);
        double mean_diam = pd_.pairs() > 0 && pd_.diameter_term ? pd_.diam.sum() / npairs : 0.0;
        int informative = int((mean_dist.array() > 0.0).count()) + (mean_diam > 0.0 ? 1 : 0);
        informative = std::max(informative, 1);
        scale_ = VectorXd::Ones(K);
        for (Index k = 0; k < K; ++k)
            if (mean_dist[k] > 0.0) scale_[k] = informative * mean_dist[k];
        diam_scale_ = mean_diam > 0.0 ? informative * mean_diam : 1.0;
    }

    const KernelInputs& inputs() const { return inputs_; }
    const PairwiseDistances& distances() const { return pd_; }
    const MatrixXd& basis() const { return P_; }
    const MatrixXd& responses() const { return Y_; }
    double nugget() const { return nugget_; }
    Index n() const { return Y_.rows(); }
    Index m() const { return Y_.cols(); }
    Index dims() const { return inputs_.dims(); }
    bool diameter_term() const { return pd_.diameter_term; }
    const VectorXd& theta_scale() const { return scale_; }
    double theta_d_scale() const { return diam_scale_; }

    /// Normalized optimizer variables phi (theta_k * scale_k, then theta_d * scale_d) to (theta, theta_d).
    std::pair<VectorXd, double> unpack_theta(const VectorXd& phi) const {
        const Index K = dims();
        VectorXd theta = phi.head(K).cwiseQuotient(scale_);
        const double td = diameter_term() ? phi[K] / diam_scale_ : 0.0;
        return {theta, td};
    }

    VectorXd pack_theta(const VectorXd& theta, double theta_d) const {
        VectorXd phi(dims() + (diameter_term() ? 1 : 0));
        phi.head(dims()) = theta.cwiseProduct(scale_);
        if (diameter_term()) phi[dims()] = theta_d * diam_scale_;
        return phi;
    }

    MatrixXd correlation(const VectorXd& theta, double theta_d) const {
        return assemble_correlation(pd_, theta, theta_d, nugget_);
    }

    MatrixXd residuals(const VectorXd& beta) const {
        const VectorXd mu = P_ * beta;
        return Y_.rowwise() - mu.transpose();
    }

private:
    KernelInputs inputs_;
    PairwiseDistances pd_;
    MatrixXd P_;
    MatrixXd Y_;
    double nugget_;
    VectorXd scale_;
    double diam_scale_ = 1.0;
};

namespace detail {

inline double log_det_from_llt(const Eigen::LLT<MatrixXd>& llt) {
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

inline void require_state(const FitProblem& prob, const ModelState& s) {
    if (s.beta.size() != prob.basis().cols()) throw InvalidInput("beta length does not match the basis");
    if (s.theta.size() != prob.dims()) throw InvalidInput("theta length does not match the kernel");
    if ((s.theta.array() < 0.0).any() || s.theta_d < 0.0) throw InvalidInput("theta must be nonnegative");
    if (s.precision.rows() != prob.m() || s.precision.cols() != prob.m())
        throw InvalidInput("precision must be m x m");
}

}  // namespace detail

/// Penalized negative log-posterior at a state (precision form).
inline double neg_log_posterior(const FitProblem& prob, const ModelState& s, double lambda_I, double lambda_o) {
    detail::require_state(prob, s);
    const MatrixXd R = prob.correlation(s.theta, s.theta_d);
    const auto cholR = factorize_correlation(R);
    Eigen::LLT<MatrixXd> cholW(s.precision);
    if (cholW.info() != Eigen::Success) throw SingularMatrix("Sigma is not positive definite");
    const MatrixXd E = prob.residuals(s.beta);
    // tr(W E^T R^{-1} E), solved per factor
    const double quad = (s.precision * (E.transpose() * cholR.solve(E))).trace();
    return -double(prob.n()) * detail::log_det_from_llt(cholW) + double(prob.m()) * detail::log_det_from_llt(cholR) +
           lambda_I * s.theta.sum() + lambda_o * s.precision.cwiseAbs().sum() + quad;
}

/// Same objective taking Sigma directly.
inline double neg_log_posterior(const VectorXd& beta, const VectorXd& theta, double theta_d, const MatrixXd& sigma,
                                const TrainingData& data, double lambda_I, double lambda_o, double nugget = 1e-8,
                                KernelFamily family = KernelFamily::sped) {
    FitProblem prob(data, family, nugget);
    Eigen::LLT<MatrixXd> llt(sigma);
    if (llt.info() != Eigen::Success) throw SingularMatrix("Sigma is not positive definite");
    ModelState s{beta, theta, theta_d, llt.solve(MatrixXd::Identity(sigma.rows(), sigma.cols())), sigma};
    return neg_log_posterior(prob, s, lambda_I, lambda_o);
}

/// Sigma update: graphical lasso on S + rho I with rho = lambda_o / n and
/// S = E^T R^{-1} E / n. This is the exact minimizer of the objective over Sigma.
inline GlassoResult sigma_step(const FitProblem& prob, const ModelState& s, double lambda_o,
                               const GlassoOptions& opt = {}) {
    detail::require_state(prob, s);
    const auto cholR = factorize_correlation(prob.correlation(s.theta, s.theta_d));
    const MatrixXd E = prob.residuals(s.beta);
    const double n = double(prob.n());
    const double rho = lambda_o / n;
    MatrixXd W0 = E.transpose() * cholR.solve(E) / n;
    W0 = 0.5 * (W0 + W0.transpose()).eval();
    W0.diagonal().array() += rho;
    std::optional<MatrixXd> warm;
    if (s.precision.size() > 0) warm = s.precision;
    return graphical_lasso(W0, rho, opt, warm);
}

/// GLS update of beta for fixed theta and Sigma, then the monotone-mean
/// constraint beta_2 >= epsilon by fixing beta_2 and re-solving the rest.
inline VectorXd beta_step(const FitProblem& prob, const ModelState& s, double epsilon_beta = 1e-6) {
    detail::require_state(prob, s);
    const auto cholR = factorize_correlation(prob.correlation(s.theta, s.theta_d));
    const MatrixXd& P = prob.basis();
    const VectorXd ones = VectorXd::Ones(prob.n());
    const VectorXd Rinv1 = cholR.solve(ones);
    const double a = ones.dot(Rinv1);
    const VectorXd u = prob.responses().transpose() * Rinv1;  // Y^T R^{-1} 1
    const MatrixXd G = a * (P.transpose() * s.precision * P);
    const VectorXd rhs = P.transpose() * (s.precision * u);

    Eigen::FullPivLU<MatrixXd> lu(G);
    if (lu.rank() < G.rows()) {
        const VectorXd null = lu.kernel().col(0);
        std::vector<long> cols;
        std::string names;
        for (Index k = 0; k < null.size(); ++k)
            if (std::abs(null[k]) > 1e-10 * null.cwiseAbs().maxCoeff()) {
                cols.push_back(long(k));
                names += (names.empty() ? "" : ", ") + std::to_string(k);
            }
        throw SingularMatrix("beta system is singular: basis columns {" + names + "} are collinear",
                             cols.size() > 0 ? cols[0] : -1, cols.size() > 1 ? cols[1] : -1);
    }
    VectorXd beta = lu.solve(rhs);
    if (beta.size() >= 2 && beta[1] < epsilon_beta) {
        const Index q = beta.size();
        std::vector<Index> free;
        for (Index k = 0; k < q; ++k)
            if (k != 1) free.push_back(k);
        MatrixXd Gff(Index(free.size()), Index(free.size()));
        VectorXd rf(Index(free.size()));
        for (Index a1 = 0; a1 < Index(free.size()); ++a1) {
            rf[a1] = rhs[free[a1]] - G(free[a1], 1) * epsilon_beta;
            for (Index b1 = 0; b1 < Index(free.size()); ++b1) Gff(a1, b1) = G(free[a1], free[b1]);
        }
        const VectorXd bf = Gff.ldlt().solve(rf);
        for (Index a1 = 0; a1 < Index(free.size()); ++a1) beta[free[a1]] = bf[a1];
        beta[1] = epsilon_beta;
    }
    return beta;
}

/// Theta block of the objective, m log det R + tr(R^{-1} M) + lambda_I sum theta,
/// with M = E W E^T fixed. Gradient uses dR_ij/dtheta_k = -w_k (z_ik - z_jk)^2 R_ij.
class ThetaObjective {
public:
    ThetaObjective(const FitProblem& prob, const ModelState& s, double lambda_I)
        : prob_(prob), lambda_I_(lambda_I) {
        const MatrixXd E = prob.residuals(s.beta);
        M_ = E * s.precision * E.transpose();
        M_ = 0.5 * (M_ + M_.transpose()).eval();
    }

    Index num_vars() const { return prob_.dims() + (prob_.diameter_term() ? 1 : 0); }

    /// Value and gradient in raw (theta, theta_d) coordinates. Returns +inf if R is not factorizable.
    double evaluate(const VectorXd& theta, double theta_d, VectorXd* grad_theta, double* grad_theta_d) const {
        const MatrixXd R = prob_.correlation(theta, theta_d);
        Eigen::LLT<MatrixXd> llt(R);
        if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
        const Index n = prob_.n();
        const MatrixXd A = llt.solve(MatrixXd::Identity(n, n));
        const MatrixXd AM = A * M_;
        const double value =
            double(prob_.m()) * detail::log_det_from_llt(llt) + AM.trace() + lambda_I_ * theta.sum();
        if (!std::isfinite(value)) return std::numeric_limits<double>::infinity();
        if (grad_theta || grad_theta_d) {
            // df/dR = m A - A M A
            const MatrixXd G = double(prob_.m()) * A - AM * A;
            const auto& pd = prob_.distances();
            VectorXd gr(pd.pairs());
            Index row = 0;
            for (Index i = 0; i < n; ++i)
                for (Index j = i + 1; j < n; ++j, ++row) gr[row] = (G(i, j) + G(j, i)) * R(i, j);
            if (grad_theta) *grad_theta = -(pd.coords.transpose() * gr) + VectorXd::Constant(theta.size(), lambda_I_);
            if (grad_theta_d) *grad_theta_d = pd.diameter_term ? -pd.diam.dot(gr) : 0.0;
        }
        return value;
    }

    std::pair<VectorXd, double> unpack(const VectorXd& phi) const { return prob_.unpack_theta(phi); }
    VectorXd pack(const VectorXd& theta, double theta_d) const { return prob_.pack_theta(theta, theta_d); }

    double operator()(const VectorXd& phi, VectorXd& grad) const {
        const auto [theta, td] = unpack(phi);
        VectorXd gt;
        double gd = 0.0;
        const double f = evaluate(theta, td, &gt, &gd);
        grad.resize(phi.size());
        if (!std::isfinite(f)) {
            grad.setZero();
            return f;
        }
        grad.head(prob_.dims()) = gt.cwiseQuotient(prob_.theta_scale());
        if (prob_.diameter_term()) grad[prob_.dims()] = gd / prob_.theta_d_scale();
        return f;
    }

private:
    const FitProblem& prob_;
    double lambda_I_;
    MatrixXd M_;
};

struct ThetaStepResult {
    VectorXd theta;
    double theta_d = 0.0;
    bool line_search_failed = false;
    int iterations = 0;
};

/// Theta update: minimize over theta >= 0, theta_d >= 0 with beta and Sigma fixed.
/// theta_d is unpenalized.
inline ThetaStepResult theta_step(const FitProblem& prob, const ModelState& s, double lambda_I,
                                  const ThetaOptConfig& cfg = {}) {
    detail::require_state(prob, s);
    ThetaObjective obj(prob, s, lambda_I);
    const VectorXd x0 = obj.pack(s.theta, s.theta_d);
    const VectorXd lo = VectorXd::Zero(x0.size());
    const VectorXd hi = VectorXd::Constant(x0.size(), std::numeric_limits<double>::infinity());
    BoxLbfgsOptions opt;
    opt.max_iter = cfg.max_iter;
    opt.grad_tol = cfg.grad_tol;
    opt.memory = cfg.memory;
    const auto res = minimize_box(obj, x0, lo, hi, opt);
    auto [theta, td] = obj.unpack(res.x);
    // exact zeros from the projection survive the unscaling; keep them exact
    for (Index k = 0; k < theta.size(); ++k)
        if (res.x[k] == 0.0) theta[k] = 0.0;
    return {theta, td, res.line_search_failed, res.iterations};
}

namespace detail {

inline double exp1_draw(std::mt19937_64& rng) {
    // 53-bit uniform in [0, 1), then inverse CDF; independent of the library's distributions
    const double u = double(rng() >> 11) * 0x1.0p-53;
    return -std::log1p(-u);
}

inline VectorXd initial_phi(Index nvars, int restart, std::uint64_t seed) {
    if (restart == 0) return VectorXd::Ones(nvars);
    std::seed_seq seq{std::uint32_t(seed & 0xffffffffu), std::uint32_t(seed >> 32), std::uint32_t(restart)};
    std::mt19937_64 rng(seq);
    VectorXd phi(nvars);
    for (Index k = 0; k < nvars; ++k) phi[k] = exp1_draw(rng);
    return phi;
}

inline int count_offdiag_nonzeros(const MatrixXd& W) {
    int c = 0;
    for (Index i = 0; i < W.rows(); ++i)
        for (Index j = 0; j < W.cols(); ++j)
            if (i != j && W(i, j) != 0.0) ++c;
    return c;
}

struct RunOutcome {
    ModelState state;
    double objective = std::numeric_limits<double>::infinity();
    int sweeps = 0;
};

inline RunOutcome run_bcd(const FitProblem& prob, const FitConfig& cfg, const VectorXd& phi0, RunTrace& trace) {
    const auto [theta0, td0] = prob.unpack_theta(phi0);
    RunOutcome out;
    ModelState& s = out.state;
    s.beta = VectorXd::Zero(prob.basis().cols());
    s.theta = theta0;
    s.theta_d = td0;
    s.precision = MatrixXd::Identity(prob.m(), prob.m());
    s.sigma = MatrixXd::Identity(prob.m(), prob.m());

    GlassoOptions gopt;
    gopt.tol = cfg.glasso_tol;
    gopt.max_iter = cfg.glasso_max_iter;

    double current = neg_log_posterior(prob, s, cfg.lambda_I, cfg.lambda_o);
    trace.objectives.push_back(current);
    for (int sweep = 1; sweep <= cfg.max_sweeps; ++sweep) {
        const double previous = current;

        // Sigma; kept only if it does not increase the objective (the glasso solution is
        // exact up to its KKT tolerance)
        {
            const auto g = sigma_step(prob, s, cfg.lambda_o, gopt);
            ModelState cand = s;
            cand.precision = g.precision;
            cand.sigma = g.covariance;
            const double f = neg_log_posterior(prob, cand, cfg.lambda_I, cfg.lambda_o);
            if (f <= current) {
                s = std::move(cand);
                current = f;
            }
        }
        // beta (exact minimizer over the feasible set)
        {
            ModelState cand = s;
            cand.beta = beta_step(prob, s, cfg.epsilon_beta);
            const double f = neg_log_posterior(prob, cand, cfg.lambda_I, cfg.lambda_o);
            if (f <= current || sweep == 1) {
                s = std::move(cand);
                current = f;
            }
        }
        // theta (descent by construction of the line search)
        {
            const auto t = theta_step(prob, s, cfg.lambda_I, cfg.theta_opt);
            trace.line_search_warning = trace.line_search_warning || t.line_search_failed;
            ModelState cand = s;
            cand.theta = t.theta;
            cand.theta_d = t.theta_d;
            const double f = neg_log_posterior(prob, cand, cfg.lambda_I, cfg.lambda_o);
            if (f <= current) {
                s = std::move(cand);
                current = f;
            }
        }
        trace.objectives.push_back(current);
        out.sweeps = sweep;
        if ((previous - current) / std::max(1.0, std::abs(previous)) < cfg.sweep_tol) {
            trace.converged = true;
            break;
        }
    }
    out.objective = current;
    trace.active_frequencies = int((s.theta.array() > 0.0).count());
    trace.precision_offdiag_nonzeros = count_offdiag_nonzeros(s.precision);
    return out;
}

inline void validate_training(const TrainingData& data) {
    if (data.size() < 2) throw InvalidInput("fitting needs at least two designs");
    data.grid.validate();
    if (data.log_responses.rows() != data.size() || data.log_responses.cols() != data.grid.size())
        throw InvalidInput("responses must be n x m");
    if (!data.log_responses.allFinite()) throw InvalidInput("responses must be finite");
}

}  // namespace detail

struct FitResult {
    TrainedEmulator model;
    FitTrace trace;
    ModelState state;
};

/// Multi-start blockwise coordinate descent; returns the run with the lowest final objective
/// (lowest restart index on ties).
inline FitResult fit(const TrainingData& data, const FitConfig& cfg) {
    cfg.validate();
    detail::validate_training(data);
    const FitProblem prob(data, cfg.family, cfg.nugget);
    const Index nvars = prob.dims() + (prob.diameter_term() ? 1 : 0);

    FitTrace trace;
    trace.seed = cfg.seed;
    std::optional<detail::RunOutcome> best;
    for (int r = 0; r < cfg.restarts; ++r) {
        RunTrace rt;
        try {
            auto outcome = detail::run_bcd(prob, cfg, detail::initial_phi(nvars, r, cfg.seed), rt);
            if (!best || outcome.objective < best->objective) {
                best = std::move(outcome);
                trace.best_run = r;
            }
        } catch (const Error& e) {
            rt.failed = true;
            rt.error = e.what();
        }
        trace.runs.push_back(std::move(rt));
    }
    if (!best) {
        std::string msg = "all restarts failed:";
        for (const auto& rt : trace.runs) msg += " [" + rt.error + "]";
        throw FitError(msg);
    }

    const ModelState& s = best->state;
    KernelParams params{s.theta, s.theta_d, cfg.nugget, cfg.family};
    FitMetadata meta{cfg.lambda_I, cfg.lambda_o, best->objective, best->sweeps};
    TrainedEmulator model(data.designs, data.grid, data.log_responses, params, s.beta, s.sigma, meta);
    return FitResult{std::move(model), std::move(trace), s};
}

enum class CvScore { mare, log_likelihood };

struct PenaltySelection {
    double lambda_I = 0.0;
    double lambda_o = 0.0;
    double score = 0.0;
    std::vector<std::pair<std::pair<double, double>, double>> table;  // ((lambda_I, lambda_o), score)
};

namespace detail {

inline std::vector<double> dedupe(const std::vector<double>& v) {
    std::set<double> s(v.begin(), v.end());
    return {s.begin(), s.end()};
}

/// Fold labels 0..k-1, balanced, shuffled with the seed.
inline std::vector<int> fold_labels(Index n, int k, std::uint64_t seed) {
    std::vector<Index> order(std::size_t(n), 0);
    for (Index i = 0; i < n; ++i) order[std::size_t(i)] = i;
    std::mt19937_64 rng(seed ^ 0x5bd1e995ull);
    for (Index i = n - 1; i > 0; --i) {
        const Index j = Index(rng() % std::uint64_t(i + 1));
        std::swap(order[std::size_t(i)], order[std::size_t(j)]);
    }
    std::vector<int> label(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) label[std::size_t(order[std::size_t(i)])] = int(i % k);
    return label;
}

inline TrainingData subset(const TrainingData& data, const std::vector<Index>& rows) {
    TrainingData out;
    out.grid = data.grid;
    out.log_responses.resize(Index(rows.size()), data.log_responses.cols());
    for (Index i = 0; i < Index(rows.size()); ++i) {
        out.designs.push_back(data.designs[std::size_t(rows[std::size_t(i)])]);
        out.log_responses.row(i) = data.log_responses.row(rows[std::size_t(i)]);
    }
    return out;
}

/// Held-out loss of one prediction: back-transformed MARE, or the negative
/// Gaussian log density of the log-space response.
inline double holdout_loss(const Prediction& pred, const VectorXd& truth_log, CvScore score) {
    if (score == CvScore::mare) {
        return mare(back_transform(ResponseCurve{truth_log, true}), back_transform(pred.mean));
    }
    const Index m = truth_log.size();
    const MatrixXd C = pred.covariance() + 1e-12 * MatrixXd::Identity(m, m);
    Eigen::LLT<MatrixXd> llt(C);
    if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
    const VectorXd r = truth_log - pred.mean.values;
    return 0.5 * (r.dot(llt.solve(r)) + log_det_from_llt(llt) + double(m) * std::log(2.0 * std::numbers::pi));
}

}  // namespace detail

/// k-fold cross-validation over the penalty grid. Lowest mean held-out loss wins;
/// ties go to the larger lambda_I, then the larger lambda_o.
inline PenaltySelection select_penalties(const TrainingData& data, const std::vector<double>& lambda_I_grid,
                                         const std::vector<double>& lambda_o_grid, int k, const FitConfig& base,
                                         CvScore score = CvScore::mare) {
    detail::validate_training(data);
    if (k < 2) throw InvalidInput("cross-validation needs k >= 2 folds");
    if (data.size() < 2 * k) throw InvalidInput("cross-validation needs n >= 2k runs");
    const auto gi = detail::dedupe(lambda_I_grid);
    const auto go = detail::dedupe(lambda_o_grid);
    if (gi.empty() || go.empty()) throw InvalidInput("penalty grids must be non-empty");
    if (gi.front() < 0.0 || go.front() < 0.0) throw InvalidInput("penalties must be nonnegative");

    const auto labels = detail::fold_labels(data.size(), k, base.seed);
    std::vector<TrainingData> train(static_cast<std::size_t>(k)), test(static_cast<std::size_t>(k));
    for (int f = 0; f < k; ++f) {
        std::vector<Index> tr, te;
        for (Index i = 0; i < data.size(); ++i) (labels[std::size_t(i)] == f ? te : tr).push_back(i);
        if (te.empty() || tr.size() < 2) throw InvalidInput("degenerate cross-validation fold");
        train[std::size_t(f)] = detail::subset(data, tr);
        test[std::size_t(f)] = detail::subset(data, te);
    }

    PenaltySelection sel;
    bool found = false;
    for (double li : gi) {
        for (double lo : go) {
            FitConfig cfg = base;
            cfg.lambda_I = li;
            cfg.lambda_o = lo;
            double total = 0.0;
            Index count = 0;
            try {
                for (int f = 0; f < k; ++f) {
                    const auto fitted = fit(train[std::size_t(f)], cfg);
                    const auto& td = test[std::size_t(f)];
                    for (Index i = 0; i < td.size(); ++i) {
                        const auto pred = predict(fitted.model, td.designs[std::size_t(i)]);
                        total += detail::holdout_loss(pred, td.log_responses.row(i).transpose(), score);
                        ++count;
                    }
                }
            } catch (const Error&) {
                total = std::numeric_limits<double>::infinity();
            }
            const double mean = count > 0 ? total / double(count) : std::numeric_limits<double>::infinity();
            sel.table.push_back({{li, lo}, mean});
            if (!std::isfinite(mean)) continue;
            const bool better = !found || mean < sel.score - 1e-12 * std::abs(sel.score) ||
                                (std::abs(mean - sel.score) <= 1e-12 * std::abs(sel.score) &&
                                 (li > sel.lambda_I || (li == sel.lambda_I && lo > sel.lambda_o)));
            if (better) {
                sel.lambda_I = li;
                sel.lambda_o = lo;
                sel.score = mean;
                found = true;
            }
        }
    }
    if (!found) throw FitError("cross-validation failed for every penalty pair");
    return sel;
}

}  // namespace sped
