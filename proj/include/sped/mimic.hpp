#pragma once

// Inverse design against a fitted SpeD emulator: choose a fiber diameter and
// the moduli of the active (theta_k > 0) frequencies so that the predictive
// distribution is close to a target curve in expected squared error,
//
//     J(d, c) = ||y_hat(d, c) - y*||^2 + v(d, c) tr(Sigma),
//
// with inert frequencies pinned to zero. Phases are not searched: the kernel
// only sees moduli, and the structure is reconstructed with zero phases.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "sped/box_lbfgs.hpp"
#include "sped/cokrige.hpp"
#include "sped/error.hpp"
#include "sped/spectral.hpp"

namespace sped {

struct MimicBounds {
    double diameter_lo = 0.2;
    double diameter_hi = 2.0;
    /// Multiplier on the largest training modulus per coordinate for the upper bound.
    double modulus_headroom = 1.5;
};

struct MimicProblem {
    const TrainedEmulator* model = nullptr;
    VectorXd target_log;          // m, log-stress
    double diameter_lo = 0.2;
    double diameter_hi = 2.0;
    std::vector<Index> active;    // frequency indices with theta_k > 0
    VectorXd modulus_lo;          // |active|
    VectorXd modulus_hi;          // |active|

    Index dims() const { return 1 + Index(active.size()); }
};

/// Builds the problem from a stress-space (or log-space) target; the mismatch is
/// always measured in log-stress.
inline MimicProblem make_mimic_problem(const TrainedEmulator& model, const ResponseCurve& target,
                                       const MimicBounds& bounds = {}) {
    if (model.params().family != KernelFamily::sped)
        throw InvalidInput("inverse design needs a model with the spectral-distance kernel");
    if (target.size() != model.num_levels()) throw InvalidInput("target length does not match the strain grid");
    if (!(bounds.diameter_lo <= bounds.diameter_hi)) throw InvalidInput("diameter bounds are inverted");
    MimicProblem prob;
    prob.model = &model;
    prob.target_log = target.in_log_space ? target.values : log_transform(target).values;
    prob.diameter_lo = bounds.diameter_lo;
    prob.diameter_hi = bounds.diameter_hi;
    const auto& theta = model.params().theta;
    for (Index k = 0; k < theta.size(); ++k)
        if (theta[k] > 0.0) prob.active.push_back(k);
    if (prob.active.empty()) throw InvalidInput("no active frequencies: every theta_k is zero");
    const auto& Z = model.inputs().features;
    prob.modulus_lo = VectorXd::Zero(Index(prob.active.size()));
    prob.modulus_hi.resize(Index(prob.active.size()));
    for (Index a = 0; a < Index(prob.active.size()); ++a)
        prob.modulus_hi[a] = bounds.modulus_headroom * Z.col(prob.active[std::size_t(a)]).maxCoeff();
    return prob;
}

namespace detail {

inline VectorXd full_spectrum(const MimicProblem& prob, const VectorXd& active_moduli) {
    VectorXd z = VectorXd::Zero(prob.model->inputs().dims());
    for (Index a = 0; a < Index(prob.active.size()); ++a) z[prob.active[std::size_t(a)]] = active_moduli[a];
    return z;
}

inline void check_mimic_bounds(const MimicProblem& prob, double d, const VectorXd& c) {
    constexpr double slack = 1e-12;
    if (c.size() != Index(prob.active.size())) throw InvalidInput("spectrum has the wrong number of active coordinates");
    if (!std::isfinite(d) || d < prob.diameter_lo - slack || d > prob.diameter_hi + slack)
        throw InvalidInput("diameter outside its bounds");
    for (Index a = 0; a < c.size(); ++a)
        if (!std::isfinite(c[a]) || c[a] < prob.modulus_lo[a] - slack || c[a] > prob.modulus_hi[a] + slack)
            throw InvalidInput("modulus outside its bounds");
}

/// Objective and gradient in (d, active moduli).
inline double mimic_value(const MimicProblem& prob, double d, const VectorXd& c, VectorXd* grad) {
    const auto& model = *prob.model;
    const auto& in = model.inputs();
    const auto& params = model.params();
    const VectorXd z = full_spectrum(prob, c);
    const VectorXd r = cross_correlation(z, d, in, params);
    const Prediction pred = model.predict_from_cross(r);
    const VectorXd resid = pred.mean.values - prob.target_log;
    const double tr_sigma = model.sigma().trace();
    const double value = resid.squaredNorm() + pred.scale * tr_sigma;
    if (grad) {
        // dJ/dr = 2 R^{-1} E (y_hat - y*) - 2 tr(Sigma) R^{-1} r
        const VectorXd dJdr = 2.0 * (model.weighted_residuals() * resid) - 2.0 * tr_sigma * model.chol_r().solve(r);
        grad->resize(prob.dims());
        double gd = 0.0;
        for (Index i = 0; i < in.size(); ++i) gd += dJdr[i] * (-2.0 * params.theta_d * (d - in.diameters[i]) * r[i]);
        (*grad)[0] = gd;
        for (Index a = 0; a < Index(prob.active.size()); ++a) {
            const Index k = prob.active[std::size_t(a)];
            double g = 0.0;
            for (Index i = 0; i < in.size(); ++i)
                g += dJdr[i] * (-2.0 * params.theta[k] * in.weights[k] * (z[k] - in.features(i, k)) * r[i]);
            (*grad)[a + 1] = g;
        }
    }
    return value;
}

}  // namespace detail

/// Expected squared log-space mismatch ||y_hat - y*||^2 + v tr(Sigma).
inline double mse_objective(const MimicProblem& prob, double diameter, const VectorXd& active_moduli) {
    detail::check_mimic_bounds(prob, diameter, active_moduli);
    return detail::mimic_value(prob, diameter, active_moduli, nullptr);
}

/// Zero-phase real structure with the given half-spectrum moduli.
inline StructureCurve reconstruct_structure(const VectorXd& spectrum, Index p,
                                            double length_mm = kDefaultStructureLength) {
    if ((spectrum.array() < 0.0).any()) throw InvalidInput("moduli must be nonnegative");
    return inverse_dft_zero_phase(spectrum, p, length_mm);
}

struct MimicStart {
    VectorXd initial;  // (d, active moduli)
    double initial_objective = 0.0;
    double final_objective = 0.0;
    bool line_search_failed = false;
};

struct MimicResult {
    double diameter = 0.0;
    VectorXd spectrum;               // full half-spectrum, zero off the active set
    StructureCurve reconstructed;
    double objective = 0.0;
    Prediction predicted;
    std::vector<Index> active;
    std::vector<MimicStart> trace;
};

struct MimicOptions {
    int starts = 32;
    std::uint64_t seed = 1;
    /// Also start from the training design with the lowest objective.
    bool include_best_training_start = true;
    BoxLbfgsOptions lbfgs{.max_iter = 300, .grad_tol = 1e-10, .rel_f_tol = 1e-14};
};

/// Latin hypercube in the unit cube: one point per stratum in every coordinate.
inline std::vector<VectorXd> latin_hypercube_unit(Index n, Index dims, std::mt19937_64& rng) {
    std::vector<VectorXd> pts(static_cast<std::size_t>(n), VectorXd(dims));
    std::vector<Index> perm(static_cast<std::size_t>(n));
    for (Index j = 0; j < dims; ++j) {
        std::iota(perm.begin(), perm.end(), Index(0));
        for (Index i = n - 1; i > 0; --i) std::swap(perm[std::size_t(i)], perm[std::size_t(rng() % std::uint64_t(i + 1))]);
        for (Index i = 0; i < n; ++i) {
            const double u = double(rng() >> 11) * 0x1.0p-53;
            pts[std::size_t(i)][j] = (double(perm[std::size_t(i)]) + u) / double(n);
        }
    }
    return pts;
}

/// Multi-start box-constrained quasi-Newton over (d, active moduli).
inline MimicResult optimize(const MimicProblem& prob, const MimicOptions& opt = {}) {
    if (!prob.model) throw InvalidInput("mimic problem has no model");
    if (opt.starts < 1 && !opt.include_best_training_start) throw InvalidInput("at least one start is required");
    const Index D = prob.dims();

    VectorXd lo(D), hi(D);
    lo[0] = prob.diameter_lo;
    hi[0] = prob.diameter_hi;
    lo.tail(D - 1) = prob.modulus_lo;
    hi.tail(D - 1) = prob.modulus_hi;
    const VectorXd width = hi - lo;

    // optimize in unit-box coordinates u: x = lo + u * width
    auto to_x = [&](const VectorXd& u) { return VectorXd(lo + u.cwiseProduct(width)); };
    auto objective = [&](const VectorXd& u, VectorXd& g) {
        const VectorXd x = to_x(u);
        VectorXd gx;
        const double f = detail::mimic_value(prob, x[0], x.tail(D - 1), &gx);
        g = gx.cwiseProduct(width);
        return f;
    };

    std::vector<VectorXd> starts;
    std::mt19937_64 rng(opt.seed);
    for (auto& u : latin_hypercube_unit(opt.starts, D, rng)) starts.push_back(u);
    if (opt.include_best_training_start) {
        const auto& in = prob.model->inputs();
        double best = std::numeric_limits<double>::infinity();
        VectorXd best_u;
        for (Index i = 0; i < in.size(); ++i) {
            VectorXd x(D);
            x[0] = in.diameters[i];
            for (Index a = 0; a < D - 1; ++a) x[a + 1] = in.features(i, prob.active[std::size_t(a)]);
            x = project_box(x, lo, hi);
            VectorXd u = VectorXd::Zero(D);
            for (Index j = 0; j < D; ++j) u[j] = width[j] > 0.0 ? (x[j] - lo[j]) / width[j] : 0.0;
            const double f = detail::mimic_value(prob, to_x(u)[0], to_x(u).tail(D - 1), nullptr);
            if (f < best) {
                best = f;
                best_u = u;
            }
        }
        starts.push_back(best_u);
    }

    MimicResult out;
    out.active = prob.active;
    double best = std::numeric_limits<double>::infinity();
    VectorXd best_x;
    const VectorXd ulo = VectorXd::Zero(D), uhi = VectorXd::Ones(D);
    for (const auto& u0 : starts) {
        MimicStart st;
        st.initial = to_x(u0);
        VectorXd g;
        st.initial_objective = objective(u0, g);
        const auto res = minimize_box(objective, u0, ulo, uhi, opt.lbfgs);
        st.final_objective = res.f;
        st.line_search_failed = res.line_search_failed;
        if (res.f < best) {
            best = res.f;
            best_x = to_x(res.x);
        }
        out.trace.push_back(std::move(st));
    }
    if (!std::isfinite(best)) throw FitError("every mimic start failed");

    best_x = project_box(best_x, lo, hi);
    out.diameter = best_x[0];
    out.spectrum = detail::full_spectrum(prob, best_x.tail(D - 1));
    out.reconstructed = reconstruct_structure(out.spectrum, prob.model->inputs().curve_points,
                                              prob.model->designs().front().curve.length_mm);
    out.objective = detail::mimic_value(prob, out.diameter, best_x.tail(D - 1), nullptr);
    out.predicted = prob.model->predict_embedded(out.spectrum, out.diameter);
    return out;
}

}  // namespace sped
