#pragma once

// Projected limited-memory BFGS for box constraints lo <= x <= hi.
//
// Each iteration builds the two-loop L-BFGS direction on the free variables
// (those not held at a bound by the sign of their gradient), then backtracks
// along the projected path P(x + a d) until the Armijo condition holds.
// Projection puts variables exactly on their bound, so an optimum with a
// zero lower bound returns exact zeros.

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <utility>

#include <Eigen/Core>

#include "sped/error.hpp"

namespace sped {

struct BoxLbfgsOptions {
    int max_iter = 200;
    double grad_tol = 1e-6;      // infinity norm of the projected gradient
    double rel_f_tol = 1e-12;    // stop when a step decreases f by less than this (relative)
    int memory = 10;
    int max_backtracks = 40;
    double armijo = 1e-4;
};

struct BoxLbfgsResult {
    Eigen::VectorXd x;
    double f = 0.0;
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
    bool line_search_failed = false;
};

inline Eigen::VectorXd project_box(const Eigen::VectorXd& x, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
    return x.cwiseMax(lo).cwiseMin(hi);
}

inline Eigen::VectorXd projected_gradient(const Eigen::VectorXd& x, const Eigen::VectorXd& g, const Eigen::VectorXd& lo,
                                          const Eigen::VectorXd& hi) {
    Eigen::VectorXd pg = g;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        if ((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0)) pg[i] = 0.0;
    }
    return pg;
}

/// Minimize f over the box. `fg(x, grad)` returns f(x) and writes the gradient;
/// it may return +inf (or NaN) to reject a trial point.
template <class Objective>
BoxLbfgsResult minimize_box(Objective&& fg, const Eigen::VectorXd& x0, const Eigen::VectorXd& lo,
                            const Eigen::VectorXd& hi, const BoxLbfgsOptions& opt = {}) {
    using Eigen::VectorXd;
    const auto n = x0.size();
    if (lo.size() != n || hi.size() != n) throw InvalidInput("bound dimensions do not match x0");
    if ((lo.array() > hi.array()).any()) throw InvalidInput("lower bound exceeds upper bound");

    BoxLbfgsResult res;
    res.x = project_box(x0, lo, hi);
    VectorXd g(n);
    res.f = fg(res.x, g);
    res.evaluations = 1;
    if (!std::isfinite(res.f)) throw InvalidInput("objective is not finite at the starting point");

    std::deque<std::pair<VectorXd, VectorXd>> pairs;  // (s, y)
    VectorXd xn(n), gn(n);

    for (res.iterations = 0; res.iterations < opt.max_iter; ++res.iterations) {
        const VectorXd pg = projected_gradient(res.x, g, lo, hi);
        if (pg.lpNorm<Eigen::Infinity>() <= opt.grad_tol) {
            res.converged = true;
            break;
        }
        const Eigen::ArrayXd free_mask = (pg.array() != 0.0).cast<double>();

        bool accepted = false;
        for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
            VectorXd d;
            if (pairs.empty()) {
                d = -pg;
            } else {
                // two-loop recursion on the free subspace
                VectorXd q = (g.array() * free_mask).matrix();
                std::vector<double> alpha(pairs.size());
                for (std::size_t k = pairs.size(); k-- > 0;) {
                    const auto& [s, y] = pairs[k];
                    const double rho = 1.0 / (y.dot(s));
                    alpha[k] = rho * s.dot(q);
                    q -= alpha[k] * y;
                }
                const auto& [sl, yl] = pairs.back();
                q *= sl.dot(yl) / yl.dot(yl);
                for (std::size_t k = 0; k < pairs.size(); ++k) {
                    const auto& [s, y] = pairs[k];
                    const double rho = 1.0 / (y.dot(s));
                    const double beta = rho * y.dot(q);
                    q += (alpha[k] - beta) * s;
                }
                d = -(q.array() * free_mask).matrix();
                if (d.dot(pg) >= 0.0) d = -pg;
            }

            double step = 1.0;
            if (pairs.empty()) step = std::min(1.0, 1.0 / pg.lpNorm<Eigen::Infinity>());
            for (int bt = 0; bt < opt.max_backtracks; ++bt, step *= 0.5) {
                xn = project_box(res.x + step * d, lo, hi);
                const VectorXd dx = xn - res.x;
                if (dx.lpNorm<Eigen::Infinity>() == 0.0) break;
                const double fn = fg(xn, gn);
                ++res.evaluations;
                if (std::isfinite(fn) && fn <= res.f + opt.armijo * g.dot(dx)) {
                    accepted = true;
                    const VectorXd s = dx;
                    const VectorXd y = gn - g;
                    if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
                        pairs.emplace_back(s, y);
                        if (int(pairs.size()) > opt.memory) pairs.pop_front();
                    }
                    const double decrease = res.f - fn;
                    res.x = xn;
                    res.f = fn;
                    g = gn;
                    if (decrease <= opt.rel_f_tol * std::max(1.0, std::abs(fn))) {
                        res.converged = true;
                        ++res.iterations;
                        return res;
                    }
                    break;
                }
            }
            if (!accepted) pairs.clear();  // retry once along the projected gradient
        }
        if (!accepted) {
            res.line_search_failed = true;
            break;
        }
    }
    return res;
}

}  // namespace sped
