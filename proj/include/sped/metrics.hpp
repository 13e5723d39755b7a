#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include <Eigen/Core>

#include "sped/cokrige.hpp"
#include "sped/error.hpp"

namespace sped {

/// Mean absolute relative error on a uniform strain grid (the spacing cancels):
/// sum |O - O_hat| / sum |O|. Both curves in stress space.
inline double mare(const ResponseCurve& truth, const ResponseCurve& pred) {
    if (truth.in_log_space || pred.in_log_space) throw InvalidInput("MARE is defined on stress-space curves");
    if (truth.size() != pred.size()) throw InvalidInput("MARE: curves have different lengths");
    const double denom = truth.values.cwiseAbs().sum();
    if (!(denom > 0.0)) throw InvalidInput("MARE: truth curve is identically zero");
    return (truth.values - pred.values).cwiseAbs().sum() / denom;
}

enum class StrainResponse { stiffening, softening };

inline std::string_view to_string(StrainResponse r) {
    return r == StrainResponse::stiffening ? "stiffening" : "softening";
}

struct CurveCharacteristics {
    double E1 = 0.0;
    double E9 = 0.0;
    double kappa = 0.0;
    StrainResponse label = StrainResponse::softening;
};

namespace detail {

/// dO/ds at grid index j by central differences: five points when the local
/// spacing is uniform, else the nonuniform three-point formula.
inline double central_slope(const VectorXd& s, const VectorXd& f, Index j) {
    const Index m = s.size();
    if (j >= 2 && j + 2 < m) {
        const double h = s[j + 1] - s[j];
        bool uniform = true;
        for (Index k = j - 2; k < j + 2; ++k)
            if (std::abs((s[k + 1] - s[k]) - h) > 1e-9 * h) uniform = false;
        if (uniform) return (-f[j + 2] + 8.0 * f[j + 1] - 8.0 * f[j - 1] + f[j - 2]) / (12.0 * h);
    }
    const double hm = s[j] - s[j - 1];
    const double hp = s[j + 1] - s[j];
    return (hm * hm * f[j + 1] - hp * hp * f[j - 1] + (hp * hp - hm * hm) * f[j]) / (hm * hp * (hm + hp));
}

inline Index nearest_interior_level(const VectorXd& s, double target, double max_offset) {
    Index best = 0;
    for (Index j = 1; j < s.size(); ++j)
        if (std::abs(s[j] - target) < std::abs(s[best] - target)) best = j;
    if (std::abs(s[best] - target) > max_offset || best == 0 || best + 1 >= s.size())
        throw InvalidInput("strain grid too coarse near " + std::to_string(100.0 * target) + "%");
    return best;
}

}  // namespace detail

/// Elastic moduli at 1% and 9% strain, curvature (E9 - E1) / 8%, and the
/// stiffening/softening label from the sign of the curvature.
inline CurveCharacteristics moduli_and_kappa(const ResponseCurve& curve, const StrainGrid& grid) {
    grid.validate();
    if (curve.in_log_space) throw InvalidInput("moduli are computed on stress-space curves");
    if (curve.size() != grid.size()) throw InvalidInput("curve and grid lengths differ");
    constexpr double max_offset = 0.005;
    const Index j1 = detail::nearest_interior_level(grid.levels, 0.01, max_offset);
    const Index j9 = detail::nearest_interior_level(grid.levels, 0.09, max_offset);
    CurveCharacteristics c;
    c.E1 = detail::central_slope(grid.levels, curve.values, j1);
    c.E9 = detail::central_slope(grid.levels, curve.values, j9);
    c.kappa = (c.E9 - c.E1) / (0.09 - 0.01);
    c.label = c.kappa > 0.0 ? StrainResponse::stiffening : StrainResponse::softening;
    return c;
}

}  // namespace sped
