#pragma once

// Fourier-modulus features and the correlation functions built on them.
//
// Every kernel family here has the same separable Gaussian form
//
//     rho(a, b) = exp(-sum_k theta_k * w_k * (z_a[k] - z_b[k])^2 - theta_d * (d_a - d_b)^2)
//
// and differs only in the embedding z of a design and the per-coordinate
// measure w:
//
//   sped           z = DFT modulus half-spectrum,  w = 1,   diameter factor on
//   feature_based  z = [d, A, omega, phi],         w = 1,   diameter already in z
//   l2_distance    z = raw structure curve,        w = dt,  diameter factor on

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "sped/error.hpp"

namespace sped {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double kDefaultStructureLength = 20.0;  // mm
inline constexpr Index kDefaultStructurePoints = 81;

/// Discretized fiber structure (height in mm) on t_k = k * length / (p - 1).
struct StructureCurve {
    VectorXd values;
    double length_mm = kDefaultStructureLength;

    Index size() const { return values.size(); }
    double spacing() const { return values.size() > 1 ? length_mm / double(values.size() - 1) : 0.0; }
};

/// Sinusoid parameters of a generated structure: I(t) = A sin(2 pi omega t + phi).
struct SinusoidSpec {
    double d = 1.0;      // mm
    double A = 0.0;      // mm
    double omega = 0.0;  // 1/mm
    double phi = 0.0;    // rad
};

/// A functional input: fiber diameter plus structure curve. Designs produced by
/// the sinusoid generator keep their parameters, which the feature-based
/// baseline kernel consumes.
struct StructureDesign {
    double diameter = 1.0;
    StructureCurve curve;
    std::optional<SinusoidSpec> sinusoid;
};

/// |DFT| over the half-spectrum k = 0 .. (p - 1) / 2.
struct ModulusSpectrum {
    VectorXd moduli;
};

enum class KernelFamily { sped, feature_based, l2_distance };

inline std::string_view to_string(KernelFamily f) {
    switch (f) {
        case KernelFamily::sped: return "sped";
        case KernelFamily::feature_based: return "feature_based";
        case KernelFamily::l2_distance: return "l2_distance";
    }
    return "sped";
}

inline KernelFamily parse_kernel_family(std::string_view name) {
    if (name == "sped") return KernelFamily::sped;
    if (name == "feature_based" || name == "feature") return KernelFamily::feature_based;
    if (name == "l2_distance" || name == "l2") return KernelFamily::l2_distance;
    throw InvalidInput("unknown kernel family '" + std::string(name) + "'");
}

struct KernelParams {
    VectorXd theta;
    double theta_d = 0.0;
    double nugget = 1e-8;
    KernelFamily family = KernelFamily::sped;
};

inline Index half_spectrum_size(Index p) { return (p - 1) / 2 + 1; }

/// Number of per-coordinate weights a family uses for curves with p points.
inline Index theta_size(KernelFamily family, Index p) {
    switch (family) {
        case KernelFamily::sped: return half_spectrum_size(p);
        case KernelFamily::feature_based: return 4;
        case KernelFamily::l2_distance: return p;
    }
    return 0;
}

/// Whether the separable exp(-theta_d (d_a - d_b)^2) factor applies.
inline bool uses_diameter_factor(KernelFamily family) { return family != KernelFamily::feature_based; }

namespace detail {

inline void require_finite(const VectorXd& v, const char* what) {
    if (!v.allFinite()) throw InvalidInput(std::string(what) + " contains non-finite values");
}

inline void validate_params(const KernelParams& params, Index expected_theta) {
    if (params.theta.size() != expected_theta)
        throw InvalidInput("theta has length " + std::to_string(params.theta.size()) + ", expected " +
                           std::to_string(expected_theta));
    if (!params.theta.allFinite() || (params.theta.array() < 0.0).any())
        throw InvalidInput("theta must be finite and nonnegative");
    if (!std::isfinite(params.theta_d) || params.theta_d < 0.0)
        throw InvalidInput("theta_d must be finite and nonnegative");
    if (!std::isfinite(params.nugget) || params.nugget < 0.0)
        throw InvalidInput("nugget must be finite and nonnegative");
}

}  // namespace detail

/// Moduli of the unnormalized forward DFT, x_hat_k = sum_l x_l exp(-2 pi i l k / p),
/// for k = 0 .. (p - 1) / 2, by direct summation.
inline ModulusSpectrum dft_modulus(const StructureCurve& curve) {
    const Index p = curve.size();
    if (p < 1 || p % 2 == 0) throw InvalidInput("structure curve length must be odd, got " + std::to_string(p));
    detail::require_finite(curve.values, "structure curve");

    const Index half = half_spectrum_size(p);
    ModulusSpectrum out{VectorXd(half)};
    for (Index k = 0; k < half; ++k) {
        double re = 0.0, im = 0.0;
        for (Index l = 0; l < p; ++l) {
            // reduce l*k mod p first so the angle stays in [0, 2 pi)
            const double angle = 2.0 * std::numbers::pi * double((l * k) % p) / double(p);
            re += curve.values[l] * std::cos(angle);
            im -= curve.values[l] * std::sin(angle);
        }
        out.moduli[k] = std::hypot(re, im);
    }
    return out;
}

/// Real curve with the given half-spectrum moduli: zero phases, conjugate-symmetric completion.
inline StructureCurve inverse_dft_zero_phase(const VectorXd& moduli, Index p, double length_mm = kDefaultStructureLength) {
    if (p < 1 || p % 2 == 0) throw InvalidInput("structure curve length must be odd");
    if (moduli.size() != half_spectrum_size(p)) throw InvalidInput("spectrum length does not match p");
    detail::require_finite(moduli, "spectrum");
    StructureCurve curve{VectorXd::Zero(p), length_mm};
    for (Index l = 0; l < p; ++l) {
        double acc = moduli[0];
        for (Index k = 1; k < moduli.size(); ++k) {
            const double angle = 2.0 * std::numbers::pi * double((l * k) % p) / double(p);
            acc += 2.0 * moduli[k] * std::cos(angle);
        }
        curve.values[l] = acc / double(p);
    }
    return curve;
}

inline StructureCurve cyclic_shift(const StructureCurve& curve, Index shift) {
    const Index p = curve.size();
    StructureCurve out{VectorXd(p), curve.length_mm};
    if (p == 0) return out;
    const Index s = ((shift % p) + p) % p;
    for (Index l = 0; l < p; ++l) out.values[(l + s) % p] = curve.values[l];
    return out;
}

/// Embedding z of one design for the given family.
inline VectorXd kernel_features(const StructureDesign& design, KernelFamily family) {
    switch (family) {
        case KernelFamily::sped: return dft_modulus(design.curve).moduli;
        case KernelFamily::feature_based: {
            if (!design.sinusoid)
                throw InvalidInput("feature-based kernel needs sinusoid parameters for every design");
            const auto& s = *design.sinusoid;
            VectorXd z(4);
            z << design.diameter, s.A, s.omega, s.phi;
            return z;
        }
        case KernelFamily::l2_distance:
            detail::require_finite(design.curve.values, "structure curve");
            return design.curve.values;
    }
    return {};
}

/// Per-coordinate measure w_k of a family.
inline VectorXd feature_weights(KernelFamily family, Index theta_len, double curve_spacing) {
    if (family == KernelFamily::l2_distance) return VectorXd::Constant(theta_len, curve_spacing);
    return VectorXd::Ones(theta_len);
}

/// exp(-sum_k theta_k w_k (za_k - zb_k)^2 - theta_d (da - db)^2), diameter term optional.
inline double correlation_from_features(const VectorXd& za, double da, const VectorXd& zb, double db,
                                        const VectorXd& theta, const VectorXd& weights, double theta_d,
                                        bool diameter_term) {
    if (za.size() != theta.size() || zb.size() != theta.size() || weights.size() != theta.size())
        throw InvalidInput("feature / theta length mismatch");
    double exponent = 0.0;
    for (Index k = 0; k < theta.size(); ++k) {
        const double diff = za[k] - zb[k];
        exponent += theta[k] * weights[k] * diff * diff;
    }
    if (diameter_term) exponent += theta_d * (da - db) * (da - db);
    return std::exp(-exponent);
}

/// SpeD correlation with the separable diameter factor.
inline double sped_correlation(const StructureDesign& a, const StructureDesign& b, const KernelParams& params) {
    if (a.curve.size() != b.curve.size()) throw InvalidInput("designs have different curve lengths");
    const auto sa = dft_modulus(a.curve).moduli;
    const auto sb = dft_modulus(b.curve).moduli;
    detail::validate_params(params, sa.size());
    return correlation_from_features(sa, a.diameter, sb, b.diameter, params.theta, VectorXd::Ones(sa.size()),
                                     params.theta_d, true);
}

/// Gaussian correlation on the four sinusoid parameters [d, A, omega, phi].
inline double feature_correlation(const std::array<double, 4>& fa, const std::array<double, 4>& fb,
                                  const std::array<double, 4>& theta4) {
    double exponent = 0.0;
    for (int k = 0; k < 4; ++k) {
        if (!std::isfinite(fa[k]) || !std::isfinite(fb[k]) || !std::isfinite(theta4[k]))
            throw InvalidInput("feature correlation inputs must be finite");
        if (theta4[k] < 0.0) throw InvalidInput("theta must be nonnegative");
        exponent += theta4[k] * (fa[k] - fb[k]) * (fa[k] - fb[k]);
    }
    return std::exp(-exponent);
}

/// Gaussian correlation on the raw curves, Riemann sum with the grid spacing as measure.
inline double l2_correlation(const StructureCurve& a, const StructureCurve& b, const VectorXd& theta_t) {
    if (a.size() != b.size() || theta_t.size() != a.size())
        throw InvalidInput("l2 correlation: length mismatch");
    detail::require_finite(a.values, "structure curve");
    detail::require_finite(b.values, "structure curve");
    if ((theta_t.array() < 0.0).any()) throw InvalidInput("theta must be nonnegative");
    const double dt = a.spacing();
    double exponent = 0.0;
    for (Index l = 0; l < a.size(); ++l) {
        const double diff = a.values[l] - b.values[l];
        exponent += theta_t[l] * diff * diff * dt;
    }
    return std::exp(-exponent);
}

/// Embedded training designs: everything a correlation matrix needs, computed once.
struct KernelInputs {
    KernelFamily family = KernelFamily::sped;
    MatrixXd features;   // n x K
    VectorXd weights;    // K
    VectorXd diameters;  // n
    Index curve_points = 0;
    double curve_spacing = 0.0;

    Index size() const { return features.rows(); }
    Index dims() const { return features.cols(); }
    bool diameter_term() const { return uses_diameter_factor(family); }
};

inline KernelInputs embed_designs(std::span<const StructureDesign> designs, KernelFamily family) {
    if (designs.empty()) throw InvalidInput("at least one design is required");
    const Index p = designs.front().curve.size();
    KernelInputs in;
    in.family = family;
    in.curve_points = p;
    in.curve_spacing = designs.front().curve.spacing();
    const Index K = theta_size(family, p);
    in.features.resize(Index(designs.size()), K);
    in.diameters.resize(Index(designs.size()));
    for (Index i = 0; i < Index(designs.size()); ++i) {
        const auto& d = designs[std::size_t(i)];
        if (d.curve.size() != p) throw InvalidInput("designs do not share the curve length p");
        if (!std::isfinite(d.diameter)) throw InvalidInput("diameter must be finite");
        in.features.row(i) = kernel_features(d, family).transpose();
        in.diameters[i] = d.diameter;
    }
    in.weights = feature_weights(family, K, in.curve_spacing);
    return in;
}

/// Weighted squared coordinate differences for every unordered pair i < j.
/// Row `pair_index(i, j)` of `coords` holds w_k (z_i[k] - z_j[k])^2; `diam` holds (d_i - d_j)^2.
struct PairwiseDistances {
    Index n = 0;
    MatrixXd coords;  // npairs x K
    VectorXd diam;    // npairs
    bool diameter_term = true;

    Index pairs() const { return coords.rows(); }
    static Index pair_index(Index i, Index j, Index n) {
        // i < j, row-major upper triangle
        return i * n - i * (i + 1) / 2 + (j - i - 1);
    }
};

inline PairwiseDistances pairwise_distances(const KernelInputs& in) {
    PairwiseDistances pd;
    pd.n = in.size();
    pd.diameter_term = in.diameter_term();
    const Index np = pd.n * (pd.n - 1) / 2;
    pd.coords.resize(np, in.dims());
    pd.diam.resize(np);
    Index row = 0;
    for (Index i = 0; i < pd.n; ++i) {
        for (Index j = i + 1; j < pd.n; ++j, ++row) {
            pd.coords.row(row) =
                ((in.features.row(i) - in.features.row(j)).array().square() * in.weights.transpose().array()).matrix();
            const double dd = in.diameters[i] - in.diameters[j];
            pd.diam[row] = pd.diameter_term ? dd * dd : 0.0;
        }
    }
    return pd;
}

/// R with R_ii = 1 + nugget from precomputed pairwise distances (no factorization check).
inline MatrixXd assemble_correlation(const PairwiseDistances& pd, const VectorXd& theta, double theta_d, double nugget) {
    MatrixXd R(pd.n, pd.n);
    const VectorXd exponent = pd.coords * theta + theta_d * pd.diam;
    Index row = 0;
    for (Index i = 0; i < pd.n; ++i) {
        R(i, i) = 1.0 + nugget;
        for (Index j = i + 1; j < pd.n; ++j, ++row) {
            const double r = std::exp(-exponent[row]);
            R(i, j) = r;
            R(j, i) = r;
        }
    }
    return R;
}

/// Most correlated off-diagonal pair of R (used to name near-duplicate designs).
inline std::pair<Index, Index> most_correlated_pair(const MatrixXd& R) {
    std::pair<Index, Index> best{-1, -1};
    double best_val = -1.0;
    for (Index i = 0; i < R.rows(); ++i)
        for (Index j = i + 1; j < R.cols(); ++j)
            if (R(i, j) > best_val) {
                best_val = R(i, j);
                best = {i, j};
            }
    return best;
}

/// Cholesky of R; throws SingularMatrix naming the most correlated pair on failure.
inline Eigen::LLT<MatrixXd> factorize_correlation(const MatrixXd& R) {
    Eigen::LLT<MatrixXd> llt(R);
    if (llt.info() != Eigen::Success) {
        const auto [i, j] = most_correlated_pair(R);
        throw SingularMatrix("correlation matrix is not positive definite; designs " + std::to_string(i) + " and " +
                                 std::to_string(j) + " are (near-)duplicates modulo shift",
                             long(i), long(j));
    }
    return llt;
}

inline MatrixXd correlation_matrix(const KernelInputs& in, const KernelParams& params) {
    detail::validate_params(params, in.dims());
    MatrixXd R = assemble_correlation(pairwise_distances(in), params.theta, params.theta_d, params.nugget);
    factorize_correlation(R);
    return R;
}

/// R_ij = rho(design_i, design_j) with nugget on the diagonal; verified factorizable.
inline MatrixXd correlation_matrix(std::span<const StructureDesign> designs, const KernelParams& params) {
    return correlation_matrix(embed_designs(designs, params.family), params);
}

/// r_i = rho(z, design_i) for an already-embedded query.
inline VectorXd cross_correlation(const VectorXd& z, double diameter, const KernelInputs& in, const KernelParams& params) {
    if (z.size() != in.dims()) throw InvalidInput("query embedding does not match the training designs");
    VectorXd r(in.size());
    for (Index i = 0; i < in.size(); ++i) {
        r[i] = correlation_from_features(z, diameter, in.features.row(i).transpose(), in.diameters[i], params.theta,
                                         in.weights, params.theta_d, in.diameter_term());
    }
    return r;
}

inline VectorXd cross_correlation(const StructureDesign& query, std::span<const StructureDesign> designs,
                                  const KernelParams& params) {
    const auto in = embed_designs(designs, params.family);
    detail::validate_params(params, in.dims());
    if (query.curve.size() != in.curve_points) throw InvalidInput("query curve length does not match the designs");
    return cross_correlation(kernel_features(query, params.family), query.diameter, in, params);
}

/// Family-dispatched correlation of two designs.
inline double correlation(const StructureDesign& a, const StructureDesign& b, const KernelParams& params) {
    if (a.curve.size() != b.curve.size()) throw InvalidInput("designs have different curve lengths");
    const Index K = theta_size(params.family, a.curve.size());
    detail::validate_params(params, K);
    const auto w = feature_weights(params.family, K, a.curve.spacing());
    return correlation_from_features(kernel_features(a, params.family), a.diameter, kernel_features(b, params.family),
                                     b.diameter, params.theta, w, params.theta_d, uses_diameter_factor(params.family));
}

}  // namespace sped
