#pragma once

// Synthetic stand-in for the finite-element simulator.
//
//   w      = sum_{k=2..8} c_k |x_hat_k| / p          c = (0.7, 0.85, 1, 1, 1, 0.85, 0.7)
//   g      = tanh(w / 0.25)
//   log a  = log(1.5) + 0.8 (d - 1.1) + 0.6 g
//   b      = 0.55 + 0.30 d + 0.9 g
//   O(s)   = a s^b                                    (MPa)
//
// The response depends on the structure only through moduli in the band
// k = 2..8 (0.1 to 0.4 per mm on the default grid), so it is shift and phase
// invariant. b ranges over roughly [0.61, 2.0], giving both strain-softening
// (b < 1) and strain-stiffening (b > 1) curves.

#include <array>
#include <cmath>

#include "sped/cokrige.hpp"
#include "sped/spectral.hpp"

namespace sped {

struct OracleConstants {
    Index band_first = 2;
    std::array<double, 7> band_weights{0.7, 0.85, 1.0, 1.0, 1.0, 0.85, 0.7};
    double band_scale = 0.25;
    double log_a0 = std::log(1.5);
    double log_a_d = 0.8;
    double d_center = 1.1;
    double log_a_g = 0.6;
    double b0 = 0.55;
    double b_d = 0.30;
    double b_g = 0.9;
};

struct PowerLaw {
    double a = 1.0;
    double b = 1.0;
};

/// Band activity w of a structure (moduli-only).
inline double oracle_band_activity(const StructureCurve& curve, const OracleConstants& c = {}) {
    const auto spec = dft_modulus(curve).moduli;
    double w = 0.0;
    for (std::size_t j = 0; j < c.band_weights.size(); ++j) {
        const Index k = c.band_first + Index(j);
        if (k < spec.size()) w += c.band_weights[j] * spec[k];
    }
    return w / double(curve.size());
}

inline PowerLaw oracle_power_law(const StructureDesign& design, const OracleConstants& c = {}) {
    const double g = std::tanh(oracle_band_activity(design.curve, c) / c.band_scale);
    return {std::exp(c.log_a0 + c.log_a_d * (design.diameter - c.d_center) + c.log_a_g * g),
            c.b0 + c.b_d * design.diameter + c.b_g * g};
}

/// Stress curve a s^b on the grid.
inline ResponseCurve synthetic_oracle(const StructureDesign& design, const StrainGrid& grid,
                                      const OracleConstants& c = {}) {
    grid.validate();
    const auto law = oracle_power_law(design, c);
    return {(law.a * grid.levels.array().pow(law.b)).matrix(), false};
}

}  // namespace sped
