#pragma once

// Sinusoidal training structures and space-filling samplers over the
// (d, A, omega, phi) design box.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <boost/random/sobol.hpp>

#include "sped/error.hpp"
#include "sped/mimic.hpp"  // latin_hypercube_unit
#include "sped/spectral.hpp"

namespace sped {

struct DesignBox {
    double d_lo = 0.2, d_hi = 2.0;
    double A_lo = 0.0, A_hi = 1.0;
    double omega_lo = 0.0, omega_hi = 0.8;
    double phi_lo = 0.0, phi_hi = 2.0 * std::numbers::pi;

    bool contains(const SinusoidSpec& s) const {
        return s.d >= d_lo && s.d <= d_hi && s.A >= A_lo && s.A <= A_hi && s.omega >= omega_lo &&
               s.omega <= omega_hi && s.phi >= phi_lo && s.phi <= phi_hi;
    }

    SinusoidSpec at(const double u[4]) const {
        return {d_lo + u[0] * (d_hi - d_lo), A_lo + u[1] * (A_hi - A_lo), omega_lo + u[2] * (omega_hi - omega_lo),
                phi_lo + u[3] * (phi_hi - phi_lo)};
    }
};

/// I(t_k) = A sin(2 pi omega t_k + phi) on p points over [0, length], diameter d.
inline StructureDesign gen_sinusoid(const SinusoidSpec& spec, Index p = kDefaultStructurePoints,
                                    const DesignBox& box = {}, double length_mm = kDefaultStructureLength) {
    if (!box.contains(spec)) throw InvalidInput("sinusoid parameters outside the design box");
    if (p < 2) throw InvalidInput("structure needs at least two points");
    StructureDesign design;
    design.diameter = spec.d;
    design.sinusoid = spec;
    design.curve.length_mm = length_mm;
    design.curve.values.resize(p);
    const double dt = length_mm / double(p - 1);
    for (Index k = 0; k < p; ++k) {
        const double t = double(k) * dt;
        design.curve.values[k] = spec.A * std::sin(2.0 * std::numbers::pi * spec.omega * t + spec.phi);
    }
    return design;
}

enum class SamplingScheme { lhs, sobol };

/// n points of the design box. LHS is stratified in each coordinate; Sobol
/// skips the origin and applies a seeded digital shift.
inline std::vector<SinusoidSpec> sample_designs(Index n, std::uint64_t seed, SamplingScheme scheme,
                                                const DesignBox& box = {}) {
    if (n < 1) throw InvalidInput("need at least one design");
    std::vector<SinusoidSpec> out;
    out.reserve(std::size_t(n));
    if (scheme == SamplingScheme::lhs) {
        std::mt19937_64 rng(seed);
        for (const auto& u : latin_hypercube_unit(n, 4, rng)) out.push_back(box.at(u.data()));
        return out;
    }
    std::mt19937_64 rng(seed);
    std::uint64_t shift[4];
    for (auto& s : shift) s = rng();
    boost::random::sobol gen(4);
    gen.discard(4);  // origin
    for (Index i = 0; i < n; ++i) {
        double u[4];
        for (int j = 0; j < 4; ++j) u[j] = double((gen() ^ shift[j]) >> 11) * 0x1.0p-53;
        out.push_back(box.at(u));
    }
    return out;
}

}  // namespace sped
