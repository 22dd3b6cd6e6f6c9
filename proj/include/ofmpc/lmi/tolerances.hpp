#pragma once

namespace ofmpc::lmi {

/// Solver-wide numerical knobs. One instance travels with every solve.
struct Tolerances {
    double feas = 1e-8;    // primal/dual residual and eigenvalue slack
    double gap = 1e-7;     // relative duality gap at termination
    double strict = 1e-8;  // X > 0 is enforced as X >= strict * I
    double sym = 1e-10;    // asymmetry tolerated before symmetrizing
    double chol = 1e-8;    // indefiniteness tolerated by cholesky_psd
    int max_iterations = 120;
};

inline constexpr Tolerances default_tolerances{};

} // namespace ofmpc::lmi
