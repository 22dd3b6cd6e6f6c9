#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "ofmpc/lmi/affine.hpp"
#include "ofmpc/lmi/solver.hpp"
#include "ofmpc/model.hpp"

namespace ofmpc {

/// Symmetric square root of a PSD matrix (negative eigenvalues clipped).
inline Matrix psd_sqrt(const Matrix& m)
{
    if (m.size() == 0)
        return m;
    Eigen::SelfAdjointEigenSolver<Matrix> es(lmi::symmetrize(m));
    return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
           es.eigenvectors().transpose();
}

inline Matrix spd_inverse(const Matrix& m, const char* what)
{
    Eigen::LLT<Matrix> llt(lmi::symmetrize(m));
    if (llt.info() != Eigen::Success)
        throw Error(ErrorCode::numerical_failure, std::string(what) + " is not positive definite");
    return lmi::symmetrize(llt.solve(Matrix::Identity(m.rows(), m.cols())));
}

inline Matrix block_diag(const Matrix& a, const Matrix& b)
{
    Matrix out = Matrix::Zero(a.rows() + b.rows(), a.cols() + b.cols());
    out.topLeftCorner(a.rows(), a.cols()) = a;
    out.bottomRightCorner(b.rows(), b.cols()) = b;
    return out;
}

/// Certificate check outcome for one named matrix inequality.
struct CertificateCheck {
    std::string label;
    double min_eig = 0.0;
    bool ok = false;
};

/// Re-evaluates every constraint of p at x. Strict constraints must stay positive;
/// all others may dip to -slack * (1 + max|F0|).
inline std::vector<CertificateCheck> check_certificates(const lmi::LmiProblem& p, const Vector& x, double slack)
{
    std::vector<CertificateCheck> out;
    for (const auto& c : p.constraints) {
        CertificateCheck chk;
        chk.label = c.label;
        chk.min_eig = lmi::min_eig(c.evaluate(x));
        const double floor = -slack * (1.0 + c.constant.cwiseAbs().maxCoeff());
        chk.ok = c.strict ? chk.min_eig > 0.0 : chk.min_eig >= floor;
        out.push_back(chk);
    }
    return out;
}

inline bool all_ok(const std::vector<CertificateCheck>& checks)
{
    for (const auto& c : checks)
        if (!c.ok)
            return false;
    return true;
}

inline std::string describe_failures(const std::vector<CertificateCheck>& checks)
{
    std::string out;
    for (const auto& c : checks)
        if (!c.ok)
            out += (out.empty() ? "" : ", ") + c.label + " (min eig " + std::to_string(c.min_eig) + ")";
    return out;
}

/// Largest objective value accepted when the plain solve fails to converge.
inline constexpr double objective_cap = 1e8;

/// Solves the builder's problem. A numerical failure is retried with the objective
/// capped at objective_cap: weakly infeasible problems (feasible only in the limit
/// of an unbounded objective) then become certifiably infeasible.
inline lmi::LmiSolution solve_bounded_retry(const lmi::LmiBuilder& builder, const lmi::Affine& objective,
                                            const std::string& what, const lmi::Tolerances& tol)
{
    lmi::LmiSolution sol = lmi::solve(builder.build(), tol);
    if (sol.status == lmi::SolveStatus::numerical_failure) {
        lmi::LmiBuilder capped = builder;
        capped.require_nonneg(lmi::Affine(Matrix::Constant(1, 1, objective_cap)) - objective, "objective cap");
        lmi::LmiSolution retry = lmi::solve(capped.build(), tol);
        if (retry.status == lmi::SolveStatus::infeasible)
            throw Error(ErrorCode::infeasible, what + ": no solution with objective below " +
                                                   std::to_string(objective_cap) + " (" + retry.message + ")");
        if (retry.ok())
            sol = retry;
    }
    if (sol.status == lmi::SolveStatus::infeasible)
        throw Error(ErrorCode::infeasible, what + " infeasible: " + sol.message);
    if (!sol.ok())
        throw Error(ErrorCode::numerical_failure, what + ": " + sol.message);
    return sol;
}

// ---------------------------------------------------------------------------
// Gain synthesis
// ---------------------------------------------------------------------------

struct GainResult {
    Matrix K, Qbar1, Qbar2, Y1, Pbar;
    double rho_bar = 0.0, tau_bar = 0.0, lambda_bar = 0.0;
    std::vector<CertificateCheck> checks;

    [[nodiscard]] Matrix Qbar() const { return block_diag(Qbar1, Qbar2); }
};

/// Gain SDP: minimize rho_bar over (Qbar1, Qbar2, Y1, rho_bar, tau_bar, lambda_bar).
struct GainSdp {
    lmi::LmiBuilder builder;
    lmi::Affine q1, q2, y1, rho, tau, lambda;
};

inline GainSdp build_gain_sdp(const UncertainSystem& sys, const SynthesisSpec& spec, const Vector& y0)
{
    using lmi::Affine;
    validate(sys, spec);
    if (y0.size() != sys.ny() || !y0.allFinite())
        throw Error(ErrorCode::dimension_mismatch, "initial measurement must be a finite n_y vector");
    const Eigen::Index nx = sys.nx(), nu = sys.nu(), ny = sys.ny(), np = sys.np(), nna = sys.nna();

    GainSdp sdp;
    auto& b = sdp.builder;
    sdp.q1 = b.symmetric(ny, "Qbar1");
    sdp.q2 = b.symmetric(nna, "Qbar2");
    sdp.y1 = b.full(nu, ny, "Y1");
    sdp.rho = b.scalar("rho_bar");
    sdp.tau = b.scalar("tau_bar");
    sdp.lambda = b.scalar("lambda_bar");

    const Affine q = Affine::blocks({{sdp.q1, Affine::zero(ny, nna)}, {Affine::zero(nna, ny), sdp.q2}});
    const Affine y = Affine::blocks({{sdp.y1, Affine::zero(nu, nna)}});
    const Affine yt = y.transpose();
    const Matrix ru_half = psd_sqrt(spec.ru), rx_half = psd_sqrt(spec.rx);

    const Affine r12 = yt * ru_half;
    const Affine r13 = q * rx_half;
    const Affine r14 = q * Matrix(sys.cq.transpose()) + yt * Matrix(sys.dq.transpose());
    const Affine r15 = q * Matrix(sys.phi.transpose()) + yt * Matrix(sys.g.transpose());
    const Affine rho_u = sdp.rho.scaled(Matrix::Identity(nu, nu));
    const Affine rho_x = sdp.rho.scaled(Matrix::Identity(nx, nx));
    const Affine lam_p = sdp.lambda.scaled(Matrix::Identity(np, np));
    const Affine last = q - sdp.lambda.scaled(sys.bp * sys.bp.transpose());
    auto z = [](Eigen::Index r, Eigen::Index c) { return Affine::zero(r, c); };

    b.require_psd(Affine::blocks({
                      {q, r12, r13, r14, r15},
                      {r12.transpose(), rho_u, z(nu, nx), z(nu, np), z(nu, nx)},
                      {r13.transpose(), z(nx, nu), rho_x, z(nx, np), z(nx, nx)},
                      {r14.transpose(), z(np, nu), z(np, nx), lam_p, z(np, nx)},
                      {r15.transpose(), z(nx, nu), z(nx, nx), z(nx, np), last},
                  }),
                  "cost and quadratic stability");

    const Affine one(Matrix::Ones(1, 1));
    const Affine xa{Matrix(y0)};
    b.require_psd(Affine::blocks({{one - sdp.tau, xa.transpose()}, {xa, sdp.q1}}), "initial state (measured part)");
    b.require_psd(Affine::blocks({{sdp.tau.scaled(spec.s), Affine::identity(nna)}, {Affine::identity(nna), sdp.q2}}),
                  "initial state (unmeasured part)");
    const Affine umax(spec.u_max * spec.u_max * Matrix::Identity(nu, nu));
    b.require_psd(Affine::blocks({{umax, sdp.y1}, {sdp.y1.transpose(), sdp.q1}}), "input bound");
    b.require_psd(Affine(spec.x_max * spec.x_max * Matrix::Identity(ny, ny)) - sdp.q1, "output bound");

    b.require_psd(sdp.q1, "Qbar1 > 0", true);
    b.require_psd(sdp.q2, "Qbar2 > 0", true);
    b.require_nonneg(sdp.rho, "rho_bar > 0", true);
    b.require_nonneg(sdp.tau, "tau_bar > 0", true);
    b.require_nonneg(sdp.lambda, "lambda_bar > 0", true);
    b.minimize(sdp.rho);
    return sdp;
}

/// Gain K = Y1 Qbar1^{-1} and the invariant ellipsoid (Pbar, rho_bar).
///
/// A second stage pushes lambda_bar to the smallest value compatible with the
/// optimal rho_bar, which removes the free direction in uncertainty-free plants.
inline GainResult synthesize_gain(const UncertainSystem& sys, const SynthesisSpec& spec, const Vector& y0,
                                  const lmi::Tolerances& tol = lmi::default_tolerances)
{
    GainSdp sdp = build_gain_sdp(sys, spec, y0);
    const lmi::LmiProblem problem = sdp.builder.build();
    lmi::LmiSolution sol = solve_bounded_retry(sdp.builder, sdp.rho, "gain synthesis", tol);

    {
        GainSdp second = build_gain_sdp(sys, spec, y0);
        const double rho_star = sdp.rho.scalar_value(sol.values);
        second.builder.require_nonneg(lmi::Affine(Matrix::Constant(1, 1, rho_star * (1.0 + 1e-6) + 1e-9)) - second.rho,
                                      "rho_bar near optimum");
        second.builder.minimize(second.lambda);
        const lmi::LmiSolution s2 = lmi::solve(second.builder.build(), tol);
        if (s2.ok() && all_ok(check_certificates(problem, s2.values, 10 * tol.feas)))
            sol.values = s2.values;
    }

    GainResult r;
    r.Qbar1 = lmi::symmetrize(sdp.q1.value(sol.values));
    r.Qbar2 = lmi::symmetrize(sdp.q2.value(sol.values));
    r.Y1 = sdp.y1.value(sol.values);
    r.rho_bar = sdp.rho.scalar_value(sol.values);
    r.tau_bar = sdp.tau.scalar_value(sol.values);
    r.lambda_bar = sdp.lambda.scalar_value(sol.values);
    r.K = r.Y1 * spd_inverse(r.Qbar1, "Qbar1");
    r.Pbar = r.rho_bar * spd_inverse(r.Qbar(), "Qbar");
    r.checks = check_certificates(problem, sol.values, 10 * tol.feas);
    if (!all_ok(r.checks))
        throw Error(ErrorCode::numerical_failure, "gain certificate re-check failed: " + describe_failures(r.checks));
    return r;
}

// ---------------------------------------------------------------------------
// Rate-compatible invariant ellipsoid
// ---------------------------------------------------------------------------

/// Closed-loop matrices derived from a gain.
struct ClosedLoop {
    Matrix phi_k, c_k, c_bar, a_bar, b_bar;
};

inline ClosedLoop closed_loop(const UncertainSystem& sys, const Matrix& K)
{
    if (K.rows() != sys.nu() || K.cols() != sys.ny())
        throw Error(ErrorCode::dimension_mismatch, "gain must be n_u x n_y");
    ClosedLoop cl;
    cl.c_bar = K * sys.c;
    cl.phi_k = sys.phi + sys.g * cl.c_bar;
    cl.c_k = sys.cq + sys.dq * cl.c_bar;
    cl.a_bar = cl.c_bar * (cl.phi_k - Matrix::Identity(sys.nx(), sys.nx()));
    cl.b_bar = cl.c_bar * sys.bp;
    return cl;
}

struct SigmaResult {
    double sigma = 0.0;
    double objective = 0.0;
    bool boundary = false;     // search hit its upper limit
    double grid_objective = 0.0;
};

/// lambda_max(du^-2 (A'A + sigma C'C + A'B (sigma I - B'B)^{-1} B'A)); +inf where the pivot is not PD.
inline double sigma_objective(double sigma, const Matrix& a_bar, const Matrix& b_bar, const Matrix& c_k, double du_max)
{
    const Eigen::Index np = b_bar.cols();
    const Matrix pivot = sigma * Matrix::Identity(np, np) - b_bar.transpose() * b_bar;
    Eigen::LLT<Matrix> llt(pivot);
    if (llt.info() != Eigen::Success || lmi::min_eig(pivot) <= 0)
        return std::numeric_limits<double>::infinity();
    const Matrix ab = a_bar.transpose() * b_bar;
    const Matrix m = a_bar.transpose() * a_bar + sigma * c_k.transpose() * c_k + ab * llt.solve(ab.transpose());
    return lmi::max_eig(lmi::symmetrize(m)) / (du_max * du_max);
}

/// Scalar search for the sigma minimizing the rate-certificate eigenvalue:
/// golden section on log(sigma), cross-checked against a 500-point log grid.
inline SigmaResult compute_sigma_hat(const Matrix& a_bar, const Matrix& b_bar, const Matrix& c_k, double du_max)
{
    if (!a_bar.allFinite() || !b_bar.allFinite() || !c_k.allFinite())
        throw Error(ErrorCode::invalid_input, "compute_sigma_hat: non-finite data");
    if (!(du_max > 0))
        throw Error(ErrorCode::invalid_input, "compute_sigma_hat: du_max must be positive");
    auto f = [&](double s) { return sigma_objective(s, a_bar, b_bar, c_k, du_max); };

    const double bb = b_bar.size() ? lmi::max_eig(lmi::symmetrize(b_bar.transpose() * b_bar)) : 0.0;
    const double lo = bb * (1.0 + 1e-6) + 1e-12;
    const double limit = 1e8 * std::max(1.0, lo);

    // Bracket: double until the objective has grown on two consecutive doublings.
    double hi = 2.0 * lo, prev = f(lo);
    int rises = 0;
    bool boundary = false;
    while (true) {
        const double cur = f(hi);
        rises = cur > prev ? rises + 1 : 0;
        prev = cur;
        if (rises >= 2)
            break;
        if (hi >= limit) {
            hi = limit;
            boundary = true;
            break;
        }
        hi = std::min(2.0 * hi, limit);
    }

    // Golden section on log(sigma).
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = std::log(lo), b = std::log(hi);
    double c = b - phi * (b - a), d = a + phi * (b - a);
    double fc = f(std::exp(c)), fd = f(std::exp(d));
    for (int it = 0; it < 200 && (b - a) > 1e-12 * (1.0 + std::abs(a)); ++it) {
        if (fc <= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(std::exp(c));
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(std::exp(d));
        }
    }
    double best_s = std::exp(0.5 * (a + b));
    double best_f = f(best_s);
    for (double cand : {lo, hi}) {
        if (f(cand) < best_f) {
            best_f = f(cand);
            best_s = cand;
        }
    }

    // Independent log-grid cross-check.
    double grid_s = lo, grid_f = std::numeric_limits<double>::infinity();
    const int points = 500;
    for (int i = 0; i < points; ++i) {
        const double s = std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * i / (points - 1.0));
        const double v = f(s);
        if (v < grid_f) {
            grid_f = v;
            grid_s = s;
        }
    }
    if (!std::isfinite(best_f) || std::abs(best_f - grid_f) > 0.05 * std::max(std::abs(grid_f), 1e-300))
        throw Error(ErrorCode::search_failure, "sigma search disagrees with grid (" + std::to_string(best_f) + " vs " +
                                                   std::to_string(grid_f) + ")");

    SigmaResult r;
    r.grid_objective = grid_f;
    if (grid_f < best_f) {
        best_f = grid_f;
        best_s = grid_s;
    }
    r.sigma = best_s;
    r.objective = best_f;
    r.boundary = boundary && best_s >= hi * (1.0 - 1e-9);
    return r;
}

/// Rate certificate matrix: x'Tx <= 1 implies ||delta u|| <= du_max.
inline Matrix compute_T(double sigma_hat, const Matrix& a_bar, const Matrix& b_bar, const Matrix& c_k, double du_max)
{
    if (!(du_max > 0))
        throw Error(ErrorCode::invalid_input, "compute_T: du_max must be positive");
    const Eigen::Index np = b_bar.cols();
    const Matrix pivot = sigma_hat * Matrix::Identity(np, np) - b_bar.transpose() * b_bar;
    Eigen::LLT<Matrix> llt(lmi::symmetrize(pivot));
    if (!std::isfinite(sigma_hat) || llt.info() != Eigen::Success || lmi::min_eig(pivot) <= 0)
        throw Error(ErrorCode::invalid_sigma, "sigma I - B'B is not positive definite");
    const Matrix ab = a_bar.transpose() * b_bar;
    const Matrix t = a_bar.transpose() * a_bar + sigma_hat * c_k.transpose() * c_k + ab * llt.solve(ab.transpose());
    return lmi::symmetrize(t) / (du_max * du_max);
}

struct RpiResult {
    Matrix P1, P2, T;
    double rho = 0.0, tau = 0.0, lambda = 0.0;
    SigmaResult sigma;
    ClosedLoop cl;
    std::vector<CertificateCheck> checks;

    [[nodiscard]] Matrix P() const { return block_diag(P1, P2); }
    [[nodiscard]] Matrix Q() const { return rho * spd_inverse(P(), "P"); }
};

struct RpiSdp {
    lmi::LmiBuilder builder;
    lmi::Affine p1, p2, rho, tau, lambda;
};

/// RPI SDP: minimize rho over (P1, P2, rho, tau, lambda) for the fixed gain and T.
inline RpiSdp build_rpi_sdp(const UncertainSystem& sys, const SynthesisSpec& spec, const GainResult& gain,
                            const Vector& y0, const Matrix& T)
{
    using lmi::Affine;
    validate(sys, spec);
    if (y0.size() != sys.ny() || !y0.allFinite())
        throw Error(ErrorCode::dimension_mismatch, "initial measurement must be a finite n_y vector");
    const Eigen::Index ny = sys.ny(), np = sys.np(), nna = sys.nna();
    const ClosedLoop cl = closed_loop(sys, gain.K);

    RpiSdp sdp;
    auto& b = sdp.builder;
    sdp.p1 = b.symmetric(ny, "P1");
    sdp.p2 = b.symmetric(nna, "P2");
    sdp.rho = b.scalar("rho");
    sdp.tau = b.scalar("tau");
    sdp.lambda = b.scalar("lambda");
    const Affine p = Affine::blocks({{sdp.p1, Affine::zero(ny, nna)}, {Affine::zero(nna, ny), sdp.p2}});

    const Matrix phi_t = cl.phi_k.transpose();
    const Affine top_left = Matrix(phi_t) * p * cl.phi_k - p +
                            Affine(cl.c_bar.transpose() * spec.ru * cl.c_bar + spec.rx) +
                            sdp.lambda.scaled(cl.c_k.transpose() * cl.c_k);
    const Affine top_right = Matrix(phi_t) * p * sys.bp;
    const Affine bottom = Matrix(sys.bp.transpose()) * p * sys.bp - sdp.lambda.scaled(Matrix::Identity(np, np));
    b.require_psd(Affine::blocks({{top_left, top_right}, {top_right.transpose(), bottom}}) * -1.0,
                  "quadratic stability");

    b.require_psd(p - sdp.rho.scaled(gain.Pbar / gain.rho_bar), "inclusion in gain ellipsoid");
    const Matrix xa(y0);
    b.require_nonneg(sdp.rho - sdp.tau - Matrix(xa.transpose()) * sdp.p1 * xa, "initial state (measured part)");
    b.require_psd(sdp.tau.scaled(spec.s) - sdp.p2, "initial state (unmeasured part)");
    b.require_psd(p - sdp.rho.scaled(T), "input rate");

    b.require_psd(sdp.p1, "P1 > 0", true);
    b.require_psd(sdp.p2, "P2 > 0", true);
    b.require_nonneg(sdp.rho, "rho > 0", true);
    b.require_nonneg(sdp.tau, "tau > 0", true);
    b.require_nonneg(sdp.lambda, "lambda > 0", true);
    b.minimize(sdp.rho);
    return sdp;
}

/// Rate-compatible RPI ellipsoid {x : x'Px <= rho} inside the gain ellipsoid.
inline RpiResult synthesize_rpi(const UncertainSystem& sys, const SynthesisSpec& spec, const GainResult& gain,
                                const Vector& y0, const lmi::Tolerances& tol = lmi::default_tolerances)
{
    if (!(spec.du_max > 0))
        throw Error(ErrorCode::infeasible, "rate bound must be positive (the rate certificate is unbounded)");
    RpiResult r;
    r.cl = closed_loop(sys, gain.K);
    r.sigma = compute_sigma_hat(r.cl.a_bar, r.cl.b_bar, r.cl.c_k, spec.du_max);
    r.T = compute_T(r.sigma.sigma, r.cl.a_bar, r.cl.b_bar, r.cl.c_k, spec.du_max);

    RpiSdp sdp = build_rpi_sdp(sys, spec, gain, y0, r.T);
    const lmi::LmiProblem problem = sdp.builder.build();
    const lmi::LmiSolution sol = solve_bounded_retry(sdp.builder, sdp.rho, "RPI synthesis", tol);

    r.P1 = lmi::symmetrize(sdp.p1.value(sol.values));
    r.P2 = lmi::symmetrize(sdp.p2.value(sol.values));
    r.rho = sdp.rho.scalar_value(sol.values);
    r.tau = sdp.tau.scalar_value(sol.values);
    r.lambda = sdp.lambda.scalar_value(sol.values);
    r.checks = check_certificates(problem, sol.values, 10 * tol.feas);
    if (!all_ok(r.checks))
        throw Error(ErrorCode::numerical_failure, "RPI certificate re-check failed: " + describe_failures(r.checks));
    return r;
}

} // namespace ofmpc
