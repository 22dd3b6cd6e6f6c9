#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "ofmpc/lmi/affine.hpp"
#include "ofmpc/lmi/solver.hpp"

namespace ofmpc::lmi {

/// Multiplier-dependent data of a generalized eigenvalue problem
///
///   minimize  lambda_max(E(tau) + A(tau)^T X(tau)^{-1} A(tau))
///   subject to X(tau) >= strict*I,  lower <= tau <= upper,
///
/// with E, A, X affine in tau: E(tau) = e0 + sum_h tau_h e_terms[h] (likewise A, X).
/// E is n_v x n_v, A is n_w x n_v, X is n_w x n_w.
///
/// When `cap` is set the objective becomes the ratio
///   lambda_max(...) / (cap->bound - tau_{cap->index}),
/// solved exactly through its perspective SDP.
struct GevpProblem {
    struct Cap {
        int index = 0;
        double bound = 1.0;
    };

    Matrix e0, a0, x0;
    std::vector<Matrix> e_terms, a_terms, x_terms;
    Vector lower, upper;             // upper may hold +inf
    std::optional<Cap> cap;
    // When set, a second stage minimizes the sum of multipliers among points whose
    // objective is within slack*(1 + |optimum|) of the optimum.
    std::optional<double> lexicographic_slack;
    std::string label;

    [[nodiscard]] int num_multipliers() const { return static_cast<int>(e_terms.size()); }
    [[nodiscard]] Eigen::Index nv() const { return e0.rows(); }
    [[nodiscard]] Eigen::Index nw() const { return x0.rows(); }

    void validate() const
    {
        const int m = num_multipliers();
        if (static_cast<int>(a_terms.size()) != m || static_cast<int>(x_terms.size()) != m || lower.size() != m ||
            upper.size() != m)
            throw Error(ErrorCode::dimension_mismatch, "GEVP '" + label + "': multiplier lists differ in length");
        if (e0.rows() != e0.cols() || x0.rows() != x0.cols() || a0.rows() != nw() || a0.cols() != nv())
            throw Error(ErrorCode::dimension_mismatch, "GEVP '" + label + "': base blocks not conformal");
        for (int h = 0; h < m; ++h) {
            if (e_terms[h].rows() != nv() || e_terms[h].cols() != nv() || x_terms[h].rows() != nw() ||
                x_terms[h].cols() != nw() || a_terms[h].rows() != nw() || a_terms[h].cols() != nv())
                throw Error(ErrorCode::dimension_mismatch, "GEVP '" + label + "': multiplier block not conformal");
            if (lower(h) > upper(h))
                throw Error(ErrorCode::no_valid_multiplier, "GEVP '" + label + "': empty multiplier bounds");
        }
        if (cap && (cap->index < 0 || cap->index >= m))
            throw Error(ErrorCode::invalid_input, "GEVP '" + label + "': cap index out of range");
        if (cap && !(cap->bound > 0))
            throw Error(ErrorCode::no_valid_multiplier, "GEVP '" + label + "': nonpositive cap");
    }

    [[nodiscard]] bool decoupled() const
    {
        if (a0.size() > 0 && a0.cwiseAbs().maxCoeff() > 0)
            return false;
        for (const auto& a : a_terms)
            if (a.size() > 0 && a.cwiseAbs().maxCoeff() > 0)
                return false;
        return true;
    }

    [[nodiscard]] Matrix e_at(const Vector& tau) const
    {
        Matrix out = e0;
        for (int h = 0; h < num_multipliers(); ++h)
            out += tau(h) * e_terms[h];
        return out;
    }
    [[nodiscard]] Matrix a_at(const Vector& tau) const
    {
        Matrix out = a0;
        for (int h = 0; h < num_multipliers(); ++h)
            out += tau(h) * a_terms[h];
        return out;
    }
    [[nodiscard]] Matrix x_at(const Vector& tau) const
    {
        Matrix out = x0;
        for (int h = 0; h < num_multipliers(); ++h)
            out += tau(h) * x_terms[h];
        return out;
    }

    /// E + A^T X^{-1} A, or nullopt when X is not positive definite.
    [[nodiscard]] std::optional<Matrix> lifted_matrix(const Vector& tau) const
    {
        Matrix l = e_at(tau);
        if (nw() == 0)
            return symmetrize(l);
        const Matrix x = symmetrize(x_at(tau));
        Eigen::LLT<Matrix> llt(x);
        if (llt.info() != Eigen::Success || min_eig(x) <= 0)
            return std::nullopt;
        const Matrix a = a_at(tau);
        l += a.transpose() * llt.solve(a);
        return symmetrize(l);
    }

    /// Objective value at tau (ratio form when capped); +inf outside the domain.
    [[nodiscard]] double objective(const Vector& tau) const
    {
        const auto l = lifted_matrix(tau);
        if (!l)
            return std::numeric_limits<double>::infinity();
        const double lam = max_eig(*l);
        if (!cap)
            return lam;
        const double margin = cap->bound - tau(cap->index);
        return margin > 0 ? lam / margin : std::numeric_limits<double>::infinity();
    }
};

struct GevpResult {
    Vector tau;
    double objective = 0.0;   // as defined by GevpProblem::objective
    double lambda = 0.0;      // lambda_max(E + A^T X^{-1} A) at tau
    bool bisection = false;   // true when the fallback produced the result
    std::string message;
};

namespace detail {

/// Lifted LMIs in variables (t, nu): plain form has nu = tau and kappa = 1;
/// the capped form uses kappa = (1 + nu_c)/b and nu = kappa * tau.
class GevpLift {
public:
    enum class Goal { level, feasibility, multipliers };

    /// goal == level: minimize t.  Otherwise t <= t_bound is imposed and the
    /// objective is zero (feasibility) or the sum of multipliers.
    GevpLift(const GevpProblem& p, double strict, Goal goal, double t_bound = 0.0) : p_(p)
    {
        const int m = p.num_multipliers();
        t_ = goal == Goal::level ? b_.scalar("t") : Affine(Matrix::Constant(1, 1, t_bound));
        // Multipliers whose bounds coincide become constants: the box has no interior.
        std::vector<bool> fixed(m, false);
        for (int h = 0; h < m; ++h)
            fixed[h] = std::isfinite(p.upper(h)) && p.upper(h) - p.lower(h) <= 1e-9 * (1.0 + std::abs(p.upper(h)));
        nu_.resize(m);
        for (int h = 0; h < m; ++h)
            if (!fixed[h])
                nu_[h] = b_.scalar("tau" + std::to_string(h));
        kappa_ = Affine(Matrix::Ones(1, 1));
        if (p.cap) {
            const int c = p.cap->index;
            if (fixed[c]) {
                const double margin = p.cap->bound - p.upper(c);
                if (!(margin > 0))
                    throw Error(ErrorCode::no_valid_multiplier, "GEVP '" + p.label + "': fixed multiplier at its cap");
                kappa_ = Affine(Matrix::Constant(1, 1, 1.0 / margin));
            } else {
                kappa_ = (Affine(Matrix::Ones(1, 1)) + nu_[c]) * (1.0 / p.cap->bound);
            }
        }
        for (int h = 0; h < m; ++h)
            if (fixed[h])
                nu_[h] = kappa_ * p.upper(h);

        const Eigen::Index nv = p.nv(), nw = p.nw();
        Affine e = kappa_.scaled(p.e0), a = kappa_.scaled(p.a0), x = kappa_.scaled(p.x0);
        for (int h = 0; h < m; ++h) {
            e += nu_[h].scaled(p.e_terms[h]);
            a += nu_[h].scaled(p.a_terms[h]);
            x += nu_[h].scaled(p.x_terms[h]);
        }
        const Affine top = t_.scaled(Matrix::Identity(nv, nv)) - e;
        if (p.decoupled() || nw == 0) {
            b_.require_psd(top, "epigraph");
        } else {
            b_.require_psd(Affine::blocks({{top, a.transpose()}, {a, x}}), "lifted epigraph");
        }
        if (nw > 0)
            b_.require_psd(x - kappa_.scaled(strict * Matrix::Identity(nw, nw)), "X > 0");

        for (int h = 0; h < m; ++h) {
            if (fixed[h])
                continue;
            if (std::isfinite(p.lower(h)))
                b_.require_nonneg(nu_[h] - kappa_ * p.lower(h), "lower bound " + std::to_string(h));
            if (std::isfinite(p.upper(h)))
                b_.require_nonneg(kappa_ * p.upper(h) - nu_[h], "upper bound " + std::to_string(h));
        }
        if (p.cap) {
            b_.require_nonneg(kappa_, "cap scale");
            b_.require_nonneg(Affine(Matrix::Constant(1, 1, 1.0 / strict)) - kappa_, "cap margin");
        }

        Affine obj = goal == Goal::level ? t_ : Affine(Matrix::Zero(1, 1));
        if (goal == Goal::multipliers)
            for (const auto& v : nu_)
                obj += v;
        b_.minimize(obj);
    }

    [[nodiscard]] LmiProblem problem() const { return b_.build(); }

    [[nodiscard]] Vector multipliers(const Vector& values) const
    {
        const int m = p_.num_multipliers();
        Vector tau(m);
        const double kappa = kappa_.scalar_value(values);
        for (int h = 0; h < m; ++h)
            tau(h) = nu_[h].scalar_value(values) / kappa;
        return tau;
    }

private:
    const GevpProblem& p_;
    LmiBuilder b_;
    Affine t_, kappa_;
    std::vector<Affine> nu_;
};

} // namespace detail

/// Minimizes the largest generalized eigenvalue through the Schur-lifted epigraph SDP,
/// falling back to bisection on the epigraph level when the lift fails numerically.
inline GevpResult solve_min_max_eig(const GevpProblem& p, const Tolerances& tol = default_tolerances)
{
    p.validate();
    const int m = p.num_multipliers();

    auto finish = [&](Vector tau, bool bisection, std::string msg) {
        // Project tiny bound violations from the solver back into the box.
        for (int h = 0; h < m; ++h) {
            if (std::isfinite(p.lower(h)))
                tau(h) = std::max(tau(h), p.lower(h));
            if (std::isfinite(p.upper(h)))
                tau(h) = std::min(tau(h), p.upper(h));
        }
        GevpResult r;
        r.tau = tau;
        r.objective = p.objective(tau);
        const auto l = p.lifted_matrix(tau);
        if (!l || !std::isfinite(r.objective))
            throw Error(ErrorCode::numerical_failure, "GEVP '" + p.label + "': multipliers leave the domain");
        r.lambda = max_eig(*l);
        r.bisection = bisection;
        r.message = std::move(msg);
        return r;
    };

    using Goal = detail::GevpLift::Goal;
    const detail::GevpLift lift(p, tol.strict, Goal::level);
    const LmiSolution sol = solve(lift.problem(), tol);
    if (sol.ok()) {
        Vector tau = lift.multipliers(sol.values);
        if (p.lexicographic_slack) {
            const double t_star = sol.values(0);
            const detail::GevpLift second(p, tol.strict, Goal::multipliers,
                                          t_star + *p.lexicographic_slack * (1.0 + std::abs(t_star)));
            const LmiSolution s2 = solve(second.problem(), tol);
            if (s2.ok())
                tau = second.multipliers(s2.values);
        }
        return finish(tau, false, "lifted SDP");
    }
    if (sol.status == SolveStatus::infeasible)
        throw Error(ErrorCode::no_valid_multiplier, "GEVP '" + p.label + "': no multiplier satisfies the constraints");

    // Bisection fallback on the epigraph level t.
    auto feasible_at = [&](double t) -> std::optional<Vector> {
        const detail::GevpLift fixed(p, tol.strict, Goal::feasibility, t);
        const LmiSolution s = solve(fixed.problem(), tol);
        if (s.ok())
            return fixed.multipliers(s.values);
        if (s.status == SolveStatus::infeasible)
            return std::nullopt;
        throw Error(ErrorCode::numerical_failure, "GEVP '" + p.label + "': bisection subproblem failed: " + s.message);
    };

    double hi = 1.0;
    std::optional<Vector> best;
    for (int i = 0; i < 80 && !best; ++i, hi *= 4.0)
        best = feasible_at(hi);
    if (!best)
        throw Error(ErrorCode::no_valid_multiplier, "GEVP '" + p.label + "': no feasible level found");
    hi = std::min(hi, p.objective(*best));
    double lo = hi - std::max(1.0, std::abs(hi));
    while (auto tau = feasible_at(lo)) {
        best = tau;
        const double width = hi - lo;
        hi = lo;
        lo -= 2.0 * width;
    }
    while (hi - lo > tol.gap * (1.0 + std::abs(hi))) {
        const double mid = 0.5 * (lo + hi);
        if (auto tau = feasible_at(mid)) {
            hi = mid;
            best = tau;
        } else {
            lo = mid;
        }
    }
    return finish(*best, true, "bisection");
}

} // namespace ofmpc::lmi
