#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "ofmpc/bundle.hpp"
#include "ofmpc/lmi/affine.hpp"
#include "ofmpc/lmi/solver.hpp"

namespace ofmpc {

/// One online constraint in the scalar form
///   scalar - offset - ||r0 + rc c||^2 >= 0,
/// where scalar is the cost variable J_k (cost family) or a constant bound, and c = [c_0; ...; c_{N-1}].
/// Its LMI form is the bordered block [scalar - offset, -r'; -r, I].
struct OnlineConstraint {
    Family family = Family::cost;
    int k = 0;
    int j_index = -1;  // index of J_k, or -1 for a constant bound
    double bound = 0.0;
    double offset = 0.0;
    Vector r0;
    Matrix rc;
    std::string label;

    [[nodiscard]] Vector residual(const Vector& c) const { return r0 + rc * c; }
    [[nodiscard]] double scalar(const Vector& J) const { return j_index >= 0 ? J(j_index) : bound; }
    [[nodiscard]] double margin(const Vector& J, const Vector& c) const
    {
        return scalar(J) - offset - residual(c).squaredNorm();
    }
    [[nodiscard]] Matrix block(const Vector& J, const Vector& c) const
    {
        const Vector r = residual(c);
        const Eigen::Index n = r.size();
        Matrix out(n + 1, n + 1);
        out(0, 0) = scalar(J) - offset;
        out.block(1, 0, n, 1) = -r;
        out.block(0, 1, 1, n) = -r.transpose();
        out.bottomRightCorner(n, n) = Matrix::Identity(n, n);
        return out;
    }
};

/// Online problem at one time step: minimize sum_k J_k over (J, c) subject to every constraint.
struct OnlineProblem {
    int horizon = 0;
    Eigen::Index nu = 0;
    Vector y, u_prev;
    Matrix K;
    std::vector<OnlineConstraint> constraints;

    [[nodiscard]] Eigen::Index num_c() const { return horizon * nu; }

    /// Smallest J_k compatible with c: J_k = offset + ||r_k(c)||^2.
    [[nodiscard]] Vector tight_costs(const Vector& c) const
    {
        Vector J = Vector::Zero(horizon);
        for (const auto& con : constraints)
            if (con.j_index >= 0)
                J(con.j_index) = con.offset + con.residual(c).squaredNorm();
        return J;
    }

    /// Minimum margin over all constraints at (J, c).
    [[nodiscard]] double min_margin(const Vector& J, const Vector& c) const
    {
        double m = std::numeric_limits<double>::infinity();
        for (const auto& con : constraints)
            m = std::min(m, con.margin(J, c));
        return m;
    }

    /// Minimum margin of the constraints with a constant bound (feasibility of c alone).
    [[nodiscard]] double min_bound_margin(const Vector& c) const
    {
        double m = std::numeric_limits<double>::infinity();
        const Vector J = tight_costs(c);
        for (const auto& con : constraints)
            if (con.j_index < 0)
                m = std::min(m, con.margin(J, c));
        return m;
    }

    /// Cost offsets by index (used to shift J so that the variables start at zero).
    [[nodiscard]] Vector cost_offsets() const
    {
        Vector off = Vector::Zero(horizon);
        for (const auto& con : constraints)
            if (con.j_index >= 0)
                off(con.j_index) = con.offset;
        return off;
    }

    /// LMI form in the variables (Jt_0..Jt_{N-1}, c) with Jt_k = J_k - offset_k.
    [[nodiscard]] lmi::LmiProblem lmi() const
    {
        using lmi::Affine;
        lmi::LmiBuilder b;
        std::vector<Affine> jt;
        for (int k = 0; k < horizon; ++k)
            jt.push_back(b.scalar("J" + std::to_string(k)));
        const Affine c = b.full(num_c(), 1, "c");
        const Vector off = cost_offsets();
        Affine obj(1, 1);
        for (const auto& j : jt)
            obj += j;
        for (const auto& con : constraints) {
            const Eigen::Index n = con.r0.size();
            const Affine top = con.j_index >= 0 ? jt[con.j_index] + Affine(Matrix::Constant(1, 1, off(con.j_index) - con.offset))
                                                : Affine(Matrix::Constant(1, 1, con.bound - con.offset));
            const Affine r = Affine(Matrix(con.r0)) + con.rc * c;
            b.require_psd(Affine::blocks({{top, r.transpose() * -1.0}, {r * -1.0, Affine::identity(n)}}), con.label);
        }
        b.minimize(obj);
        return b.build();
    }
};

inline void check_measurement(const ControllerBundle& b, const Measurement& meas)
{
    if (meas.y.size() != b.sys().ny() || meas.u_prev.size() != b.sys().nu())
        throw Error(ErrorCode::dimension_mismatch, "measurement does not match the bundle dimensions");
    if (!meas.y.allFinite() || !meas.u_prev.allFinite())
        throw Error(ErrorCode::invalid_input, "measurement must be finite");
}

/// Builds all 5N+1 constraints for the current measurement.
inline OnlineProblem assemble(const ControllerBundle& b, const Measurement& meas)
{
    check_measurement(b, meas);
    const auto& sys = b.sys();
    const auto& spec = b.spec();
    OnlineProblem p;
    p.horizon = b.horizon();
    p.nu = sys.nu();
    p.y = meas.y;
    p.u_prev = meas.u_prev;
    p.K = b.gain.K;
    const Eigen::Index nc = p.num_c(), ny = sys.ny(), nu = sys.nu();

    auto factored = [&](Family f, int k, int c_blocks) {
        const Matrix& r = b.factors.of(f, k);
        if (r.cols() != ny + c_blocks * nu)
            throw Error(ErrorCode::dimension_mismatch, "factor size does not match its constraint");
        OnlineConstraint con;
        con.family = f;
        con.k = k;
        con.offset = b.multipliers.offset(f, k);
        con.r0 = r.leftCols(ny) * meas.y;
        con.rc = Matrix::Zero(r.rows(), nc);
        con.rc.leftCols(c_blocks * nu) = r.rightCols(c_blocks * nu);
        con.label = std::string(to_string(f)) + "[" + std::to_string(k) + "]";
        return con;
    };
    auto direct = [&](Family f, double bound, const Vector& shift) {
        OnlineConstraint con;
        con.family = f;
        con.k = 0;
        con.bound = bound;
        con.r0 = b.gain.K * meas.y - shift;
        con.rc = Matrix::Zero(nu, nc);
        con.rc.leftCols(nu) = Matrix::Identity(nu, nu);
        con.label = std::string(to_string(f)) + "[0]";
        return con;
    };

    const int n = p.horizon;
    for (int k = 0; k < n; ++k) {
        OnlineConstraint con = factored(Family::cost, k, k + 1);
        con.j_index = k;
        p.constraints.push_back(std::move(con));
    }
    p.constraints.push_back(direct(Family::input, spec.u_max * spec.u_max, Vector::Zero(nu)));
    p.constraints.push_back(direct(Family::rate, spec.du_max * spec.du_max, meas.u_prev));
    for (int k = 1; k < n; ++k) {
        OnlineConstraint in = factored(Family::input, k, k + 1);
        in.bound = spec.u_max * spec.u_max;
        p.constraints.push_back(std::move(in));
        OnlineConstraint rt = factored(Family::rate, k, k + 1);
        rt.bound = spec.du_max * spec.du_max;
        p.constraints.push_back(std::move(rt));
    }
    for (int k = 1; k <= n; ++k) {
        OnlineConstraint out = factored(Family::output, k, k);
        out.bound = spec.x_max * spec.x_max;
        p.constraints.push_back(std::move(out));
        OnlineConstraint nm = factored(Family::nonmeas, k, k);
        nm.bound = 1.0;
        p.constraints.push_back(std::move(nm));
    }
    OnlineConstraint term = factored(Family::terminal, n, n);
    term.bound = b.rpi.rho;
    p.constraints.push_back(std::move(term));
    return p;
}

/// max of x' R_x x over x = [y; x_na] with x_na' S x_na <= 1; +inf when S is singular.
inline double max_state_weight(const Matrix& rx, const Matrix& s, const Vector& y)
{
    const Eigen::Index ny = y.size(), nna = s.rows();
    const double base = y.dot(rx.topLeftCorner(ny, ny) * y);
    if (nna == 0)
        return base;
    Eigen::LLT<Matrix> llt(s);
    if (llt.info() != Eigen::Success || lmi::min_eig(s) <= 0)
        return std::numeric_limits<double>::infinity();
    // x_na = L^{-T} w with ||w|| <= 1 and S = L L'.
    const Matrix l = llt.matrixL();
    const Matrix linv = l.triangularView<Eigen::Lower>().solve(Matrix::Identity(nna, nna));
    const Matrix a = lmi::symmetrize(linv * rx.bottomRightCorner(nna, nna) * linv.transpose());
    const Vector beta = linv * (rx.bottomLeftCorner(nna, ny) * y);
    Eigen::SelfAdjointEigenSolver<Matrix> es(a);
    const Vector lam = es.eigenvalues();
    const Vector gam = es.eigenvectors().transpose() * beta;
    const double lmax = lam(nna - 1);
    const double scale = 1.0 + std::abs(lmax) + gam.norm();

    // Maximizer of the convex quadratic w'Aw + 2 beta'w lies on the unit sphere with (mu I - A) w = beta, mu >= lmax.
    auto w_at = [&](double mu) {
        Vector w(nna);
        for (Eigen::Index i = 0; i < nna; ++i) {
            const double d = mu - lam(i);
            w(i) = d > 0 ? gam(i) / d : 0.0;
        }
        return w;
    };
    Vector w;
    double top_weight = 0.0;
    for (Eigen::Index i = 0; i < nna; ++i)
        if (lmax - lam(i) <= 1e-12 * scale)
            top_weight += gam(i) * gam(i);
    const Vector w_edge = w_at(lmax + 1e-300);
    if (top_weight <= 1e-24 * scale * scale && w_edge.norm() <= 1.0) {
        // Degenerate case: fill the top eigenspace to reach the sphere.
        w = w_edge;
        for (Eigen::Index i = 0; i < nna; ++i)
            if (lmax - lam(i) <= 1e-12 * scale) {
                w(i) = 0.0;
            }
        w(nna - 1) = std::sqrt(std::max(0.0, 1.0 - w.squaredNorm()));
    } else {
        double lo = lmax, hi = lmax + gam.norm() + 1e-300;
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            (w_at(mid).norm() > 1.0 ? lo : hi) = mid;
        }
        w = w_at(hi);
    }
    return base + w.dot(lam.asDiagonal() * w) + 2.0 * gam.dot(w);
}

enum class Fallback { none, shifted, nominal };

inline const char* to_string(Fallback f)
{
    switch (f) {
    case Fallback::none: return "none";
    case Fallback::shifted: return "shifted";
    case Fallback::nominal: return "nominal";
    }
    return "unknown";
}

/// Sequence (J, c) used as the shifted candidate of the previous solution.
struct Candidate {
    Vector J, c;
};

struct StepResult {
    bool feasible = false;          // the online problem was solved
    Fallback fallback = Fallback::none;
    bool guarantee_breach = false;  // a fallback was needed
    lmi::SolveStatus status = lmi::SolveStatus::numerical_failure;
    Vector u, c_star, J_star;
    double J_sum = 0.0;
    double V_bound = 0.0;
    double min_margin = 0.0;
    double solve_ms = 0.0;
    int iterations = 0;
    std::string message;

    [[nodiscard]] Vector c(int k, Eigen::Index nu) const { return c_star.segment(k * nu, nu); }
};

/// (J*_1, c*_1), ..., (J*_{N-1}, c*_{N-1}), (J*_{N-1}, 0).
inline Candidate shifted_candidate(const StepResult& prev, Eigen::Index nu)
{
    const Eigen::Index n = prev.J_star.size();
    Candidate out{Vector::Zero(n), Vector::Zero(n * nu)};
    for (Eigen::Index k = 0; k + 1 < n; ++k) {
        out.J(k) = prev.J_star(k + 1);
        out.c.segment(k * nu, nu) = prev.c_star.segment((k + 1) * nu, nu);
    }
    out.J(n - 1) = prev.J_star(n - 1);
    return out;
}

struct OnlineOptions {
    lmi::Tolerances tol = lmi::default_tolerances;
    bool fallback = true;
};

namespace detail {

inline void finish_step(const OnlineProblem& p, const ControllerBundle& b, StepResult& r, const Vector& c)
{
    r.c_star = c;
    r.J_star = p.tight_costs(c);
    r.J_sum = r.J_star.sum();
    r.min_margin = p.min_bound_margin(c);
    r.u = p.K * p.y + c.head(p.nu);
    r.V_bound = r.J_sum + max_state_weight(b.spec().rx, b.spec().s, p.y);
}

} // namespace detail

/// Solves the online problem; on failure falls back to the shifted candidate of `prev`
/// (when it satisfies every constraint) and then to c = 0.
inline StepResult solve_step(const ControllerBundle& b, const OnlineProblem& p, const StepResult* prev = nullptr,
                             const OnlineOptions& opt = {})
{
    const auto start = std::chrono::steady_clock::now();
    StepResult r;
    const lmi::LmiSolution sol = lmi::solve(p.lmi(), opt.tol);
    r.status = sol.status;
    r.iterations = sol.iterations;
    r.message = sol.message;
    if (sol.ok()) {
        r.feasible = true;
        detail::finish_step(p, b, r, sol.values.segment(p.horizon, p.num_c()));
    } else {
        if (!opt.fallback)
            throw Error(sol.status == lmi::SolveStatus::infeasible ? ErrorCode::infeasible : ErrorCode::numerical_failure,
                        "online problem: " + sol.message);
        r.guarantee_breach = true;
        std::optional<Vector> c;
        if (prev && prev->c_star.size() == p.num_c()) {
            const Candidate cand = shifted_candidate(*prev, p.nu);
            if (p.min_bound_margin(cand.c) >= -opt.tol.feas) {
                c = cand.c;
                r.fallback = Fallback::shifted;
            }
        }
        if (!c) {
            c = Vector::Zero(p.num_c());
            r.fallback = Fallback::nominal;
        }
        detail::finish_step(p, b, r, *c);
    }
    r.solve_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return r;
}

/// u = K y + c_0*.
inline Vector apply(const StepResult& r, const ControllerBundle& b, const Measurement& meas)
{
    return b.gain.K * meas.y + r.c_star.head(b.sys().nu());
}

/// Stateful receding-horizon controller: keeps u(t-1) and the previous solution.
class Controller {
public:
    explicit Controller(const ControllerBundle& bundle, OnlineOptions opt = {})
        : bundle_(bundle), opt_(opt), u_prev_(initial_u_prev(bundle.sys(), bundle.spec()))
    {
    }

    StepResult step(const Vector& y)
    {
        const Measurement meas{y, u_prev_, t_};
        problem_ = assemble(bundle_, meas);
        StepResult r = solve_step(bundle_, problem_, prev_ ? &*prev_ : nullptr, opt_);
        u_prev_ = apply(r, bundle_, meas);
        prev_ = r;
        ++t_;
        return r;
    }

    [[nodiscard]] const OnlineProblem& last_problem() const { return problem_; }
    [[nodiscard]] const Vector& u_prev() const { return u_prev_; }
    [[nodiscard]] int time() const { return t_; }

private:
    const ControllerBundle& bundle_;
    OnlineOptions opt_;
    Vector u_prev_;
    std::optional<StepResult> prev_;
    OnlineProblem problem_;
    int t_ = 0;
};

namespace detail {

/// 0.5 z'Az + b'z + d.
struct Quadratic {
    Matrix a;
    Vector b;
    double d = 0.0;

    [[nodiscard]] double value(const Vector& z) const { return 0.5 * z.dot(a * z) + b.dot(z) + d; }
    [[nodiscard]] Vector grad(const Vector& z) const { return a * z + b; }
};

/// Log-barrier Newton method for min f(z) s.t. g_j(z) <= 0 from a strictly feasible z.
inline Vector barrier_minimize(const Quadratic& f, const std::vector<Quadratic>& g, Vector z, double gap = 1e-11)
{
    const Eigen::Index n = z.size();
    const double m = static_cast<double>(g.size());
    auto phi = [&](const Vector& x, double t) {
        double v = t * f.value(x);
        for (const auto& gj : g) {
            const double s = -gj.value(x);
            if (s <= 0)
                return std::numeric_limits<double>::infinity();
            v -= std::log(s);
        }
        return v;
    };
    for (double t = 1.0;; t *= 20.0) {
        for (int it = 0; it < 200; ++it) {
            Vector grad = t * f.grad(z);
            Matrix hess = t * f.a;
            for (const auto& gj : g) {
                const double s = -gj.value(z);
                const Vector dg = gj.grad(z);
                grad += dg / s;
                hess += gj.a / s + dg * dg.transpose() / (s * s);
            }
            hess += 1e-14 * (1.0 + hess.norm()) * Matrix::Identity(n, n);
            const Vector step = -hess.ldlt().solve(grad);
            const double decrement = -grad.dot(step);
            if (decrement < 1e-18)
                break;
            double alpha = 1.0;
            const double base = phi(z, t);
            while (alpha > 1e-16 && !(phi(z + alpha * step, t) <= base - 0.25 * alpha * decrement))
                alpha *= 0.5;
            if (alpha <= 1e-16)
                break;
            z += alpha * step;
        }
        if (m == 0 || m / t < gap * (1.0 + std::abs(f.value(z))))
            return z;
    }
}

inline Quadratic residual_quadratic(const OnlineConstraint& con)
{
    return {2.0 * con.rc.transpose() * con.rc, 2.0 * con.rc.transpose() * con.r0, con.r0.squaredNorm()};
}

} // namespace detail

/// Result of the quadratically constrained reformulation.
struct QcqpResult {
    Vector c, J;
    double J_sum = 0.0;
};

/// Solves min sum_k (offset_k + ||r_k(c)||^2) s.t. ||r_j(c)||^2 <= bound_j - offset_j directly in c
/// (interior-point barrier with a phase-one start). nullopt when no strictly feasible c exists.
inline std::optional<QcqpResult> solve_qcqp(const OnlineProblem& p)
{
    const Eigen::Index n = p.num_c();
    detail::Quadratic obj{Matrix::Zero(n, n), Vector::Zero(n), 0.0};
    std::vector<detail::Quadratic> cons;
    for (const auto& con : p.constraints) {
        detail::Quadratic q = detail::residual_quadratic(con);
        if (con.j_index >= 0) {
            obj.a += q.a;
            obj.b += q.b;
            obj.d += q.d + con.offset;
        } else {
            q.d -= con.bound - con.offset;
            cons.push_back(std::move(q));
        }
    }

    Vector c = Vector::Zero(n);
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& g : cons)
        worst = std::max(worst, g.value(c));
    if (worst >= 0) {
        // Phase one in (c, s): minimize s s.t. g_j(c) <= s, s >= worst0 - 1 - |worst0|.
        detail::Quadratic f1{Matrix::Zero(n + 1, n + 1), Vector::Zero(n + 1), 0.0};
        f1.b(n) = 1.0;
        std::vector<detail::Quadratic> g1;
        for (const auto& g : cons) {
            detail::Quadratic q{Matrix::Zero(n + 1, n + 1), Vector::Zero(n + 1), g.d};
            q.a.topLeftCorner(n, n) = g.a;
            q.b.head(n) = g.b;
            q.b(n) = -1.0;
            g1.push_back(std::move(q));
        }
        detail::Quadratic floor{Matrix::Zero(n + 1, n + 1), Vector::Zero(n + 1), -1.0 - 2.0 * std::abs(worst)};
        floor.b(n) = -1.0;
        g1.push_back(floor);
        Vector z = Vector::Zero(n + 1);
        z(n) = worst + 1.0;
        z = detail::barrier_minimize(f1, g1, z, 1e-9);
        if (z(n) >= 0)
            return std::nullopt;
        c = z.head(n);
    }
    c = detail::barrier_minimize(obj, cons, c);
    QcqpResult r;
    r.c = c;
    r.J = p.tight_costs(c);
    r.J_sum = r.J.sum();
    return r;
}

} // namespace ofmpc
