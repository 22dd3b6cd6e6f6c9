#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "ofmpc/online.hpp"

namespace ofmpc {

inline double spectral_norm(const Matrix& m)
{
    if (m.size() == 0)
        return 0.0;
    return Eigen::JacobiSVD<Matrix>(m).singularValues()(0);
}

enum class PolicyMode { zero, random_contraction, worst_case_sign, constant_matrix };

inline const char* to_string(PolicyMode m)
{
    switch (m) {
    case PolicyMode::zero: return "zero";
    case PolicyMode::random_contraction: return "random_contraction";
    case PolicyMode::worst_case_sign: return "worst_case_sign";
    case PolicyMode::constant_matrix: return "constant_matrix";
    }
    return "unknown";
}

inline PolicyMode parse_policy_mode(const std::string& s)
{
    for (PolicyMode m : {PolicyMode::zero, PolicyMode::random_contraction, PolicyMode::worst_case_sign,
                         PolicyMode::constant_matrix})
        if (s == to_string(m))
            return m;
    throw Error(ErrorCode::invalid_input, "unknown uncertainty policy '" + s + "'");
}

/// How the simulator realizes Delta(t), always with spectral norm at most one.
struct UncertaintyPolicy {
    PolicyMode mode = PolicyMode::zero;
    std::uint64_t seed = 0;
    Matrix delta;  // constant_matrix only
};

/// Per-run source of Delta(t); random draws come from one mt19937_64 seeded by the policy.
class UncertaintySource {
public:
    UncertaintySource(const UncertaintyPolicy& policy, const UncertainSystem& sys, const Matrix& P)
        : policy_(policy), sys_(sys), P_(P), rng_(policy.seed)
    {
        const Eigen::Index np = sys.np(), nq = sys.cq.rows();
        if (policy.mode == PolicyMode::constant_matrix) {
            if (policy.delta.rows() != np || policy.delta.cols() != nq)
                throw Error(ErrorCode::dimension_mismatch, "constant uncertainty must be n_p x n_q");
            if (!policy.delta.allFinite() || spectral_norm(policy.delta) > 1.0 + 1e-12)
                throw Error(ErrorCode::invalid_input, "constant uncertainty must have spectral norm at most one");
        }
    }

    /// Delta for the current step, given the state, the applied input and q.
    Matrix draw(const Vector& x, const Vector& u, const Vector& q)
    {
        const Eigen::Index np = sys_.np(), nq = sys_.cq.rows();
        switch (policy_.mode) {
        case PolicyMode::zero: return Matrix::Zero(np, nq);
        case PolicyMode::constant_matrix: return policy_.delta;
        case PolicyMode::random_contraction: {
            const double s = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
            return s * random_orthogonal(np) * Matrix::Identity(np, nq) * random_orthogonal(nq).transpose();
        }
        case PolicyMode::worst_case_sign: {
            // p = ||q|| d / ||d|| maximizes the cross term 2 p' B_p' P (Phi x + G u).
            const Vector d = sys_.bp.transpose() * P_ * (sys_.phi * x + sys_.g * u);
            const double dn = d.norm(), qn = q.norm();
            if (dn == 0.0 || qn == 0.0)
                return Matrix::Zero(np, nq);
            return (d / dn) * (q / qn).transpose();
        }
        }
        return Matrix::Zero(np, nq);
    }

private:
    Matrix random_orthogonal(Eigen::Index n)
    {
        std::normal_distribution<double> nd;
        Matrix a(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j)
                a(i, j) = nd(rng_);
        Eigen::HouseholderQR<Matrix> qr(a);
        Matrix q = qr.householderQ();
        const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
        for (Eigen::Index i = 0; i < n; ++i)
            if (r(i, i) < 0)
                q.col(i) = -q.col(i);
        return q;
    }

    UncertaintyPolicy policy_;
    const UncertainSystem& sys_;
    Matrix P_;
    std::mt19937_64 rng_;
};

struct PlantStep {
    Vector x_next, p, q;
};

/// q = C_q x + D_q u, p = Delta q, x+ = Phi x + G u + B_p p.
inline PlantStep step_plant(const UncertainSystem& sys, const Vector& x, const Vector& u, const Matrix& delta)
{
    PlantStep s;
    s.q = sys.cq * x + sys.dq * u;
    s.p = delta * s.q;
    s.x_next = sys.phi * x + sys.g * u + sys.bp * s.p;
    return s;
}

struct StepRecord {
    int t = 0;
    Vector x, u, c_star, J_star, p, q;
    double du_norm = 0.0, y_norm = 0.0, J_sum = 0.0, V_bound = 0.0, solve_ms = 0.0;
    bool feasible = false;
    Fallback fallback = Fallback::none;
    std::vector<double> margins;  // online constraint margins at the applied solution
    // Physical constraint violations (positive means violated).
    double input_excess = 0.0, rate_excess = 0.0, output_excess = 0.0, ds_excess = 0.0;
    // Shifted candidate of step t-1 evaluated at step t (NaN at t = 0 or after an infeasible step).
    double witness_margin = std::numeric_limits<double>::quiet_NaN();
    double witness_bound_margin = std::numeric_limits<double>::quiet_NaN();
    std::string witness_worst;
    // J_sum(t) - [J_sum(t-1) - c0' R_u c0 - x' R_x x](t-1); NaN at t = 0.
    double decrease_excess = std::numeric_limits<double>::quiet_NaN();

    [[nodiscard]] double max_violation() const
    {
        return std::max({input_excess, rate_excess, output_excess, ds_excess});
    }
};

struct Trajectory {
    std::vector<StepRecord> records;
    Vector x_final;
    int steps = 0;
    double max_violation = 0.0;
    double final_norm = 0.0;
    bool started_in_ds = false;
};

/// Closed loop: the controller sees y = C x and its own u(t-1) only.
inline Trajectory run_closed_loop(const ControllerBundle& b, const Vector& x0, int steps,
                                  const UncertaintyPolicy& policy, const OnlineOptions& opt = {})
{
    const auto& sys = b.sys();
    const auto& spec = b.spec();
    if (x0.size() != sys.nx() || !x0.allFinite())
        throw Error(ErrorCode::dimension_mismatch, "initial state must be a finite n_x vector");
    if (steps < 0)
        throw Error(ErrorCode::invalid_input, "step count must be nonnegative");
    UncertaintySource source(policy, sys, b.rpi.P);
    const Eigen::Index nu = sys.nu();

    Trajectory tr;
    tr.started_in_ds = ds_contains(spec, x0);
    Vector x = x0;
    Vector u_prev = initial_u_prev(sys, spec);
    std::optional<StepResult> prev;
    double prev_target = 0.0;
    for (int t = 0; t < steps; ++t) {
        const Measurement meas{sys.c * x, u_prev, t};
        const OnlineProblem problem = assemble(b, meas);
        StepResult r = solve_step(b, problem, prev ? &*prev : nullptr, opt);
        const Vector u = apply(r, b, meas);

        StepRecord rec;
        rec.t = t;
        rec.x = x;
        rec.u = u;
        rec.c_star = r.c_star;
        rec.J_star = r.J_star;
        rec.du_norm = (u - u_prev).norm();
        rec.y_norm = meas.y.norm();
        rec.J_sum = r.J_sum;
        rec.V_bound = r.V_bound;
        rec.solve_ms = r.solve_ms;
        rec.feasible = r.feasible;
        rec.fallback = r.fallback;
        for (const auto& con : problem.constraints)
            rec.margins.push_back(con.margin(r.J_star, r.c_star));
        rec.input_excess = u.norm() - spec.u_max;
        rec.rate_excess = rec.du_norm - spec.du_max;
        rec.output_excess = rec.y_norm - spec.x_max;
        const Vector xna = x.tail(sys.nna());
        rec.ds_excess = xna.dot(spec.s * xna) - 1.0;

        if (prev && prev->feasible) {
            const Candidate cand = shifted_candidate(*prev, nu);
            rec.witness_margin = std::numeric_limits<double>::infinity();
            for (const auto& con : problem.constraints) {
                const double m = con.margin(cand.J, cand.c);
                if (m < rec.witness_margin) {
                    rec.witness_margin = m;
                    rec.witness_worst = con.label;
                }
            }
            rec.witness_bound_margin = problem.min_bound_margin(cand.c);
            if (r.feasible)
                rec.decrease_excess = r.J_sum - prev_target;
        }

        const Matrix delta = source.draw(x, u, sys.cq * x + sys.dq * u);
        const PlantStep ps = step_plant(sys, x, u, delta);
        rec.p = ps.p;
        rec.q = ps.q;
        tr.max_violation = std::max(tr.max_violation, rec.max_violation());

        const Vector c0 = r.c_star.head(nu);
        prev_target = r.J_sum - c0.dot(spec.ru * c0) - x.dot(spec.rx * x);
        tr.records.push_back(std::move(rec));
        x = ps.x_next;
        u_prev = u;
        prev = std::move(r);
    }
    tr.steps = steps;
    tr.x_final = x;
    tr.final_norm = x.norm();
    return tr;
}

namespace detail {

inline std::string fmt17(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace detail

/// CSV with columns t, x_1..x_nx, u_1..u_nu, du_norm, y_norm, J_sum, feasible, solve_ms.
inline void write_csv(const Trajectory& tr, std::ostream& out)
{
    using detail::fmt17;
    const Eigen::Index nx = tr.records.empty() ? tr.x_final.size() : tr.records.front().x.size();
    const Eigen::Index nu = tr.records.empty() ? 0 : tr.records.front().u.size();
    out << "t";
    for (Eigen::Index i = 1; i <= nx; ++i)
        out << ",x_" << i;
    for (Eigen::Index i = 1; i <= nu; ++i)
        out << ",u_" << i;
    out << ",du_norm,y_norm,J_sum,feasible,solve_ms\n";
    for (const auto& r : tr.records) {
        out << r.t;
        for (Eigen::Index i = 0; i < nx; ++i)
            out << ',' << fmt17(r.x(i));
        for (Eigen::Index i = 0; i < nu; ++i)
            out << ',' << fmt17(r.u(i));
        out << ',' << fmt17(r.du_norm) << ',' << fmt17(r.y_norm) << ',' << fmt17(r.J_sum) << ','
            << (r.feasible ? 1 : 0) << ',' << fmt17(r.solve_ms) << '\n';
    }
}

} // namespace ofmpc
