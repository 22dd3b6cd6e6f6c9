#pragma once

#include <algorithm>
#include <cmath>
#include <future>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "ofmpc/sim.hpp"

namespace ofmpc {

struct VerifyTolerances {
    double feas = 1e-8;        // constraint and witness violations
    double decrease = 1e-6;    // Lyapunov decrease slack
    double final_norm = 1e-3;  // ||x|| at the end of a rollout
};

struct RpiReport {
    int samples = 0;
    double max_violation = -std::numeric_limits<double>::infinity();  // max of x+' P x+ - rho
    bool passed = false;
};

namespace detail {

inline Vector unit_direction(std::mt19937_64& rng, Eigen::Index n)
{
    std::normal_distribution<double> nd;
    for (;;) {
        Vector d(n);
        for (Eigen::Index i = 0; i < n; ++i)
            d(i) = nd(rng);
        if (d.norm() > 0)
            return d / d.norm();
    }
}

/// Uniform point of the ellipsoid {x' P x <= rho}; on its boundary when `boundary` is set.
inline Vector sample_ellipsoid(std::mt19937_64& rng, const Matrix& P, double rho, bool boundary)
{
    const Eigen::Index n = P.rows();
    const Eigen::LLT<Matrix> llt(P);
    double radius = 1.0;
    if (!boundary)
        radius = std::pow(std::uniform_real_distribution<double>(0.0, 1.0)(rng), 1.0 / static_cast<double>(n));
    const Vector w = std::sqrt(rho) * radius * unit_direction(rng, n);
    return llt.matrixU().solve(w);
}

} // namespace detail

/// Samples x on the boundary and in the interior of {x' P x <= rho_scale * rho} with ||p|| <= ||C_K x||
/// (half of them on the sphere of admissible p) and records x+' P x+ - rho_scale * rho for x+ = Phi_K x + B_p p.
inline RpiReport verify_rpi(const ControllerBundle& b, int samples, std::uint64_t seed, double rho_scale = 1.0,
                            double tol = 1e-8)
{
    const auto& sys = b.sys();
    const ClosedLoop cl = closed_loop(sys, b.gain.K);
    const Matrix& P = b.rpi.P;
    const double rho = rho_scale * b.rpi.rho;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    RpiReport r;
    r.samples = samples;
    for (int i = 0; i < samples; ++i) {
        const Vector x = detail::sample_ellipsoid(rng, P, rho, i % 2 == 0);
        const double bound = (cl.c_k * x).norm();
        const double scale = i % 4 < 2 ? 1.0 : unit(rng);
        const Vector p = bound * scale * detail::unit_direction(rng, sys.np());
        const Vector xp = cl.phi_k * x + sys.bp * p;
        r.max_violation = std::max(r.max_violation, xp.dot(P * xp) - rho);
    }
    r.passed = samples > 0 && r.max_violation <= tol;
    return r;
}

struct PropertyCheck {
    std::string name;
    bool passed = true;
    double worst = 0.0;  // most adverse value of the checked quantity
    std::string detail;
};

struct ClosedLoopReport {
    PropertyCheck feasibility{"recursive feasibility"}, decrease{"cost decrease"}, constraints{"constraints"},
        convergence{"convergence"};
    int trajectories = 0;

    [[nodiscard]] bool passed() const
    {
        return feasibility.passed && decrease.passed && constraints.passed && convergence.passed;
    }
    [[nodiscard]] std::vector<const PropertyCheck*> checks() const
    {
        return {&feasibility, &decrease, &constraints, &convergence};
    }
};

/// Closed-loop checks over trajectories:
/// (a) a feasible step is followed by a feasible step whose problem the shifted candidate satisfies,
/// (b) J_sum(t+1) <= J_sum(t) - c0' R_u c0 - x' R_x x,
/// (c) input, rate, output and (for runs starting in D(S)) D(S) membership at every step,
/// (d) ||x|| below the threshold at the end of every run.
inline ClosedLoopReport verify_closed_loop(const std::vector<Trajectory>& trajectories, const VerifyTolerances& tol = {})
{
    ClosedLoopReport rep;
    rep.trajectories = static_cast<int>(trajectories.size());
    rep.feasibility.worst = std::numeric_limits<double>::infinity();
    rep.decrease.worst = -std::numeric_limits<double>::infinity();
    rep.constraints.worst = -std::numeric_limits<double>::infinity();
    rep.convergence.worst = 0.0;
    auto note = [](PropertyCheck& c, const std::string& what) {
        if (c.detail.empty())
            c.detail = what;
        c.passed = false;
    };
    if (trajectories.empty()) {
        for (PropertyCheck* c : {&rep.feasibility, &rep.decrease, &rep.constraints, &rep.convergence})
            note(*c, "no trajectories");
        return rep;
    }
    for (size_t i = 0; i < trajectories.size(); ++i) {
        const Trajectory& tr = trajectories[i];
        const std::string run = "run " + std::to_string(i);
        for (size_t t = 0; t < tr.records.size(); ++t) {
            const StepRecord& r = tr.records[t];
            if (t > 0 && tr.records[t - 1].feasible) {
                if (!r.feasible)
                    note(rep.feasibility, run + " t=" + std::to_string(r.t) + ": infeasible after a feasible step");
                if (!std::isnan(r.witness_margin)) {
                    rep.feasibility.worst = std::min(rep.feasibility.worst, r.witness_margin);
                    if (r.witness_margin < -tol.feas)
                        note(rep.feasibility, run + " t=" + std::to_string(r.t) + ": shifted candidate violates " +
                                                  r.witness_worst + " by " + detail::fmt17(-r.witness_margin));
                }
            }
            if (!std::isnan(r.decrease_excess)) {
                rep.decrease.worst = std::max(rep.decrease.worst, r.decrease_excess);
                if (r.decrease_excess > tol.decrease)
                    note(rep.decrease, run + " t=" + std::to_string(r.t) + ": cost exceeds the decrease bound by " +
                                           detail::fmt17(r.decrease_excess));
            }
            const double v = tr.started_in_ds ? r.max_violation()
                                              : std::max({r.input_excess, r.rate_excess, r.output_excess});
            rep.constraints.worst = std::max(rep.constraints.worst, v);
            if (v > tol.feas)
                note(rep.constraints, run + " t=" + std::to_string(r.t) + ": violation " + detail::fmt17(v));
        }
        rep.convergence.worst = std::max(rep.convergence.worst, tr.final_norm);
        if (!(tr.final_norm < tol.final_norm))
            note(rep.convergence, run + ": final norm " + detail::fmt17(tr.final_norm));
    }
    if (!std::isfinite(rep.feasibility.worst))
        rep.feasibility.worst = 0.0;
    if (!std::isfinite(rep.decrease.worst))
        rep.decrease.worst = 0.0;
    return rep;
}

/// Initial states uniform over {x' P x <= rho} intersected with D(S) whose online problem is feasible at t = 0.
inline std::vector<Vector> sample_initial_states(const ControllerBundle& b, int count, std::uint64_t seed,
                                                 int max_draws = 1000000)
{
    const auto& sys = b.sys();
    const auto& spec = b.spec();
    std::mt19937_64 rng(seed);
    std::vector<Vector> out;
    for (int draw = 0; draw < max_draws && static_cast<int>(out.size()) < count; ++draw) {
        const Vector x = detail::sample_ellipsoid(rng, b.rpi.P, b.rpi.rho, false);
        if (!ds_contains(spec, x))
            continue;
        const Measurement meas{sys.c * x, initial_u_prev(sys, spec), 0};
        OnlineOptions opt;
        opt.fallback = false;
        try {
            if (solve_step(b, assemble(b, meas), nullptr, opt).feasible)
                out.push_back(x);
        } catch (const Error&) {
        }
    }
    if (static_cast<int>(out.size()) < count)
        throw Error(ErrorCode::infeasible, "could not sample enough feasible initial states");
    return out;
}

struct CampaignOptions {
    int rollouts = 50;
    int steps = 200;
    std::uint64_t seed = 1;
    std::vector<PolicyMode> policies{PolicyMode::random_contraction, PolicyMode::worst_case_sign};
    unsigned threads = 0;  // 0: hardware concurrency
};

/// Independent rollouts from sampled initial states, cycling through the policies; run i uses seed + i.
inline std::vector<Trajectory> run_campaign(const ControllerBundle& b, const CampaignOptions& opt = {})
{
    if (opt.policies.empty())
        throw Error(ErrorCode::invalid_input, "campaign needs at least one policy");
    const std::vector<Vector> x0 = sample_initial_states(b, opt.rollouts, opt.seed);
    std::vector<Trajectory> out(opt.rollouts);
    const unsigned threads = std::max(1u, opt.threads ? opt.threads : std::thread::hardware_concurrency());
    std::vector<std::future<void>> jobs;
    for (unsigned w = 0; w < threads; ++w)
        jobs.push_back(std::async(std::launch::async, [&, w] {
            for (int i = static_cast<int>(w); i < opt.rollouts; i += static_cast<int>(threads)) {
                const UncertaintyPolicy policy{opt.policies[i % opt.policies.size()], opt.seed + i, {}};
                out[i] = run_closed_loop(b, x0[i], opt.steps, policy);
            }
        }));
    for (auto& j : jobs)
        j.get();
    return out;
}

} // namespace ofmpc
