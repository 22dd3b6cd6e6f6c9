#pragma once

#include <array>
#include <cstdio>
#include <future>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "ofmpc/lmi/gevp.hpp"
#include "ofmpc/prediction.hpp"

namespace ofmpc {

struct MultiplierOptions {
    // Upper bound on the D(S) multiplier of the cost family (its objective has no scalar cap).
    double cost_offset_cap = 10.0;
    // Second-stage slack: among near-optimal multipliers pick the smallest sum.
    double lexicographic_slack = 1e-6;
    // Lower bounds linking index k to index k-1 within each family.
    bool monotonicity = true;
    lmi::Tolerances tol = lmi::default_tolerances;
};

inline constexpr std::array<Family, 6> all_families{Family::cost,   Family::terminal, Family::input,
                                                    Family::rate,   Family::output,   Family::nonmeas};

/// Multipliers per family and horizon index. Each vector holds the stage multipliers
/// followed by the D(S) multiplier (the last entry). Layout:
/// tau[k], k = 0..N-1 (k+2 entries); tau_n (N+1 entries);
/// alpha[k], beta[k], k = 0..N-1 (k+1 entries, k = 0 is the unused zero of the direct first-step constraints);
/// theta[k], eta[k], k = 1..N (k+1 entries, slot 0 empty).
struct MultiplierTable {
    int horizon = 0;
    std::vector<Vector> tau, alpha, beta, theta, eta;
    Vector tau_n;

    [[nodiscard]] const Vector& of(Family f, int k) const
    {
        switch (f) {
        case Family::cost: return tau.at(k);
        case Family::input: return alpha.at(k);
        case Family::rate: return beta.at(k);
        case Family::output: return theta.at(k);
        case Family::nonmeas: return eta.at(k);
        case Family::terminal: return tau_n;
        }
        throw Error(ErrorCode::invalid_input, "unknown family");
    }
    Vector& of(Family f, int k) { return const_cast<Vector&>(std::as_const(*this).of(f, k)); }

    /// The D(S) multiplier, which enters the online constraint as a constant offset.
    [[nodiscard]] double offset(Family f, int k) const
    {
        const Vector& v = of(f, k);
        return v(v.size() - 1);
    }
};

/// Cholesky factors R (R^T R = E + sum tau N + A^T X^{-1} A) laid out like the multiplier table:
/// L[k] cost, LN terminal, U[k] input and V[k] rate (k = 1..N-1), T[k] output and W[k] nonmeas (k = 1..N).
struct FactorTable {
    int horizon = 0;
    std::vector<Matrix> L, U, V, T, W;
    Matrix LN;

    [[nodiscard]] const Matrix& of(Family f, int k) const
    {
        switch (f) {
        case Family::cost: return L.at(k);
        case Family::input: return U.at(k);
        case Family::rate: return V.at(k);
        case Family::output: return T.at(k);
        case Family::nonmeas: return W.at(k);
        case Family::terminal: return LN;
        }
        throw Error(ErrorCode::invalid_input, "unknown family");
    }
    Matrix& of(Family f, int k) { return const_cast<Matrix&>(std::as_const(*this).of(f, k)); }
};

/// Indices k at which a family has an S-procedure constraint.
inline std::vector<int> family_indices(Family f, int horizon)
{
    if (f == Family::terminal)
        return {horizon};
    std::vector<int> out;
    for (int k = family_first(f); k <= family_last(f, horizon); ++k)
        out.push_back(k);
    return out;
}

/// Scalar bound the family's online constraint is compared against; nullopt for the cost family.
inline std::optional<double> family_cap(Family f, const SynthesisSpec& spec, double rho)
{
    switch (f) {
    case Family::cost: return std::nullopt;
    case Family::input: return spec.u_max * spec.u_max;
    case Family::rate: return spec.du_max * spec.du_max;
    case Family::output: return spec.x_max * spec.x_max;
    case Family::nonmeas: return 1.0;
    case Family::terminal: return rho;
    }
    return std::nullopt;
}

/// GEVP of one block set: minimize lambda_max(E + sum tau_i N_i + A^T X^{-1} A) with
/// A = D + sum tau_i M_i, X = -F - sum tau_i Z_i - tau_S S_bar; with a cap the objective is the
/// ratio over (cap - tau_S).
inline lmi::GevpProblem multiplier_gevp(const QuadBlockSet& b, const Vector& lower, std::optional<double> cap,
                                        double s_upper, std::optional<double> slack)
{
    const int m = b.num_multipliers();
    if (lower.size() != m)
        throw Error(ErrorCode::dimension_mismatch, "multiplier_gevp: lower bound vector has the wrong length");
    lmi::GevpProblem p;
    p.e0 = b.E;
    p.a0 = b.D;
    p.x0 = -b.F;
    for (int i = 0; i < b.stages; ++i) {
        p.e_terms.push_back(b.N[i]);
        p.a_terms.push_back(b.M[i]);
        p.x_terms.push_back(-b.Z[i]);
    }
    p.e_terms.push_back(Matrix::Zero(b.nv(), b.nv()));
    p.a_terms.push_back(Matrix::Zero(b.nw(), b.nv()));
    p.x_terms.push_back(-b.S_bar);
    p.lower = lower;
    p.upper = Vector::Constant(m, std::numeric_limits<double>::infinity());
    p.upper(m - 1) = s_upper;
    if (cap)
        p.cap = lmi::GevpProblem::Cap{m - 1, *cap};
    p.lexicographic_slack = slack;
    p.label = std::string(to_string(b.family)) + "[" + std::to_string(b.k) + "]";
    return p;
}

namespace detail {

inline std::string format_vector(const Vector& v)
{
    std::string out = "[";
    char buf[32];
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%s%.6g", i ? ", " : "", v(i));
        out += buf;
    }
    return out + "]";
}

} // namespace detail

/// Solves the family's GEVPs in increasing k. With monotonicity, entry h of index k is bounded
/// below by entry h-1 of index k-1. Returns vectors laid out as in MultiplierTable.
inline std::vector<Vector> solve_family(Family f, const BlockCatalog& cat, const SynthesisSpec& spec, double rho,
                                        const MultiplierOptions& opt = {})
{
    const int n = cat.horizon;
    const std::optional<double> cap = family_cap(f, spec, rho);
    const double s_upper = cap ? std::numeric_limits<double>::infinity() : opt.cost_offset_cap;

    std::vector<Vector> out;
    if (f == Family::input || f == Family::rate)
        out.push_back(Vector::Zero(1));
    else if (f == Family::output || f == Family::nonmeas)
        out.emplace_back();

    std::optional<Vector> prior;
    if (f == Family::input || f == Family::rate)
        prior = out.back();
    for (int k : family_indices(f, n)) {
        const QuadBlockSet& b = cat.get(f, k);
        const int m = b.num_multipliers();
        Vector lower = Vector::Zero(m);
        if (opt.monotonicity && prior && prior->size() == m - 1)
            lower.tail(m - 1) = *prior;
        const lmi::GevpProblem p = multiplier_gevp(b, lower, cap, s_upper, opt.lexicographic_slack);
        try {
            out.push_back(lmi::solve_min_max_eig(p, opt.tol).tau);
        } catch (const Error& e) {
            throw Error(e.code(), std::string(to_string(f)) + " multipliers infeasible at k = " + std::to_string(k) +
                                      " (lower bounds " + detail::format_vector(lower) + "): " + e.what());
        }
        if (f != Family::terminal)
            prior = out.back();
    }
    return out;
}

/// Every family, solved concurrently (families are independent).
inline MultiplierTable solve_multipliers(const BlockCatalog& cat, const SynthesisSpec& spec, double rho,
                                         const MultiplierOptions& opt = {})
{
    std::vector<std::future<std::vector<Vector>>> jobs;
    for (Family f : all_families)
        jobs.push_back(std::async(std::launch::async, [&, f] { return solve_family(f, cat, spec, rho, opt); }));
    std::vector<std::vector<Vector>> results;
    for (auto& j : jobs)
        results.push_back(j.get());

    MultiplierTable t;
    t.horizon = cat.horizon;
    t.tau = std::move(results[0]);
    t.tau_n = results[1].front();
    t.alpha = std::move(results[2]);
    t.beta = std::move(results[3]);
    t.theta = std::move(results[4]);
    t.eta = std::move(results[5]);
    return t;
}

/// Chain bounds that fail by more than tol, as readable messages.
inline std::vector<std::string> monotonicity_violations(const MultiplierTable& t, double tol = 0.0)
{
    std::vector<std::string> out;
    for (Family f : all_families) {
        if (f == Family::terminal)
            continue;
        const int start = (f == Family::output || f == Family::nonmeas) ? 2 : 1;
        for (int k = start; k <= family_last(f, t.horizon); ++k) {
            const Vector& cur = t.of(f, k);
            const Vector& prev = t.of(f, k - 1);
            for (Eigen::Index h = 1; h < cur.size(); ++h)
                if (cur(h) < prev(h - 1) - tol)
                    out.push_back(std::string(to_string(f)) + "[" + std::to_string(k) + "][" + std::to_string(h) +
                                  "] below its predecessor");
        }
    }
    return out;
}

/// Entries that are negative or leave no margin to their family cap.
inline std::vector<std::string> table_violations(const MultiplierTable& t, const SynthesisSpec& spec, double rho,
                                                 double margin = 0.0)
{
    std::vector<std::string> out;
    for (Family f : all_families)
        for (int k : family_indices(f, t.horizon)) {
            const Vector& v = t.of(f, k);
            const std::string name = std::string(to_string(f)) + "[" + std::to_string(k) + "]";
            if (v.size() > 0 && v.minCoeff() < 0)
                out.push_back(name + " has a negative multiplier");
            const auto cap = family_cap(f, spec, rho);
            if (cap && !(*cap - v(v.size() - 1) > margin))
                out.push_back(name + " leaves no margin to its cap");
        }
    return out;
}

/// E + sum tau N + A^T X^{-1} A at the stored multipliers; throws not_psd when X is not positive definite.
inline Matrix lifted_matrix(const QuadBlockSet& b, const Vector& tau)
{
    const lmi::GevpProblem p =
        multiplier_gevp(b, Vector::Zero(b.num_multipliers()), std::nullopt,
                        std::numeric_limits<double>::infinity(), std::nullopt);
    const auto l = p.lifted_matrix(tau);
    if (!l)
        throw Error(ErrorCode::not_psd, "lifted matrix of " + p.label + ": X(tau) is not positive definite");
    return *l;
}

inline FactorTable compute_factors(const MultiplierTable& t, const BlockCatalog& cat,
                                   const lmi::Tolerances& tol = lmi::default_tolerances)
{
    FactorTable out;
    out.horizon = t.horizon;
    out.L.resize(t.horizon);
    out.U.resize(t.horizon);
    out.V.resize(t.horizon);
    out.T.resize(t.horizon + 1);
    out.W.resize(t.horizon + 1);
    for (Family f : all_families)
        for (int k : family_indices(f, t.horizon)) {
            const Matrix l = lifted_matrix(cat.get(f, k), t.of(f, k));
            out.of(f, k) = lmi::cholesky_psd(lmi::SymBlock(l), tol.chol).factor;
        }
    return out;
}

} // namespace ofmpc
