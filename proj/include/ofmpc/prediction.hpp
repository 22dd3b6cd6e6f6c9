#pragma once

#include <string>
#include <vector>

#include "ofmpc/model.hpp"

namespace ofmpc {

/// Constraint families of the online problem.
enum class Family { cost, input, rate, output, nonmeas, terminal };

inline const char* to_string(Family f)
{
    switch (f) {
    case Family::cost: return "cost";
    case Family::input: return "input";
    case Family::rate: return "rate";
    case Family::output: return "output";
    case Family::nonmeas: return "nonmeas";
    case Family::terminal: return "terminal";
    }
    return "unknown";
}

/// Closed-loop matrices under u = K y + c: Phi_K = Phi + G K C and C_K = C_q + D_q K C.
struct Predictor {
    Matrix phi_k, c_k, kc;
    Eigen::Index nx = 0, ny = 0, nu = 0, np = 0;

    Predictor(const UncertainSystem& sys, const Matrix& K)
    {
        if (K.rows() != sys.nu() || K.cols() != sys.ny())
            throw Error(ErrorCode::dimension_mismatch, "gain must be n_u x n_y");
        kc = K * sys.c;
        phi_k = sys.phi + sys.g * kc;
        c_k = sys.cq + sys.dq * kc;
        nx = sys.nx();
        ny = sys.ny();
        nu = sys.nu();
        np = sys.np();
    }
};

/// x_hat_k = Phi_bar x + G_bar [c_0; ...; c_{k-1}] + B_bar [p_0; ...; p_{k-1}].
/// Block j of G_bar is Phi_K^{k-1-j} G (likewise B_bar with B_p); k = 0 gives empty G_bar, B_bar.
struct StackedPrediction {
    int k = 0;
    Eigen::Index ny = 0;
    Matrix phi_bar, g_bar, b_bar;

    [[nodiscard]] Matrix phi_bar_a() const { return phi_bar.leftCols(ny); }
    [[nodiscard]] Matrix phi_bar_na() const { return phi_bar.rightCols(phi_bar.cols() - ny); }
};

inline StackedPrediction build_stacked(const UncertainSystem& sys, const Matrix& K, int k)
{
    if (k < 0)
        throw Error(ErrorCode::invalid_input, "build_stacked: k must be nonnegative");
    const Predictor pr(sys, K);
    StackedPrediction out;
    out.k = k;
    out.ny = pr.ny;
    out.phi_bar = Matrix::Identity(pr.nx, pr.nx);
    out.g_bar = Matrix::Zero(pr.nx, k * pr.nu);
    out.b_bar = Matrix::Zero(pr.nx, k * pr.np);
    // Fill from the most recent block backwards: block k-1 is G, block k-2 is Phi_K G, ...
    for (int j = k - 1; j >= 0; --j) {
        out.g_bar.middleCols(j * pr.nu, pr.nu) = out.phi_bar * sys.g;
        out.b_bar.middleCols(j * pr.np, pr.np) = out.phi_bar * sys.bp;
        out.phi_bar = pr.phi_k * out.phi_bar;
    }
    return out;
}

/// z = ax x + ac [c_0; ...] + ap [p_0; ...].
struct LinearMap {
    Matrix ax, ac, ap;

    LinearMap& operator+=(const LinearMap& o)
    {
        ax += o.ax;
        ac += o.ac;
        ap += o.ap;
        return *this;
    }
    friend LinearMap operator*(const Matrix& m, const LinearMap& z) { return {m * z.ax, m * z.ac, m * z.ap}; }
    friend LinearMap operator-(const LinearMap& a, const LinearMap& b)
    {
        return {a.ax - b.ax, a.ac - b.ac, a.ap - b.ap};
    }
};

/// x_hat_j as a map of (x, c_0..c_{c_blocks-1}, p_0..p_{p_blocks-1}); requires j <= both block counts.
inline LinearMap state_map(const UncertainSystem& sys, const Matrix& K, int j, int c_blocks, int p_blocks)
{
    if (j > c_blocks || j > p_blocks)
        throw Error(ErrorCode::dimension_mismatch, "state_map: too few stacked blocks for the prediction index");
    const StackedPrediction st = build_stacked(sys, K, j);
    LinearMap z{st.phi_bar, Matrix::Zero(sys.nx(), c_blocks * sys.nu()), Matrix::Zero(sys.nx(), p_blocks * sys.np())};
    z.ac.leftCols(st.g_bar.cols()) = st.g_bar;
    z.ap.leftCols(st.b_bar.cols()) = st.b_bar;
    return z;
}

/// Selector of c_i from [c_0; ...; c_{c_blocks-1}] as a map with zero x and p parts.
inline LinearMap c_selector(const UncertainSystem& sys, int i, int c_blocks, int p_blocks)
{
    LinearMap z{Matrix::Zero(sys.nu(), sys.nx()), Matrix::Zero(sys.nu(), c_blocks * sys.nu()),
                Matrix::Zero(sys.nu(), p_blocks * sys.np())};
    z.ac.middleCols(i * sys.nu(), sys.nu()) = Matrix::Identity(sys.nu(), sys.nu());
    return z;
}

/// Per-stage blocks of q_i' q_i - p_i' p_i >= 0 (q_i = C_K x_hat_i + D_q c_i) and of
/// 1 - x_na' S x_na >= 0, in the variables w = [x_na; p_0; ...], v = [y; c_0; ...]:
///   w' Z_i w + 2 w' M_i v + v' N_i v   and   1 + w' S_bar w.
struct UncertaintyBlocks {
    std::vector<Matrix> M, N, Z, H;
    Matrix S_bar;
};

inline UncertaintyBlocks uncertainty_blocks(const UncertainSystem& sys, const Matrix& K, const Matrix& s, int stages,
                                            int c_blocks)
{
    if (stages > c_blocks)
        throw Error(ErrorCode::dimension_mismatch, "uncertainty_blocks: each stage needs its own c block");
    const Predictor pr(sys, K);
    const Eigen::Index ny = pr.ny, nna = pr.nx - ny, np = pr.np;
    const Eigen::Index nw = nna + stages * np;
    if (s.rows() != nna || s.cols() != nna)
        throw Error(ErrorCode::dimension_mismatch, "uncertainty_blocks: S must be n_na x n_na");
    UncertaintyBlocks out;
    for (int i = 0; i < stages; ++i) {
        LinearMap q = pr.c_k * state_map(sys, K, i, c_blocks, stages);
        q += sys.dq * c_selector(sys, i, c_blocks, stages);
        Matrix qv(q.ax.rows(), ny + q.ac.cols()), qw(q.ax.rows(), nw);
        qv << q.ax.leftCols(ny), q.ac;
        qw << q.ax.rightCols(nna), q.ap;
        Matrix h = Matrix::Zero(nw, nw);
        h.block(nna + i * np, nna + i * np, np, np) = Matrix::Identity(np, np);
        out.N.push_back(lmi::symmetrize(qv.transpose() * qv));
        out.M.push_back(qw.transpose() * qv);
        out.Z.push_back(lmi::symmetrize(qw.transpose() * qw - h));
        out.H.push_back(h);
    }
    out.S_bar = Matrix::Zero(nw, nw);
    out.S_bar.topLeftCorner(nna, nna) = -s;
    return out;
}

/// Stage blocks i = 0..k for the cost family at index k.
inline UncertaintyBlocks build_uncertainty_blocks(const UncertainSystem& sys, const Matrix& K, const Matrix& s, int k)
{
    if (k < 0)
        throw Error(ErrorCode::invalid_input, "build_uncertainty_blocks: k must be nonnegative");
    return uncertainty_blocks(sys, K, s, k + 1, k + 1);
}

/// Blocks of one constrained quadratic z' W z at one horizon index, written as
///   w' F w + 2 w' D v + v' E v,   w = [x_na; p_0..p_{stages-1}],  v = [y; c_0..c_{c_blocks-1}],
/// together with the uncertainty blocks of the same stages.
struct QuadBlockSet {
    Family family = Family::cost;
    int k = 0;
    int stages = 0;
    int c_blocks = 0;
    Eigen::Index ny = 0, nna = 0, nu = 0, np = 0;
    Matrix D, E, F;
    std::vector<Matrix> M, N, Z, H;
    Matrix S_bar;

    [[nodiscard]] Eigen::Index nv() const { return ny + c_blocks * nu; }
    [[nodiscard]] Eigen::Index nw() const { return nna + stages * np; }
    /// Multiplier count: one per stage plus one for D(S).
    [[nodiscard]] int num_multipliers() const { return stages + 1; }

    [[nodiscard]] Vector v_of(const Vector& y, const Vector& c_stack) const
    {
        Vector v(nv());
        v << y, c_stack.head(c_blocks * nu);
        return v;
    }
    [[nodiscard]] Vector w_of(const Vector& x_na, const Vector& p_stack) const
    {
        Vector w(nw());
        w << x_na, p_stack.head(stages * np);
        return w;
    }
    [[nodiscard]] double quadratic(const Vector& v, const Vector& w) const
    {
        return w.dot(F * w) + 2.0 * w.dot(D * v) + v.dot(E * v);
    }
    [[nodiscard]] double stage_quadratic(int i, const Vector& v, const Vector& w) const
    {
        return w.dot(Z[i] * w) + 2.0 * w.dot(M[i] * v) + v.dot(N[i] * v);
    }
    [[nodiscard]] double ds_quadratic(const Vector& w) const { return 1.0 + w.dot(S_bar * w); }
};

namespace detail {

inline QuadBlockSet quad_blocks(const UncertainSystem& sys, const Matrix& K, const Matrix& s, Family family, int k,
                                const LinearMap& z, const Matrix& weight, int stages, int c_blocks)
{
    const Eigen::Index ny = sys.ny(), nna = sys.nna();
    if (weight.rows() != z.ax.rows() || weight.cols() != z.ax.rows())
        throw Error(ErrorCode::dimension_mismatch, std::string(to_string(family)) + " blocks: weight not conformal");
    Matrix lv(z.ax.rows(), ny + z.ac.cols()), lw(z.ax.rows(), nna + z.ap.cols());
    lv << z.ax.leftCols(ny), z.ac;
    lw << z.ax.rightCols(nna), z.ap;

    QuadBlockSet out;
    out.family = family;
    out.k = k;
    out.stages = stages;
    out.c_blocks = c_blocks;
    out.ny = ny;
    out.nna = nna;
    out.nu = sys.nu();
    out.np = sys.np();
    out.D = lw.transpose() * weight * lv;
    out.E = lmi::symmetrize(lv.transpose() * weight * lv);
    out.F = lmi::symmetrize(lw.transpose() * weight * lw);
    UncertaintyBlocks u = uncertainty_blocks(sys, K, s, stages, c_blocks);
    out.M = std::move(u.M);
    out.N = std::move(u.N);
    out.Z = std::move(u.Z);
    out.H = std::move(u.H);
    out.S_bar = std::move(u.S_bar);
    return out;
}

inline void check_weight(const Matrix& w, Eigen::Index n, const char* what)
{
    if (w.rows() != n || w.cols() != n)
        throw Error(ErrorCode::dimension_mismatch, std::string(what) + " must be n x n conformal");
}

} // namespace detail

/// Cost term at index k: x_hat_{k+1}' R_x x_hat_{k+1} + c_k' R_u c_k (P replaces R_x when terminal_weighting).
inline QuadBlockSet build_cost_blocks(const UncertainSystem& sys, const Matrix& K, const Matrix& s, const Matrix& rx,
                                      const Matrix& ru, const Matrix& P, int k, bool terminal_weighting)
{
    if (k < 0)
        throw Error(ErrorCode::invalid_input, "build_cost_blocks: k must be nonnegative");
    const Matrix& w = terminal_weighting ? P : rx;
    detail::check_weight(w, sys.nx(), terminal_weighting ? "P" : "R_x");
    detail::check_weight(ru, sys.nu(), "R_u");
    const int n = k + 1;
    QuadBlockSet out =
        detail::quad_blocks(sys, K, s, Family::cost, k, state_map(sys, K, n, n, n), w, n, n);
    const Eigen::Index off = sys.ny() + k * sys.nu();
    out.E.block(off, off, sys.nu(), sys.nu()) += ru;
    out.E = lmi::symmetrize(out.E);
    return out;
}

/// u_k = K C x_hat_k + c_k as a map over c_0..c_k and p_0..p_{k-1}.
inline LinearMap input_map(const UncertainSystem& sys, const Matrix& K, int k)
{
    const Predictor pr(sys, K);
    LinearMap u = pr.kc * state_map(sys, K, k, k + 1, k);
    u += c_selector(sys, k, k + 1, k);
    return u;
}

/// ||u_k||^2 for k >= 1.
inline QuadBlockSet build_input_blocks(const UncertainSystem& sys, const Matrix& K, const Matrix& s, int k)
{
    if (k < 1)
        throw Error(ErrorCode::invalid_input, "build_input_blocks: k must be at least 1");
    return detail::quad_blocks(sys, K, s, Family::input, k, input_map(sys, K, k),
                               Matrix::Identity(sys.nu(), sys.nu()), k, k + 1);
}

/// du_k = u_k - u_{k-1} = Phi_hat x + G_hat [c_0..c_k] + B_hat [p_0..p_{k-1}], with
/// Phi_hat = K C Phi_K^{k-1} (Phi_K - I),
/// G_hat block j = K C (Phi_K^{k-1-j} - Phi_K^{k-2-j}) G for j < k-1, K C G - I for j = k-1, I for j = k,
/// B_hat block j = K C (Phi_K^{k-1-j} - Phi_K^{k-2-j}) B_p for j < k-1, K C B_p for j = k-1
/// (with Phi_K^{-1} terms dropped).
inline LinearMap rate_map(const UncertainSystem& sys, const Matrix& K, int k)
{
    if (k < 1)
        throw Error(ErrorCode::invalid_input, "rate_map: k must be at least 1");
    const LinearMap uk = input_map(sys, K, k);
    const Predictor pr(sys, K);
    LinearMap prev = pr.kc * state_map(sys, K, k - 1, k + 1, k);
    prev += c_selector(sys, k - 1, k + 1, k);
    return uk - prev;
}

/// ||u_k - u_{k-1}||^2 for k >= 1.
inline QuadBlockSet build_rate_blocks(const UncertainSystem& sys, const Matrix& K, const Matrix& s, int k)
{
    return detail::quad_blocks(sys, K, s, Family::rate, k, rate_map(sys, K, k), Matrix::Identity(sys.nu(), sys.nu()),
                               k, k + 1);
}

/// ||C x_hat_k||^2 for k >= 1.
inline QuadBlockSet build_output_blocks(const UncertainSystem& sys, const Matrix& K, const Matrix& s, int k)
{
    if (k < 1)
        throw Error(ErrorCode::invalid_input, "build_output_blocks: k must be at least 1");
    return detail::quad_blocks(sys, K, s, Family::output, k, state_map(sys, K, k, k, k), sys.c.transpose() * sys.c, k,
                               k);
}

/// x_hat_k' H' S H x_hat_k for k >= 1.
inline QuadBlockSet build_nonmeas_blocks(const UncertainSystem& sys, const Matrix& K, const Matrix& s, int k)
{
    if (k < 1)
        throw Error(ErrorCode::invalid_input, "build_nonmeas_blocks: k must be at least 1");
    const Matrix h = sys.h();
    return detail::quad_blocks(sys, K, s, Family::nonmeas, k, state_map(sys, K, k, k, k), h.transpose() * s * h, k, k);
}

/// x_hat_N' P x_hat_N.
inline QuadBlockSet build_terminal_blocks(const UncertainSystem& sys, const Matrix& K, const Matrix& s,
                                          const Matrix& P, int horizon)
{
    if (horizon < 1)
        throw Error(ErrorCode::invalid_input, "build_terminal_blocks: horizon must be at least 1");
    detail::check_weight(P, sys.nx(), "P");
    return detail::quad_blocks(sys, K, s, Family::terminal, horizon, state_map(sys, K, horizon, horizon, horizon), P,
                               horizon, horizon);
}

/// Every block set used online, indexed as in the constraint list:
/// cost[k], k = 0..N-1; input[k], rate[k], k = 1..N-1 (slot 0 unused); output[k], nonmeas[k], k = 1..N
/// (slot 0 unused); terminal.
struct BlockCatalog {
    int horizon = 0;
    std::vector<QuadBlockSet> cost, input, rate, output, nonmeas;
    QuadBlockSet terminal;

    [[nodiscard]] const QuadBlockSet& get(Family f, int k) const
    {
        switch (f) {
        case Family::cost: return cost.at(k);
        case Family::input: return input.at(k);
        case Family::rate: return rate.at(k);
        case Family::output: return output.at(k);
        case Family::nonmeas: return nonmeas.at(k);
        case Family::terminal: return terminal;
        }
        throw Error(ErrorCode::invalid_input, "unknown family");
    }
};

/// Index ranges per family.
inline int family_first(Family f)
{
    switch (f) {
    case Family::cost: return 0;
    case Family::terminal: return -1;
    default: return 1;
    }
}
inline int family_last(Family f, int horizon)
{
    switch (f) {
    case Family::cost:
    case Family::input:
    case Family::rate: return horizon - 1;
    case Family::output:
    case Family::nonmeas: return horizon;
    case Family::terminal: return -1;
    }
    return -1;
}

inline BlockCatalog build_catalog(const UncertainSystem& sys, const SynthesisSpec& spec, const Matrix& K,
                                  const Matrix& P)
{
    const int n = spec.horizon;
    BlockCatalog cat;
    cat.horizon = n;
    for (int k = 0; k < n; ++k)
        cat.cost.push_back(build_cost_blocks(sys, K, spec.s, spec.rx, spec.ru, P, k, k == n - 1));
    cat.input.resize(n);
    cat.rate.resize(n);
    for (int k = 1; k < n; ++k) {
        cat.input[k] = build_input_blocks(sys, K, spec.s, k);
        cat.rate[k] = build_rate_blocks(sys, K, spec.s, k);
    }
    cat.output.resize(n + 1);
    cat.nonmeas.resize(n + 1);
    for (int k = 1; k <= n; ++k) {
        cat.output[k] = build_output_blocks(sys, K, spec.s, k);
        cat.nonmeas[k] = build_nonmeas_blocks(sys, K, spec.s, k);
    }
    cat.terminal = build_terminal_blocks(sys, K, spec.s, P, n);
    return cat;
}

} // namespace ofmpc
