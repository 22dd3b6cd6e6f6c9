#pragma once

#include <string>
#include <vector>

#include "ofmpc/lmi/sym.hpp"

namespace ofmpc {

/// x+ = Phi x + G u + B_p p,  y = C x,  q = C_q x + D_q u,  p = Delta q,  ||Delta|| <= 1.
/// The first n_y states are measured (C = [I 0]).
struct UncertainSystem {
    Matrix phi, g, bp, c, cq, dq;

    [[nodiscard]] Eigen::Index nx() const { return phi.rows(); }
    [[nodiscard]] Eigen::Index nu() const { return g.cols(); }
    [[nodiscard]] Eigen::Index ny() const { return c.rows(); }
    [[nodiscard]] Eigen::Index np() const { return bp.cols(); }
    [[nodiscard]] Eigen::Index nna() const { return nx() - ny(); }

    /// Selector of the unmeasured components, H = [0 I].
    [[nodiscard]] Matrix h() const
    {
        Matrix out = Matrix::Zero(nna(), nx());
        out.rightCols(nna()) = Matrix::Identity(nna(), nna());
        return out;
    }

    static Matrix canonical_c(Eigen::Index ny, Eigen::Index nx)
    {
        Matrix out = Matrix::Zero(ny, nx);
        out.leftCols(ny) = Matrix::Identity(ny, ny);
        return out;
    }
};

/// Constraint bounds, cost weights, D(S) shape and horizon.
struct SynthesisSpec {
    double u_max = 1.0;
    double x_max = 1.0;
    double du_max = 1.0;
    Matrix rx, ru, s;
    int horizon = 1;
    Vector u_prev0;  // u(-1); zero when empty
};

struct Measurement {
    Vector y;
    Vector u_prev;
    int t = 0;
};

struct Violation {
    ErrorCode code;
    std::string message;
};

/// Every violated invariant of (sys, spec); empty when the model is valid.
inline std::vector<Violation> check_model(const UncertainSystem& sys, const SynthesisSpec& spec)
{
    std::vector<Violation> out;
    auto add = [&out](ErrorCode c, std::string m) { out.push_back({c, std::move(m)}); };

    const Eigen::Index nx = sys.phi.rows();
    if (nx == 0 || sys.phi.cols() != nx)
        add(ErrorCode::dimension_mismatch, "Phi must be square and nonempty");
    if (sys.g.rows() != nx || sys.g.cols() == 0)
        add(ErrorCode::dimension_mismatch, "G must have n_x rows and at least one column");
    if (sys.bp.rows() != nx || sys.bp.cols() == 0)
        add(ErrorCode::dimension_mismatch, "B_p must have n_x rows and at least one column");
    if (sys.c.cols() != nx || sys.c.rows() == 0)
        add(ErrorCode::dimension_mismatch, "C must have n_x columns and at least one row");
    if (sys.cq.rows() != sys.bp.cols() || sys.cq.cols() != nx)
        add(ErrorCode::dimension_mismatch, "C_q must be n_p x n_x");
    if (sys.dq.rows() != sys.bp.cols() || sys.dq.cols() != sys.g.cols())
        add(ErrorCode::dimension_mismatch, "D_q must be n_p x n_u");
    if (!out.empty())
        return out;

    for (const Matrix* m : {&sys.phi, &sys.g, &sys.bp, &sys.c, &sys.cq, &sys.dq})
        if (!m->allFinite())
            add(ErrorCode::invalid_input, "system matrices must be finite");
    if (sys.ny() >= nx)
        add(ErrorCode::invalid_input, "n_y must be smaller than n_x (full-state measurement is not supported)");
    else if ((sys.c - UncertainSystem::canonical_c(sys.ny(), nx)).cwiseAbs().maxCoeff() != 0.0)
        add(ErrorCode::c_not_canonical, "C must equal [I 0] entrywise");

    const Eigen::Index nu = sys.nu(), nna = nx - std::min(sys.ny(), nx);
    if (!(spec.u_max > 0) || !(spec.x_max > 0) || !(spec.du_max > 0))
        add(ErrorCode::invalid_input, "u_max, x_max and du_max must be positive");
    if (spec.horizon < 1)
        add(ErrorCode::invalid_input, "horizon must be at least 1");
    if (spec.rx.rows() != nx || spec.rx.cols() != nx)
        add(ErrorCode::dimension_mismatch, "R_x must be n_x x n_x");
    else if (!spec.rx.allFinite() || (spec.rx - spec.rx.transpose()).cwiseAbs().maxCoeff() > 1e-10 ||
             lmi::min_eig(spec.rx) < -1e-12)
        add(ErrorCode::not_psd, "R_x must be symmetric positive semidefinite");
    if (spec.ru.rows() != nu || spec.ru.cols() != nu)
        add(ErrorCode::dimension_mismatch, "R_u must be n_u x n_u");
    else if (!spec.ru.allFinite() || (spec.ru - spec.ru.transpose()).cwiseAbs().maxCoeff() > 1e-10 ||
             lmi::min_eig(spec.ru) <= 0)
        add(ErrorCode::ru_not_pd, "R_u must be symmetric positive definite");
    if (spec.s.rows() != nna || spec.s.cols() != nna)
        add(ErrorCode::dimension_mismatch, "S must be (n_x - n_y) x (n_x - n_y)");
    else if (nna > 0 && (!spec.s.allFinite() || (spec.s - spec.s.transpose()).cwiseAbs().maxCoeff() > 1e-10 ||
                         lmi::min_eig(spec.s) < -1e-12))
        add(ErrorCode::not_psd, "S must be symmetric positive semidefinite");
    if (spec.u_prev0.size() != 0 && spec.u_prev0.size() != nu)
        add(ErrorCode::dimension_mismatch, "u_prev0 must have n_u entries");
    else if (!spec.u_prev0.allFinite())
        add(ErrorCode::invalid_input, "u_prev0 must be finite");
    return out;
}

/// Throws the first violation, listing all of them in the message.
inline void validate(const UncertainSystem& sys, const SynthesisSpec& spec)
{
    const auto v = check_model(sys, spec);
    if (v.empty())
        return;
    std::string msg;
    for (const auto& item : v)
        msg += (msg.empty() ? "" : "; ") + std::string(to_string(item.code)) + " (" + item.message + ")";
    throw Error(v.front().code, msg);
}

inline Vector initial_u_prev(const UncertainSystem& sys, const SynthesisSpec& spec)
{
    return spec.u_prev0.size() == 0 ? Vector::Zero(sys.nu()) : spec.u_prev0;
}

/// x in D(S), i.e. x_na' S x_na <= 1.
inline bool ds_contains(const SynthesisSpec& spec, const Vector& x, double tol = 0.0)
{
    const Eigen::Index nna = spec.s.rows();
    if (x.size() < nna)
        throw Error(ErrorCode::dimension_mismatch, "ds_contains: state too short");
    const Vector xna = x.tail(nna);
    return xna.dot(spec.s * xna) <= 1.0 + tol;
}

/// S = diag(1 / (m b_i^2)) so that the box |x_na,i| <= b_i lies inside D(S).
inline Matrix make_diag_S(const Vector& bounds)
{
    const Eigen::Index m = bounds.size();
    if (m == 0)
        throw Error(ErrorCode::invalid_input, "make_diag_S: no bounds");
    Matrix s = Matrix::Zero(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
        if (!(bounds(i) > 0) || !std::isfinite(bounds(i)))
            throw Error(ErrorCode::invalid_input, "make_diag_S: bounds must be positive and finite");
        s(i, i) = 1.0 / (static_cast<double>(m) * bounds(i) * bounds(i));
    }
    return s;
}

} // namespace ofmpc
