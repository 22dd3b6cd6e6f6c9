#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "ofmpc/lmi/problem.hpp"

namespace ofmpc::lmi {

namespace detail {

struct Block {
    Eigen::Index n = 0;
    Matrix f0;                                   // scaled, strict shift applied
    std::vector<std::pair<int, Matrix>> terms;   // scaled
    double scale = 1.0;
};

inline double trace_product(const Matrix& a, const Matrix& b)
{
    // tr(a b) for square a, b
    return a.cwiseProduct(b.transpose()).sum();
}

/// Largest alpha in (0, inf] with M + alpha dM > 0, given M > 0.
inline double max_step(const Matrix& m, const Matrix& dm)
{
    if (m.rows() == 0)
        return std::numeric_limits<double>::infinity();
    Eigen::LLT<Matrix> llt(m);
    Matrix l = llt.matrixL();
    Matrix tmp = l.triangularView<Eigen::Lower>().solve(dm);
    Matrix s = l.triangularView<Eigen::Lower>().solve(tmp.transpose());
    const double lmin = min_eig(symmetrize(s));
    if (lmin >= 0)
        return std::numeric_limits<double>::infinity();
    return -1.0 / lmin;
}

inline Matrix spd_inverse(const Matrix& m)
{
    Eigen::LLT<Matrix> llt(m);
    return llt.solve(Matrix::Identity(m.rows(), m.cols()));
}

inline bool is_pd(const Matrix& m)
{
    if (m.rows() == 0)
        return true;
    Eigen::LLT<Matrix> llt(m);
    return llt.info() == Eigen::Success;
}

} // namespace detail

/// Primal-dual interior-point method (HKM direction, Mehrotra predictor-corrector)
/// for  min c'x  s.t.  F_j(x) = F_j0 + sum_i x_i F_ji >= 0  for every block j.
///
/// Infeasible start. The dual is  max -sum_j <F_j0, W_j>  s.t.  sum_j <F_ji, W_j> = c_i,
/// W_j >= 0. Infeasibility of the LMI is reported with a normalized dual certificate W.
class InteriorPointSolver {
public:
    explicit InteriorPointSolver(Tolerances tol = default_tolerances) : tol_(tol) {}

    [[nodiscard]] LmiSolution solve(const LmiProblem& problem) const
    {
        problem.validate();
        if (problem.num_variables == 0)
            return solve_constant(problem);

        LmiSolution sol = run(problem);
        if (sol.status == SolveStatus::numerical_failure)
            classify_failure(problem, sol);
        return sol;
    }

private:
    [[nodiscard]] LmiSolution solve_constant(const LmiProblem& problem) const
    {
        LmiSolution sol;
        sol.values = Vector(0);
        sol.max_residual = problem.constraints.empty() ? 0.0 : problem.min_constraint_eig(sol.values);
        double shifted = std::numeric_limits<double>::infinity();
        for (const auto& c : problem.constraints) {
            if (c.dim() == 0)
                continue;
            Eigen::SelfAdjointEigenSolver<Matrix> es(c.constant);
            const double lmin = es.eigenvalues()(0) - (c.strict ? tol_.strict : 0.0);
            shifted = std::min(shifted, lmin);
            Matrix cert = es.eigenvectors().col(0) * es.eigenvectors().col(0).transpose();
            sol.dual.push_back(cert);
        }
        sol.status = shifted >= -tol_.feas ? SolveStatus::feasible : SolveStatus::infeasible;
        sol.message = "no decision variables";
        return sol;
    }

    std::vector<detail::Block> prepare(const LmiProblem& problem) const
    {
        std::vector<detail::Block> blocks;
        blocks.reserve(problem.constraints.size());
        for (const auto& c : problem.constraints) {
            detail::Block b;
            b.n = c.dim();
            if (b.n == 0)
                continue;
            double mag = c.constant.cwiseAbs().maxCoeff();
            for (const auto& [var, coeff] : c.terms)
                mag = std::max(mag, coeff.cwiseAbs().maxCoeff());
            b.scale = mag > 0 ? 1.0 / mag : 1.0;
            b.f0 = symmetrize(c.constant) * b.scale;
            if (c.strict)
                b.f0 -= tol_.strict * b.scale * Matrix::Identity(b.n, b.n);
            for (const auto& [var, coeff] : c.terms)
                b.terms.emplace_back(var, symmetrize(coeff) * b.scale);
            blocks.push_back(std::move(b));
        }
        return blocks;
    }

    [[nodiscard]] LmiSolution run(const LmiProblem& problem) const
    {
        using detail::trace_product;
        const int m = problem.num_variables;
        const std::vector<detail::Block> blocks = prepare(problem);
        const Vector& c = problem.objective;
        const std::size_t nb = blocks.size();

        Eigen::Index n_total = 0;
        for (const auto& b : blocks)
            n_total += b.n;

        LmiSolution sol;
        if (nb == 0) {
            // Only an objective: bounded iff c == 0.
            sol.values = Vector::Zero(m);
            sol.status = c.cwiseAbs().maxCoeff() == 0.0 ? SolveStatus::optimal : SolveStatus::unbounded;
            return sol;
        }

        // Initial point.
        Vector x = Vector::Zero(m);
        std::vector<Matrix> z(nb), w(nb);
        for (std::size_t j = 0; j < nb; ++j) {
            const auto& b = blocks[j];
            const double n = static_cast<double>(b.n);
            double fmax = b.f0.norm();
            double wscale = 0.0;
            for (const auto& [var, coeff] : b.terms) {
                const double fn = coeff.norm();
                fmax = std::max(fmax, fn);
                wscale = std::max(wscale, (1.0 + std::abs(c(var))) / (1.0 + fn));
            }
            const double zeta = std::max({10.0, std::sqrt(n), fmax});
            const double omega = std::max({10.0, std::sqrt(n), n * wscale});
            z[j] = zeta * Matrix::Identity(b.n, b.n);
            w[j] = omega * Matrix::Identity(b.n, b.n);
        }

        const double c_norm = c.norm();
        double f0_norm = 0.0;
        for (const auto& b : blocks)
            f0_norm = std::max(f0_norm, b.f0.norm());

        std::vector<Matrix> zinv(nb), rp(nb), dz(nb), dw(nb), dz_aff(nb), dw_aff(nb), corr(nb);
        Vector rd(m), dx(m), rhs(m);
        Matrix h(m, m);

        auto eval_block = [&](std::size_t j, const Vector& xv) {
            Matrix out = blocks[j].f0;
            for (const auto& [var, coeff] : blocks[j].terms)
                out += xv(var) * coeff;
            return out;
        };

        int stalls = 0;
        for (int iter = 0; iter < tol_.max_iterations; ++iter) {
            sol.iterations = iter + 1;

            // Residuals and duality measure.
            double gap = 0.0, rp_norm = 0.0, dobj = 0.0;
            rd = c;
            for (std::size_t j = 0; j < nb; ++j) {
                rp[j] = eval_block(j, x) - z[j];
                rp_norm = std::max(rp_norm, rp[j].norm());
                gap += trace_product(z[j], w[j]);
                dobj -= trace_product(blocks[j].f0, w[j]);
                for (const auto& [var, coeff] : blocks[j].terms)
                    rd(var) -= trace_product(coeff, w[j]);
            }
            const double pobj = c.dot(x);
            const double mu = gap / static_cast<double>(n_total);
            const double rel_gap = gap / (1.0 + std::abs(pobj) + std::abs(dobj));
            const double p_inf = rp_norm / (1.0 + f0_norm);
            const double d_inf = rd.norm() / (1.0 + c_norm);

            sol.duality_gap = rel_gap;
            sol.primal_infeasibility = p_inf;
            sol.dual_infeasibility = d_inf;

            if (p_inf <= tol_.feas * 1e-1 && d_inf <= tol_.feas && rel_gap <= tol_.gap * 1e-1) {
                finish(problem, blocks, x, w, sol, c_norm == 0.0 ? SolveStatus::feasible : SolveStatus::optimal);
                return sol;
            }

            // Certificate of LMI infeasibility: W / dobj with sum <F_i, W> ~ 0.
            if (dobj > 0) {
                double worst = 0.0;
                Vector aw = c - rd;
                for (int i = 0; i < m; ++i)
                    worst = std::max(worst, std::abs(aw(i)));
                if (worst / dobj < tol_.feas * 1e-2 && dobj > 1e3) {
                    sol.status = SolveStatus::infeasible;
                    sol.values = x;
                    sol.dual.clear();
                    for (std::size_t j = 0; j < nb; ++j)
                        sol.dual.push_back(w[j] / dobj);
                    sol.message = "dual certificate of infeasibility";
                    sol.max_residual = problem.min_constraint_eig(x);
                    return sol;
                }
            }
            // Direction of unboundedness.
            if (pobj < -1e10 * (1.0 + c_norm) && p_inf < 1e-6) {
                sol.status = SolveStatus::unbounded;
                sol.values = x;
                sol.objective_value = pobj;
                sol.message = "objective unbounded below";
                return sol;
            }

            // Schur complement matrix.
            h.setZero();
            std::vector<std::vector<Matrix>> zfw(nb);
            bool bad = false;
            for (std::size_t j = 0; j < nb; ++j) {
                Eigen::LLT<Matrix> llt(z[j]);
                if (llt.info() != Eigen::Success) {
                    bad = true;
                    break;
                }
                zinv[j] = llt.solve(Matrix::Identity(blocks[j].n, blocks[j].n));
                const auto& terms = blocks[j].terms;
                zfw[j].resize(terms.size());
                for (std::size_t a = 0; a < terms.size(); ++a)
                    zfw[j][a] = zinv[j] * terms[a].second * w[j];
                for (std::size_t a = 0; a < terms.size(); ++a)
                    for (std::size_t bidx = 0; bidx < terms.size(); ++bidx)
                        h(terms[a].first, terms[bidx].first) += trace_product(terms[a].second, zfw[j][bidx]);
            }
            if (bad)
                break;
            h = symmetrize(h);
            const double hscale = std::max(1e-300, h.diagonal().cwiseAbs().maxCoeff());
            Eigen::LDLT<Matrix> ldlt(h + 1e-14 * hscale * Matrix::Identity(m, m));
            if (ldlt.info() != Eigen::Success)
                break;

            auto direction = [&](double sigma, bool corrector) -> bool {
                rhs = -c;
                for (std::size_t j = 0; j < nb; ++j) {
                    Matrix r = sigma * mu * zinv[j] - zinv[j] * rp[j] * w[j];
                    if (corrector)
                        r -= zinv[j] * corr[j];
                    for (const auto& [var, coeff] : blocks[j].terms)
                        rhs(var) += trace_product(coeff, r);
                }
                dx = ldlt.solve(rhs);
                if (!dx.allFinite())
                    return false;
                for (std::size_t j = 0; j < nb; ++j) {
                    dz[j] = rp[j];
                    for (const auto& [var, coeff] : blocks[j].terms)
                        dz[j] += dx(var) * coeff;
                    Matrix d = sigma * mu * zinv[j] - w[j] - zinv[j] * dz[j] * w[j];
                    if (corrector)
                        d -= zinv[j] * corr[j];
                    dw[j] = symmetrize(d);
                }
                return true;
            };

            auto step_lengths = [&](double& ap, double& ad) {
                ap = std::numeric_limits<double>::infinity();
                ad = std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < nb; ++j) {
                    ap = std::min(ap, detail::max_step(z[j], dz[j]));
                    ad = std::min(ad, detail::max_step(w[j], dw[j]));
                }
            };

            // Predictor.
            if (!direction(0.0, false))
                break;
            double ap = 0, ad = 0;
            step_lengths(ap, ad);
            ap = std::min(1.0, ap);
            ad = std::min(1.0, ad);
            double gap_aff = 0.0;
            for (std::size_t j = 0; j < nb; ++j) {
                gap_aff += trace_product(z[j] + ap * dz[j], w[j] + ad * dw[j]);
                dz_aff[j] = dz[j];
                dw_aff[j] = dw[j];
            }
            double sigma = std::pow(std::max(0.0, gap_aff) / std::max(gap, 1e-300), 3.0);
            sigma = std::clamp(sigma, 0.0, 1.0);
            // Keep some centering while far from feasibility.
            if (p_inf > 1e-2 || d_inf > 1e-2)
                sigma = std::max(sigma, 0.1);

            // Corrector.
            for (std::size_t j = 0; j < nb; ++j)
                corr[j] = dz_aff[j] * dw_aff[j];
            if (!direction(sigma, true))
                break;
            step_lengths(ap, ad);
            const double gamma = 0.95;
            ap = std::min(1.0, gamma * ap);
            ad = std::min(1.0, gamma * ad);

            x += ap * dx;
            for (std::size_t j = 0; j < nb; ++j) {
                z[j] = symmetrize(z[j] + ap * dz[j]);
                w[j] = symmetrize(w[j] + ad * dw[j]);
                if (!detail::is_pd(z[j]) || !detail::is_pd(w[j])) {
                    bad = true;
                }
            }
            if (bad || !x.allFinite())
                break;

            if (ap < 1e-10 && ad < 1e-10) {
                if (++stalls > 3)
                    break;
            } else {
                stalls = 0;
            }
        }

        // Accept a slightly looser optimum before giving up.
        double gap = 0.0, rp_norm = 0.0, dobj = 0.0;
        Vector rdv = c;
        for (std::size_t j = 0; j < nb; ++j) {
            rp_norm = std::max(rp_norm, (eval_block(j, x) - z[j]).norm());
            gap += trace_product(z[j], w[j]);
            dobj -= trace_product(blocks[j].f0, w[j]);
            for (const auto& [var, coeff] : blocks[j].terms)
                rdv(var) -= trace_product(coeff, w[j]);
        }
        const double rel_gap = gap / (1.0 + std::abs(c.dot(x)) + std::abs(dobj));
        const double p_inf = rp_norm / (1.0 + f0_norm);
        const double d_inf = rdv.norm() / (1.0 + c_norm);
        sol.duality_gap = rel_gap;
        sol.primal_infeasibility = p_inf;
        sol.dual_infeasibility = d_inf;
        if (x.allFinite() && p_inf <= tol_.feas && d_inf <= 10 * tol_.feas && rel_gap <= tol_.gap) {
            finish(problem, blocks, x, w, sol, c_norm == 0.0 ? SolveStatus::feasible : SolveStatus::optimal);
            return sol;
        }
        // Stalled with a primal-feasible point and a closed gap: the dual residual is limited by
        // conditioning at an active bound.
        if (x.allFinite() && p_inf <= tol_.feas && d_inf <= 1e3 * tol_.feas && rel_gap <= tol_.gap) {
            finish(problem, blocks, x, w, sol, c_norm == 0.0 ? SolveStatus::feasible : SolveStatus::optimal);
            if (sol.ok())
                sol.message = "stalled with reduced dual accuracy";
            return sol;
        }
        sol.status = SolveStatus::numerical_failure;
        sol.values = x;
        sol.objective_value = c.dot(x);
        char buf[160];
        std::snprintf(buf, sizeof buf, "no convergence after %d iterations (gap %.3e, pinf %.3e, dinf %.3e)",
                      sol.iterations, rel_gap, p_inf, d_inf);
        sol.message = buf;
        return sol;
    }

    void finish(const LmiProblem& problem, const std::vector<detail::Block>& blocks, const Vector& x,
                const std::vector<Matrix>& w, LmiSolution& sol, SolveStatus status) const
    {
        sol.status = status;
        sol.values = x;
        sol.objective_value = problem.objective.dot(x);
        sol.max_residual = problem.min_constraint_eig(x);
        sol.dual.clear();
        for (std::size_t j = 0; j < blocks.size(); ++j)
            sol.dual.push_back(w[j] * blocks[j].scale);
        // Strict constraints must keep their margin; plain ones may sit on the boundary.
        double worst = 0.0;
        for (const auto& con : problem.constraints) {
            if (con.dim() == 0)
                continue;
            const double lmin = min_eig(con.evaluate(x)) - (con.strict ? tol_.strict : 0.0);
            const double scale = 1.0 + con.constant.cwiseAbs().maxCoeff();
            worst = std::min(worst, lmin / scale);
        }
        if (worst < -tol_.feas) {
            sol.status = SolveStatus::numerical_failure;
            sol.message = "solution violates constraints by " + std::to_string(-worst);
        }
    }

    /// Decide infeasible vs. genuine numerical failure with a phase-I problem
    /// min s  s.t.  F_j(x) + s I >= 0,  s >= -1.
    void classify_failure(const LmiProblem& problem, LmiSolution& sol) const
    {
        LmiProblem phase1;
        phase1.num_variables = problem.num_variables + 1;
        const int s = problem.num_variables;
        phase1.objective = Vector::Zero(phase1.num_variables);
        phase1.objective(s) = 1.0;
        for (const auto& con : problem.constraints) {
            if (con.dim() == 0)
                continue;
            LmiConstraint c2 = con;
            const double scale = std::max(1.0, con.constant.cwiseAbs().maxCoeff());
            c2.terms.emplace_back(s, scale * Matrix::Identity(con.dim(), con.dim()));
            phase1.constraints.push_back(std::move(c2));
        }
        LmiConstraint floor;
        floor.constant = Matrix::Ones(1, 1);
        floor.terms.emplace_back(s, Matrix::Ones(1, 1));
        floor.label = "phase1 floor";
        phase1.constraints.push_back(floor);

        const LmiSolution p1 = run(phase1);
        if (p1.ok() && p1.values(s) > 10 * tol_.feas) {
            sol.status = SolveStatus::infeasible;
            sol.dual = p1.dual;
            sol.message = "phase-I optimum " + std::to_string(p1.values(s)) + " > 0";
        }
    }

    Tolerances tol_;
};

inline LmiSolution solve(const LmiProblem& problem, Tolerances tol = default_tolerances)
{
    return InteriorPointSolver(tol).solve(problem);
}

} // namespace ofmpc::lmi
