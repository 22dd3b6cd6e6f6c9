#pragma once

#include <algorithm>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "ofmpc/lmi/sym.hpp"

namespace ofmpc::lmi {

/// One matrix inequality F0 + sum_i x_i F_i >= 0 (or > 0 when strict).
struct LmiConstraint {
    Matrix constant;
    std::vector<std::pair<int, Matrix>> terms;  // (variable index, coefficient block)
    bool strict = false;
    std::string label;

    [[nodiscard]] Eigen::Index dim() const { return constant.rows(); }

    [[nodiscard]] Matrix evaluate(const Vector& x) const
    {
        Matrix out = constant;
        for (const auto& [var, coeff] : terms)
            out += x(var) * coeff;
        return symmetrize(out);
    }
};

/// Linear objective over scalar variables subject to affine matrix inequalities.
struct LmiProblem {
    int num_variables = 0;
    Vector objective;  // length num_variables
    std::vector<LmiConstraint> constraints;
    std::vector<std::string> variable_names;

    void validate() const
    {
        if (objective.size() != num_variables)
            throw Error(ErrorCode::dimension_mismatch, "objective length differs from variable count");
        for (const auto& c : constraints) {
            if (c.constant.rows() != c.constant.cols())
                throw Error(ErrorCode::dimension_mismatch, "constraint '" + c.label + "' is not square");
            if (!c.constant.allFinite())
                throw Error(ErrorCode::invalid_input, "constraint '" + c.label + "' has non-finite data");
            for (const auto& [var, coeff] : c.terms) {
                if (var < 0 || var >= num_variables)
                    throw Error(ErrorCode::invalid_input, "constraint '" + c.label + "' references unknown variable");
                if (coeff.rows() != c.dim() || coeff.cols() != c.dim())
                    throw Error(ErrorCode::dimension_mismatch, "constraint '" + c.label + "' mixes block sizes");
                if (!coeff.allFinite())
                    throw Error(ErrorCode::invalid_input, "constraint '" + c.label + "' has non-finite data");
            }
        }
    }

    /// Smallest eigenvalue over all constraint blocks at x (strict shifts not applied).
    [[nodiscard]] double min_constraint_eig(const Vector& x) const
    {
        double worst = std::numeric_limits<double>::infinity();
        for (const auto& c : constraints)
            if (c.dim() > 0)
                worst = std::min(worst, min_eig(c.evaluate(x)));
        return worst;
    }
};

enum class SolveStatus { optimal, feasible, infeasible, unbounded, numerical_failure };

inline std::string_view to_string(SolveStatus s)
{
    switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::feasible: return "feasible";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::unbounded: return "unbounded";
    case SolveStatus::numerical_failure: return "numerical_failure";
    }
    return "unknown";
}

struct LmiSolution {
    SolveStatus status = SolveStatus::numerical_failure;
    Vector values;
    double objective_value = 0.0;
    double max_residual = 0.0;  // most negative constraint eigenvalue at `values`
    double duality_gap = 0.0;
    double primal_infeasibility = 0.0;
    double dual_infeasibility = 0.0;
    int iterations = 0;
    std::vector<Matrix> dual;   // per-constraint dual matrices (infeasibility certificate when infeasible)
    std::string message;

    [[nodiscard]] bool ok() const
    {
        return status == SolveStatus::optimal || status == SolveStatus::feasible;
    }
};

} // namespace ofmpc::lmi
