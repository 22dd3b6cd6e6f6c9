#pragma once

#include <initializer_list>
#include <map>
#include <string>
#include <vector>

#include "ofmpc/lmi/problem.hpp"

namespace ofmpc::lmi {

/// Matrix-valued expression affine in the scalar decision variables of a builder.
class Affine {
public:
    Affine() = default;
    Affine(Eigen::Index rows, Eigen::Index cols) : constant_(Matrix::Zero(rows, cols)) {}
    explicit Affine(const Matrix& constant) : constant_(constant) {}

    static Affine zero(Eigen::Index rows, Eigen::Index cols) { return Affine(rows, cols); }
    static Affine identity(Eigen::Index n) { return Affine(Matrix::Identity(n, n)); }

    static Affine variable(int index, Matrix coeff)
    {
        Affine a(coeff.rows(), coeff.cols());
        a.terms_.emplace(index, std::move(coeff));
        return a;
    }

    [[nodiscard]] Eigen::Index rows() const { return constant_.rows(); }
    [[nodiscard]] Eigen::Index cols() const { return constant_.cols(); }
    [[nodiscard]] const Matrix& constant() const { return constant_; }
    [[nodiscard]] const std::map<int, Matrix>& terms() const { return terms_; }

    [[nodiscard]] Matrix value(const Vector& x) const
    {
        Matrix out = constant_;
        for (const auto& [var, coeff] : terms_)
            out += x(var) * coeff;
        return out;
    }

    [[nodiscard]] double scalar_value(const Vector& x) const { return value(x)(0, 0); }

    /// For a 1x1 expression s, the expression s * m.
    [[nodiscard]] Affine scaled(const Matrix& m) const
    {
        if (rows() != 1 || cols() != 1)
            throw Error(ErrorCode::dimension_mismatch, "Affine::scaled requires a scalar expression");
        Affine out(constant_(0, 0) * m);
        for (const auto& [var, coeff] : terms_)
            out.terms_.emplace(var, coeff(0, 0) * m);
        return out;
    }

    [[nodiscard]] Affine transpose() const
    {
        Affine out(constant_.transpose());
        for (const auto& [var, coeff] : terms_)
            out.terms_.emplace(var, coeff.transpose());
        return out;
    }

    Affine& operator+=(const Affine& other)
    {
        check_same_shape(other);
        constant_ += other.constant_;
        for (const auto& [var, coeff] : other.terms_) {
            auto it = terms_.find(var);
            if (it == terms_.end())
                terms_.emplace(var, coeff);
            else
                it->second += coeff;
        }
        return *this;
    }

    Affine& operator-=(const Affine& other) { return *this += other * -1.0; }

    Affine& operator*=(double s)
    {
        constant_ *= s;
        for (auto& [var, coeff] : terms_)
            coeff *= s;
        return *this;
    }

    friend Affine operator+(Affine a, const Affine& b) { return a += b; }
    friend Affine operator-(Affine a, const Affine& b) { return a -= b; }
    friend Affine operator+(Affine a, const Matrix& b) { return a += Affine(b); }
    friend Affine operator-(Affine a, const Matrix& b) { return a -= Affine(b); }
    friend Affine operator*(Affine a, double s) { return a *= s; }
    friend Affine operator*(double s, Affine a) { return a *= s; }

    friend Affine operator*(const Matrix& left, const Affine& a)
    {
        Affine out(left * a.constant_);
        for (const auto& [var, coeff] : a.terms_)
            out.terms_.emplace(var, left * coeff);
        return out;
    }

    friend Affine operator*(const Affine& a, const Matrix& right)
    {
        Affine out(a.constant_ * right);
        for (const auto& [var, coeff] : a.terms_)
            out.terms_.emplace(var, coeff * right);
        return out;
    }

    /// Block assembly; every row of blocks must agree in height, every column in width.
    static Affine blocks(const std::vector<std::vector<Affine>>& grid)
    {
        if (grid.empty())
            return Affine();
        std::vector<Eigen::Index> heights, widths;
        for (const auto& row : grid)
            heights.push_back(row.front().rows());
        for (const auto& cell : grid.front())
            widths.push_back(cell.cols());
        Eigen::Index total_rows = 0, total_cols = 0;
        for (auto h : heights) total_rows += h;
        for (auto w : widths) total_cols += w;

        Affine out(total_rows, total_cols);
        Eigen::Index r0 = 0;
        for (std::size_t i = 0; i < grid.size(); ++i) {
            if (grid[i].size() != widths.size())
                throw Error(ErrorCode::dimension_mismatch, "Affine::blocks ragged grid");
            Eigen::Index c0 = 0;
            for (std::size_t j = 0; j < grid[i].size(); ++j) {
                const Affine& cell = grid[i][j];
                if (cell.rows() != heights[i] || cell.cols() != widths[j])
                    throw Error(ErrorCode::dimension_mismatch, "Affine::blocks non-conformal cell");
                out.constant_.block(r0, c0, heights[i], widths[j]) = cell.constant_;
                for (const auto& [var, coeff] : cell.terms_) {
                    auto it = out.terms_.find(var);
                    if (it == out.terms_.end())
                        it = out.terms_.emplace(var, Matrix::Zero(total_rows, total_cols)).first;
                    it->second.block(r0, c0, heights[i], widths[j]) = coeff;
                }
                c0 += widths[j];
            }
            r0 += heights[i];
        }
        return out;
    }

private:
    void check_same_shape(const Affine& other) const
    {
        if (rows() != other.rows() || cols() != other.cols())
            throw Error(ErrorCode::dimension_mismatch, "Affine shape mismatch");
    }

    Matrix constant_;
    std::map<int, Matrix> terms_;
};

/// Collects variables, constraints and the objective, then emits an LmiProblem.
class LmiBuilder {
public:
    Affine scalar(const std::string& name = "")
    {
        const int idx = new_variable(name);
        return Affine::variable(idx, Matrix::Ones(1, 1));
    }

    /// Symmetric n x n matrix variable (n(n+1)/2 scalars).
    Affine symmetric(Eigen::Index n, const std::string& name = "")
    {
        Affine out(n, n);
        for (Eigen::Index j = 0; j < n; ++j) {
            for (Eigen::Index i = 0; i <= j; ++i) {
                Matrix e = Matrix::Zero(n, n);
                e(i, j) = 1.0;
                e(j, i) = 1.0;
                out += Affine::variable(new_variable(name + "[" + std::to_string(i) + "," + std::to_string(j) + "]"), e);
            }
        }
        return out;
    }

    Affine full(Eigen::Index rows, Eigen::Index cols, const std::string& name = "")
    {
        Affine out(rows, cols);
        for (Eigen::Index j = 0; j < cols; ++j) {
            for (Eigen::Index i = 0; i < rows; ++i) {
                Matrix e = Matrix::Zero(rows, cols);
                e(i, j) = 1.0;
                out += Affine::variable(new_variable(name + "(" + std::to_string(i) + "," + std::to_string(j) + ")"), e);
            }
        }
        return out;
    }

    /// expr >= 0 (expr > 0 when strict). The expression is symmetrized.
    void require_psd(const Affine& expr, const std::string& label, bool strict = false)
    {
        if (expr.rows() != expr.cols())
            throw Error(ErrorCode::dimension_mismatch, "require_psd on non-square expression '" + label + "'");
        LmiConstraint c;
        c.constant = symmetrize(expr.constant());
        for (const auto& [var, coeff] : expr.terms()) {
            Matrix sym = symmetrize(coeff);
            if (sym.cwiseAbs().maxCoeff() > 0.0)
                c.terms.emplace_back(var, std::move(sym));
        }
        c.strict = strict;
        c.label = label;
        constraints_.push_back(std::move(c));
    }

    void require_nonneg(const Affine& scalar_expr, const std::string& label, bool strict = false)
    {
        require_psd(scalar_expr, label, strict);
    }

    void minimize(const Affine& scalar_expr)
    {
        if (scalar_expr.rows() != 1 || scalar_expr.cols() != 1)
            throw Error(ErrorCode::dimension_mismatch, "objective must be scalar");
        objective_ = scalar_expr;
    }

    [[nodiscard]] int num_variables() const { return static_cast<int>(names_.size()); }

    [[nodiscard]] LmiProblem build() const
    {
        LmiProblem p;
        p.num_variables = num_variables();
        p.objective = Vector::Zero(p.num_variables);
        for (const auto& [var, coeff] : objective_.terms())
            p.objective(var) = coeff(0, 0);
        p.constraints = constraints_;
        p.variable_names = names_;
        p.validate();
        return p;
    }

    /// Constant part of the objective; not representable in LmiProblem.
    [[nodiscard]] double objective_offset() const
    {
        return objective_.rows() == 1 ? objective_.constant()(0, 0) : 0.0;
    }

private:
    int new_variable(const std::string& name)
    {
        names_.push_back(name.empty() ? "x" + std::to_string(names_.size()) : name);
        return static_cast<int>(names_.size()) - 1;
    }

    std::vector<std::string> names_;
    std::vector<LmiConstraint> constraints_;
    Affine objective_{Matrix::Zero(1, 1)};
};

} // namespace ofmpc::lmi
