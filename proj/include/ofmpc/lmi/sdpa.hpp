#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ofmpc/lmi/problem.hpp"

namespace ofmpc::lmi {

namespace detail {

inline std::string fmt17(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace detail

/// SDPA sparse text for p. SDPA states  sum_i x_i F_i - F_0 >= 0, so F_0 is the
/// negated constant block. Strictness flags travel in a leading comment line.
inline std::string to_sdpa(const LmiProblem& p)
{
    p.validate();
    if (p.num_variables == 0 || p.constraints.empty())
        throw Error(ErrorCode::invalid_input, "export_sdpa: empty problem");
    for (const auto& c : p.constraints)
        if (c.dim() == 0)
            throw Error(ErrorCode::invalid_input, "export_sdpa: zero-size constraint '" + c.label + "'");

    std::ostringstream out;
    bool any_strict = false;
    for (const auto& c : p.constraints)
        any_strict = any_strict || c.strict;
    if (any_strict) {
        out << "*strict";
        for (const auto& c : p.constraints)
            out << ' ' << (c.strict ? 1 : 0);
        out << '\n';
    }
    out << p.num_variables << '\n' << p.constraints.size() << '\n';
    for (std::size_t j = 0; j < p.constraints.size(); ++j)
        out << (j ? " " : "") << p.constraints[j].dim();
    out << '\n';
    for (int i = 0; i < p.num_variables; ++i)
        out << (i ? " " : "") << detail::fmt17(p.objective(i));
    out << '\n';

    auto emit = [&out](int mat, std::size_t blk, const Matrix& m, double sign) {
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = i; j < m.cols(); ++j)
                if (m(i, j) != 0.0)
                    out << mat << ' ' << blk + 1 << ' ' << i + 1 << ' ' << j + 1 << ' '
                        << detail::fmt17(sign * m(i, j)) << '\n';
    };
    for (std::size_t j = 0; j < p.constraints.size(); ++j)
        emit(0, j, p.constraints[j].constant, -1.0);
    std::map<int, std::vector<std::pair<std::size_t, const Matrix*>>> by_var;
    for (std::size_t j = 0; j < p.constraints.size(); ++j)
        for (const auto& [var, coeff] : p.constraints[j].terms)
            by_var[var].emplace_back(j, &coeff);
    for (const auto& [var, list] : by_var)
        for (const auto& [blk, coeff] : list)
            emit(var + 1, blk, *coeff, 1.0);
    return out.str();
}

inline void export_sdpa(const LmiProblem& p, const std::string& path)
{
    const std::string text = to_sdpa(p);
    std::ofstream f(path);
    if (!f)
        throw Error(ErrorCode::io_error, "export_sdpa: cannot open '" + path + "'");
    f << text;
    if (!f)
        throw Error(ErrorCode::io_error, "export_sdpa: write failed for '" + path + "'");
}

/// Parses SDPA sparse text (negative block sizes denote diagonal blocks).
inline LmiProblem from_sdpa(const std::string& text)
{
    std::istringstream in(text);
    std::string line;
    std::vector<int> strict_flags;
    std::string body;
    while (std::getline(in, line)) {
        if (!line.empty() && (line[0] == '*' || line[0] == '"')) {
            if (line.rfind("*strict", 0) == 0) {
                std::istringstream fl(line.substr(7));
                int v;
                while (fl >> v)
                    strict_flags.push_back(v);
            }
            continue;
        }
        for (char& ch : line)
            if (ch == ',' || ch == '{' || ch == '}' || ch == '(' || ch == ')')
                ch = ' ';
        body += line + '\n';
    }

    std::istringstream tok(body);
    auto fail = [](const std::string& what) { return Error(ErrorCode::parse_error, "SDPA: " + what); };
    long m = 0, nblocks = 0;
    if (!(tok >> m) || !(tok >> nblocks) || m <= 0 || nblocks <= 0)
        throw fail("bad header");
    std::vector<long> sizes(static_cast<std::size_t>(nblocks));
    for (auto& s : sizes)
        if (!(tok >> s) || s == 0)
            throw fail("bad block sizes");

    LmiProblem p;
    p.num_variables = static_cast<int>(m);
    p.objective = Vector(m);
    for (long i = 0; i < m; ++i) {
        std::string v;
        if (!(tok >> v))
            throw fail("short objective");
        p.objective(i) = std::strtod(v.c_str(), nullptr);
    }
    std::vector<std::map<int, Matrix>> terms(static_cast<std::size_t>(nblocks));
    for (long j = 0; j < nblocks; ++j) {
        const Eigen::Index n = std::abs(sizes[static_cast<std::size_t>(j)]);
        LmiConstraint c;
        c.constant = Matrix::Zero(n, n);
        c.strict = static_cast<std::size_t>(j) < strict_flags.size() && strict_flags[static_cast<std::size_t>(j)] != 0;
        c.label = "block " + std::to_string(j + 1);
        p.constraints.push_back(std::move(c));
    }
    long mat, blk, i, jj;
    std::string val;
    while (tok >> mat) {
        if (!(tok >> blk >> i >> jj >> val))
            throw fail("truncated entry");
        if (mat < 0 || mat > m || blk < 1 || blk > nblocks)
            throw fail("entry index out of range");
        const auto b = static_cast<std::size_t>(blk - 1);
        const Eigen::Index n = p.constraints[b].dim();
        if (i < 1 || jj < 1 || i > n || jj > n)
            throw fail("entry position out of range");
        if (sizes[b] < 0 && i != jj)
            throw fail("off-diagonal entry in diagonal block");
        const double v = std::strtod(val.c_str(), nullptr);
        Matrix* target;
        if (mat == 0) {
            target = &p.constraints[b].constant;
        } else {
            auto it = terms[b].find(static_cast<int>(mat - 1));
            if (it == terms[b].end())
                it = terms[b].emplace(static_cast<int>(mat - 1), Matrix::Zero(n, n)).first;
            target = &it->second;
        }
        const double sign = mat == 0 ? -1.0 : 1.0;
        (*target)(i - 1, jj - 1) = sign * v;
        (*target)(jj - 1, i - 1) = sign * v;
    }
    for (std::size_t b = 0; b < terms.size(); ++b)
        for (auto& [var, coeff] : terms[b])
            p.constraints[b].terms.emplace_back(var, std::move(coeff));
    p.validate();
    return p;
}

inline LmiProblem import_sdpa(const std::string& path)
{
    std::ifstream f(path);
    if (!f)
        throw Error(ErrorCode::io_error, "import_sdpa: cannot open '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return from_sdpa(ss.str());
}

} // namespace ofmpc::lmi
