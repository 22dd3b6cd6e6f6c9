#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include <openssl/evp.h>

#include <json.hpp>

#include "ofmpc/lmi/sym.hpp"

namespace ofmpc::io {

using Json = nlohmann::json;

inline Json matrix_to_json(const Matrix& m)
{
    Json rows = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        Json row = Json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Json vector_to_json(const Vector& v)
{
    Json out = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i)
        out.push_back(v(i));
    return out;
}

inline double number_from_json(const Json& j, const std::string& what)
{
    if (!j.is_number())
        throw Error(ErrorCode::parse_error, what + ": expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v))
        throw Error(ErrorCode::parse_error, what + ": non-finite number");
    return v;
}

/// Row-major nested array; a bare number is read as a 1x1 matrix.
inline Matrix matrix_from_json(const Json& j, const std::string& what)
{
    if (j.is_number())
        return Matrix::Constant(1, 1, number_from_json(j, what));
    if (!j.is_array())
        throw Error(ErrorCode::parse_error, what + ": expected a nested array");
    if (j.empty())
        return Matrix(0, 0);
    const auto rows = static_cast<Eigen::Index>(j.size());
    if (!j[0].is_array())
        throw Error(ErrorCode::parse_error, what + ": expected rows as arrays");
    const auto cols = static_cast<Eigen::Index>(j[0].size());
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const Json& row = j[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
            throw Error(ErrorCode::parse_error, what + ": ragged matrix");
        for (Eigen::Index c = 0; c < cols; ++c)
            m(i, c) = number_from_json(row[static_cast<std::size_t>(c)], what);
    }
    return m;
}

inline Vector vector_from_json(const Json& j, const std::string& what)
{
    if (j.is_number())
        return Vector::Constant(1, number_from_json(j, what));
    if (!j.is_array())
        throw Error(ErrorCode::parse_error, what + ": expected an array");
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i)
        v(static_cast<Eigen::Index>(i)) = number_from_json(j[i], what);
    return v;
}

inline std::string format_double(double v)
{
    if (!std::isfinite(v))
        throw Error(ErrorCode::invalid_input, "cannot serialize a non-finite number");
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace detail {

inline void write(const Json& j, std::ostringstream& out, int indent, int depth)
{
    const std::string pad(static_cast<std::size_t>(indent * (depth + 1)), ' ');
    const std::string close_pad(static_cast<std::size_t>(indent * depth), ' ');
    const char* nl = indent > 0 ? "\n" : "";
    switch (j.type()) {
    case Json::value_t::object: {
        if (j.empty()) {
            out << "{}";
            return;
        }
        out << '{' << nl;
        bool first = true;
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (!first)
                out << ',' << nl;
            first = false;
            out << pad << Json(it.key()).dump() << (indent > 0 ? ": " : ":");
            write(it.value(), out, indent, depth + 1);
        }
        out << nl << close_pad << '}';
        return;
    }
    case Json::value_t::array: {
        // Numeric arrays stay on one line.
        bool flat = true;
        for (const auto& e : j)
            flat = flat && e.is_primitive();
        out << '[';
        bool first = true;
        for (const auto& e : j) {
            if (!first)
                out << (flat ? ", " : ",");
            if (!flat)
                out << nl << pad;
            first = false;
            write(e, out, indent, depth + 1);
        }
        if (!flat && !j.empty())
            out << nl << close_pad;
        out << ']';
        return;
    }
    case Json::value_t::number_float:
        out << format_double(j.get<double>());
        return;
    default:
        out << j.dump();
        return;
    }
}

} // namespace detail

/// JSON text with every floating-point value printed at 17 significant digits.
inline std::string dump(const Json& j, int indent = 1)
{
    std::ostringstream out;
    detail::write(j, out, indent, 0);
    out << '\n';
    return out.str();
}

inline std::string read_file(const std::string& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw Error(ErrorCode::io_error, "cannot open '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& text)
{
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw Error(ErrorCode::io_error, "cannot open '" + path + "' for writing");
    f << text;
    if (!f)
        throw Error(ErrorCode::io_error, "write failed for '" + path + "'");
}

inline Json parse(const std::string& text, const std::string& what)
{
    try {
        return Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw Error(ErrorCode::parse_error, what + ": " + e.what());
    }
}

inline std::string sha256_hex(const std::string& data)
{
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw Error(ErrorCode::numerical_failure, "SHA-256 digest failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 0xf];
    }
    return out;
}

} // namespace ofmpc::io
