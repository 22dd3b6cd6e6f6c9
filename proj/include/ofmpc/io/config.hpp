#pragma once

#include <set>
#include <string>

#include "ofmpc/io/json_io.hpp"
#include "ofmpc/model.hpp"

namespace ofmpc::io {

/// A plant together with its synthesis specification, as read from a config file.
struct PlantConfig {
    UncertainSystem sys;
    SynthesisSpec spec;
};

inline PlantConfig config_from_json(const Json& j)
{
    static const std::set<std::string> known{"phi", "g",  "bp", "cq", "dq", "ny",      "u_max",
                                             "x_max", "du_max", "rx", "ru", "s", "horizon", "u_prev0"};
    if (!j.is_object())
        throw Error(ErrorCode::parse_error, "config: expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw Error(ErrorCode::parse_error, "config: unknown key '" + it.key() + "'");
    for (const char* key : {"phi", "g", "bp", "cq", "dq", "ny", "u_max", "x_max", "du_max", "rx", "ru", "s", "horizon"})
        if (!j.contains(key))
            throw Error(ErrorCode::parse_error, std::string("config: missing key '") + key + "'");

    PlantConfig c;
    c.sys.phi = matrix_from_json(j["phi"], "phi");
    c.sys.g = matrix_from_json(j["g"], "g");
    c.sys.bp = matrix_from_json(j["bp"], "bp");
    c.sys.cq = matrix_from_json(j["cq"], "cq");
    c.sys.dq = matrix_from_json(j["dq"], "dq");
    if (!j["ny"].is_number_integer() || j["ny"].get<long>() < 1)
        throw Error(ErrorCode::parse_error, "config: 'ny' must be a positive integer");
    const auto ny = static_cast<Eigen::Index>(j["ny"].get<long>());
    if (ny > c.sys.phi.rows())
        throw Error(ErrorCode::dimension_mismatch, "config: 'ny' exceeds the state dimension");
    c.sys.c = UncertainSystem::canonical_c(ny, c.sys.phi.rows());

    c.spec.u_max = number_from_json(j["u_max"], "u_max");
    c.spec.x_max = number_from_json(j["x_max"], "x_max");
    c.spec.du_max = number_from_json(j["du_max"], "du_max");
    c.spec.rx = matrix_from_json(j["rx"], "rx");
    c.spec.ru = matrix_from_json(j["ru"], "ru");
    c.spec.s = matrix_from_json(j["s"], "s");
    if (!j["horizon"].is_number_integer())
        throw Error(ErrorCode::parse_error, "config: 'horizon' must be an integer");
    c.spec.horizon = j["horizon"].get<int>();
    if (j.contains("u_prev0"))
        c.spec.u_prev0 = vector_from_json(j["u_prev0"], "u_prev0");
    validate(c.sys, c.spec);
    return c;
}

inline Json config_to_json(const PlantConfig& c)
{
    Json j;
    j["phi"] = matrix_to_json(c.sys.phi);
    j["g"] = matrix_to_json(c.sys.g);
    j["bp"] = matrix_to_json(c.sys.bp);
    j["cq"] = matrix_to_json(c.sys.cq);
    j["dq"] = matrix_to_json(c.sys.dq);
    j["ny"] = c.sys.ny();
    j["u_max"] = c.spec.u_max;
    j["x_max"] = c.spec.x_max;
    j["du_max"] = c.spec.du_max;
    j["rx"] = matrix_to_json(c.spec.rx);
    j["ru"] = matrix_to_json(c.spec.ru);
    j["s"] = matrix_to_json(c.spec.s);
    j["horizon"] = c.spec.horizon;
    j["u_prev0"] = vector_to_json(initial_u_prev(c.sys, c.spec));
    return j;
}

inline PlantConfig load_config(const std::string& path)
{
    return config_from_json(parse(read_file(path), path));
}

/// SHA-256 of the canonical (sorted-key, 17-digit, compact) form of the config.
inline std::string spec_hash(const PlantConfig& c)
{
    return sha256_hex(dump(config_to_json(c), 0));
}

} // namespace ofmpc::io
