#pragma once

#include <string>
#include <vector>

#include "ofmpc/io/config.hpp"
#include "ofmpc/multipliers.hpp"
#include "ofmpc/synthesis.hpp"

namespace ofmpc {

/// Everything the online controller needs, produced once offline.
struct ControllerBundle {
    static constexpr int current_version = 1;

    struct Gain {
        Matrix K, Pbar;
        double rho_bar = 0.0, tau_bar = 0.0, lambda_bar = 0.0;
    };
    struct Rpi {
        Matrix P, T;
        double rho = 0.0, tau = 0.0, lambda = 0.0, sigma = 0.0;
    };

    int version = current_version;
    std::string spec_hash;
    io::PlantConfig config;
    Vector y0;
    Gain gain;
    Rpi rpi;
    double cost_offset_cap = 0.0;
    MultiplierTable multipliers;
    FactorTable factors;

    [[nodiscard]] const UncertainSystem& sys() const { return config.sys; }
    [[nodiscard]] const SynthesisSpec& spec() const { return config.spec; }
    [[nodiscard]] int horizon() const { return config.spec.horizon; }
    [[nodiscard]] BlockCatalog catalog() const { return build_catalog(sys(), spec(), gain.K, rpi.P); }
};

/// Offline phase: gain, invariant set, multipliers and factors for the initial measurement y0.
inline ControllerBundle synthesize_bundle(const io::PlantConfig& config, const Vector& y0,
                                          const MultiplierOptions& opt = {})
{
    validate(config.sys, config.spec);
    ControllerBundle b;
    b.config = config;
    b.y0 = y0;
    b.spec_hash = io::spec_hash(config);

    const GainResult gain = synthesize_gain(config.sys, config.spec, y0, opt.tol);
    b.gain = {gain.K, gain.Pbar, gain.rho_bar, gain.tau_bar, gain.lambda_bar};
    const RpiResult rpi = synthesize_rpi(config.sys, config.spec, gain, y0, opt.tol);
    b.rpi = {rpi.P(), rpi.T, rpi.rho, rpi.tau, rpi.lambda, rpi.sigma.sigma};

    const BlockCatalog cat = b.catalog();
    b.cost_offset_cap = opt.cost_offset_cap;
    b.multipliers = solve_multipliers(cat, config.spec, rpi.rho, opt);
    b.factors = compute_factors(b.multipliers, cat, opt.tol);
    return b;
}

namespace detail {

inline io::Json vectors_to_json(const std::vector<Vector>& vs)
{
    io::Json out = io::Json::array();
    for (const auto& v : vs)
        out.push_back(io::vector_to_json(v));
    return out;
}

inline io::Json matrices_to_json(const std::vector<Matrix>& ms)
{
    io::Json out = io::Json::array();
    for (const auto& m : ms)
        out.push_back(io::matrix_to_json(m));
    return out;
}

inline const io::Json& field(const io::Json& j, const char* key, const std::string& where)
{
    if (!j.is_object() || !j.contains(key))
        throw Error(ErrorCode::parse_error, where + ": missing field '" + key + "'");
    return j.at(key);
}

inline std::vector<Vector> vectors_from_json(const io::Json& j, const std::string& what)
{
    if (!j.is_array())
        throw Error(ErrorCode::parse_error, what + ": expected an array");
    std::vector<Vector> out;
    for (const auto& item : j)
        out.push_back(io::vector_from_json(item, what));
    return out;
}

inline std::vector<Matrix> matrices_from_json(const io::Json& j, const std::string& what)
{
    if (!j.is_array())
        throw Error(ErrorCode::parse_error, what + ": expected an array");
    std::vector<Matrix> out;
    for (const auto& item : j)
        out.push_back(io::matrix_from_json(item, what));
    return out;
}

} // namespace detail

inline io::Json bundle_to_json(const ControllerBundle& b)
{
    using detail::matrices_to_json;
    using detail::vectors_to_json;
    io::Json j;
    j["version"] = b.version;
    j["spec_hash"] = b.spec_hash;
    j["config"] = io::config_to_json(b.config);
    j["y0"] = io::vector_to_json(b.y0);
    j["gain"] = {{"K", io::matrix_to_json(b.gain.K)},
                 {"Pbar", io::matrix_to_json(b.gain.Pbar)},
                 {"rho_bar", b.gain.rho_bar},
                 {"tau_bar", b.gain.tau_bar},
                 {"lambda_bar", b.gain.lambda_bar}};
    j["rpi"] = {{"P", io::matrix_to_json(b.rpi.P)}, {"T", io::matrix_to_json(b.rpi.T)},
                {"rho", b.rpi.rho},                 {"tau", b.rpi.tau},
                {"lambda", b.rpi.lambda},           {"sigma", b.rpi.sigma}};
    const MultiplierTable& m = b.multipliers;
    j["multipliers"] = {{"cost_offset_cap", b.cost_offset_cap},
                        {"tau", vectors_to_json(m.tau)},
                        {"tau_n", io::vector_to_json(m.tau_n)},
                        {"alpha", vectors_to_json(m.alpha)},
                        {"beta", vectors_to_json(m.beta)},
                        {"theta", vectors_to_json(m.theta)},
                        {"eta", vectors_to_json(m.eta)}};
    const FactorTable& f = b.factors;
    j["factors"] = {{"L", matrices_to_json(f.L)}, {"LN", io::matrix_to_json(f.LN)}, {"U", matrices_to_json(f.U)},
                    {"V", matrices_to_json(f.V)}, {"T", matrices_to_json(f.T)},      {"W", matrices_to_json(f.W)}};
    return j;
}

inline std::string serialize_bundle(const ControllerBundle& b)
{
    return io::dump(bundle_to_json(b));
}

inline ControllerBundle bundle_from_json(const io::Json& j)
{
    using detail::field;
    const std::string where = "bundle";
    const io::Json& version = field(j, "version", where);
    if (!version.is_number_integer() || version.get<int>() != ControllerBundle::current_version)
        throw Error(ErrorCode::version_mismatch, "bundle: unsupported version " + version.dump() + " (expected " +
                                                     std::to_string(ControllerBundle::current_version) + ")");
    ControllerBundle b;
    b.version = version.get<int>();
    const io::Json& hash = field(j, "spec_hash", where);
    if (!hash.is_string())
        throw Error(ErrorCode::parse_error, "bundle: spec_hash must be a string");
    b.spec_hash = hash.get<std::string>();
    b.config = io::config_from_json(field(j, "config", where));
    if (io::spec_hash(b.config) != b.spec_hash)
        throw Error(ErrorCode::parse_error, "bundle: spec_hash does not match the embedded config");
    b.y0 = io::vector_from_json(field(j, "y0", where), "y0");

    const io::Json& g = field(j, "gain", where);
    b.gain.K = io::matrix_from_json(field(g, "K", "gain"), "gain.K");
    b.gain.Pbar = io::matrix_from_json(field(g, "Pbar", "gain"), "gain.Pbar");
    b.gain.rho_bar = io::number_from_json(field(g, "rho_bar", "gain"), "gain.rho_bar");
    b.gain.tau_bar = io::number_from_json(field(g, "tau_bar", "gain"), "gain.tau_bar");
    b.gain.lambda_bar = io::number_from_json(field(g, "lambda_bar", "gain"), "gain.lambda_bar");

    const io::Json& r = field(j, "rpi", where);
    b.rpi.P = io::matrix_from_json(field(r, "P", "rpi"), "rpi.P");
    b.rpi.T = io::matrix_from_json(field(r, "T", "rpi"), "rpi.T");
    b.rpi.rho = io::number_from_json(field(r, "rho", "rpi"), "rpi.rho");
    b.rpi.tau = io::number_from_json(field(r, "tau", "rpi"), "rpi.tau");
    b.rpi.lambda = io::number_from_json(field(r, "lambda", "rpi"), "rpi.lambda");
    b.rpi.sigma = io::number_from_json(field(r, "sigma", "rpi"), "rpi.sigma");

    const io::Json& m = field(j, "multipliers", where);
    b.cost_offset_cap = io::number_from_json(field(m, "cost_offset_cap", "multipliers"), "cost_offset_cap");
    b.multipliers.horizon = b.horizon();
    b.multipliers.tau = detail::vectors_from_json(field(m, "tau", "multipliers"), "tau");
    b.multipliers.tau_n = io::vector_from_json(field(m, "tau_n", "multipliers"), "tau_n");
    b.multipliers.alpha = detail::vectors_from_json(field(m, "alpha", "multipliers"), "alpha");
    b.multipliers.beta = detail::vectors_from_json(field(m, "beta", "multipliers"), "beta");
    b.multipliers.theta = detail::vectors_from_json(field(m, "theta", "multipliers"), "theta");
    b.multipliers.eta = detail::vectors_from_json(field(m, "eta", "multipliers"), "eta");

    const io::Json& f = field(j, "factors", where);
    b.factors.horizon = b.horizon();
    b.factors.L = detail::matrices_from_json(field(f, "L", "factors"), "L");
    b.factors.LN = io::matrix_from_json(field(f, "LN", "factors"), "LN");
    b.factors.U = detail::matrices_from_json(field(f, "U", "factors"), "U");
    b.factors.V = detail::matrices_from_json(field(f, "V", "factors"), "V");
    b.factors.T = detail::matrices_from_json(field(f, "T", "factors"), "T");
    b.factors.W = detail::matrices_from_json(field(f, "W", "factors"), "W");

    // Shape checks against the horizon and the plant dimensions.
    const int n = b.horizon();
    const auto& sys = b.sys();
    if (b.gain.K.rows() != sys.nu() || b.gain.K.cols() != sys.ny() || b.rpi.P.rows() != sys.nx() ||
        b.rpi.P.cols() != sys.nx())
        throw Error(ErrorCode::dimension_mismatch, "bundle: gain or invariant set does not match the plant");
    const auto sized = [](const auto& v, size_t s) { return v.size() == s; };
    if (!sized(b.multipliers.tau, n) || !sized(b.multipliers.alpha, n) || !sized(b.multipliers.beta, n) ||
        !sized(b.multipliers.theta, n + 1) || !sized(b.multipliers.eta, n + 1) || b.multipliers.tau_n.size() != n + 1 ||
        !sized(b.factors.L, n) || !sized(b.factors.U, n) || !sized(b.factors.V, n) || !sized(b.factors.T, n + 1) ||
        !sized(b.factors.W, n + 1))
        throw Error(ErrorCode::dimension_mismatch, "bundle: tables do not match the horizon");
    const BlockCatalog cat = b.catalog();
    for (Family fam : all_families)
        for (int k : family_indices(fam, n)) {
            const QuadBlockSet& blocks = cat.get(fam, k);
            if (b.multipliers.of(fam, k).size() != blocks.num_multipliers() ||
                b.factors.of(fam, k).cols() != blocks.nv())
                throw Error(ErrorCode::dimension_mismatch, std::string("bundle: ") + to_string(fam) + "[" +
                                                               std::to_string(k) + "] has the wrong size");
        }
    return b;
}

inline ControllerBundle parse_bundle(const std::string& text)
{
    return bundle_from_json(io::parse(text, "bundle"));
}

inline void save_bundle(const ControllerBundle& b, const std::string& path)
{
    io::write_file(path, serialize_bundle(b));
}

inline ControllerBundle load_bundle(const std::string& path)
{
    return parse_bundle(io::read_file(path));
}

} // namespace ofmpc
