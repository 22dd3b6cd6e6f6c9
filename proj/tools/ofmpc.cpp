#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ofmpc/lmi/sdpa.hpp"
#include "ofmpc/verify.hpp"

using namespace ofmpc;

namespace {

Vector to_vector(const std::vector<double>& v)
{
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::string fmt(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

double spectral_radius(const Matrix& a)
{
    return a.eigenvalues().cwiseAbs().maxCoeff();
}

int cmd_synth(const std::string& config_path, const std::vector<double>& y0, const std::string& out)
{
    const io::PlantConfig config = io::load_config(config_path);
    const ControllerBundle b = synthesize_bundle(config, to_vector(y0));
    save_bundle(b, out);
    const ClosedLoop cl = closed_loop(b.sys(), b.gain.K);
    std::cout << "K = " << b.gain.K.format(Eigen::IOFormat(8, Eigen::DontAlignCols, ", ", "; ", "", "", "[", "]"))
              << "\nrho = " << fmt(b.rpi.rho) << "\nspectral radius of Phi + G K C = "
              << fmt(spectral_radius(cl.phi_k)) << "\nbundle written to " << out << '\n';
    return 0;
}

int cmd_run(const std::string& bundle_path, const std::vector<double>& x0, int steps, const std::string& policy,
            std::uint64_t seed, const std::string& delta, const std::string& out)
{
    const ControllerBundle b = load_bundle(bundle_path);
    UncertaintyPolicy pol{parse_policy_mode(policy), seed, {}};
    if (pol.mode == PolicyMode::constant_matrix) {
        if (delta.empty())
            throw Error(ErrorCode::invalid_input, "constant_matrix needs --delta");
        pol.delta = io::matrix_from_json(io::parse(delta, "--delta"), "--delta");
    }
    const Trajectory tr = run_closed_loop(b, to_vector(x0), steps, pol);
    std::ofstream file(out);
    if (!file)
        throw Error(ErrorCode::io_error, "cannot open " + out);
    write_csv(tr, file);

    int infeasible = 0;
    for (const auto& r : tr.records)
        infeasible += r.feasible ? 0 : 1;
    std::cout << "steps = " << tr.steps << "\ninfeasible steps = " << infeasible
              << "\nmax constraint violation = " << fmt(tr.max_violation) << "\nfinal ||x|| = " << fmt(tr.final_norm)
              << "\ntrajectory written to " << out << '\n';
    return 0;
}

int cmd_verify(const std::string& bundle_path, int rpi_samples, int campaign, int steps, std::uint64_t seed)
{
    const ControllerBundle b = load_bundle(bundle_path);
    bool ok = true;
    auto line = [&](bool passed, const std::string& name, const std::string& detail) {
        ok = ok && passed;
        std::cout << (passed ? "PASS " : "FAIL ") << name << ": " << detail << '\n';
    };

    const double radius = spectral_radius(closed_loop(b.sys(), b.gain.K).phi_k);
    line(radius < 1.0, "nominal stability", "spectral radius " + fmt(radius));

    if (rpi_samples > 0) {
        const RpiReport rpi = verify_rpi(b, rpi_samples, seed);
        line(rpi.passed, "invariance", std::to_string(rpi.samples) + " samples, max x+'Px+ - rho = " +
                                            fmt(rpi.max_violation));
    }
    if (campaign > 0) {
        CampaignOptions opt;
        opt.rollouts = campaign;
        opt.steps = steps;
        opt.seed = seed;
        const ClosedLoopReport rep = verify_closed_loop(run_campaign(b, opt));
        for (const PropertyCheck* c : rep.checks())
            line(c->passed, c->name,
                 "worst " + fmt(c->worst) + (c->detail.empty() ? std::string() : " (" + c->detail + ")"));
    }
    return ok ? 0 : 1;
}

int cmd_export(const std::string& config_path, const std::vector<double>& y0_values, const std::string& problem,
               const std::string& out)
{
    const io::PlantConfig config = io::load_config(config_path);
    const Vector y0 = to_vector(y0_values);
    if (problem == "gain") {
        lmi::export_sdpa(build_gain_sdp(config.sys, config.spec, y0).builder.build(), out);
    } else {
        const GainResult gain = synthesize_gain(config.sys, config.spec, y0);
        const ClosedLoop cl = closed_loop(config.sys, gain.K);
        const SigmaResult sigma = compute_sigma_hat(cl.a_bar, cl.b_bar, cl.c_k, config.spec.du_max);
        const Matrix T = compute_T(sigma.sigma, cl.a_bar, cl.b_bar, cl.c_k, config.spec.du_max);
        lmi::export_sdpa(build_rpi_sdp(config.sys, config.spec, gain, y0, T).builder.build(), out);
    }
    std::cout << problem << " problem written to " << out << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Output-feedback robust MPC for norm-bounded uncertain linear systems"};
    app.require_subcommand(1);

    std::string config, bundle, out, policy = "random_contraction", delta, problem;
    std::vector<double> y0, x0;
    int steps = 200, rpi_samples = 10000, campaign = 0;
    std::uint64_t seed = 1;

    auto* synth = app.add_subcommand("synth", "offline synthesis of a controller bundle");
    synth->add_option("--config", config, "plant configuration (JSON)")->required()->check(CLI::ExistingFile);
    synth->add_option("--y0", y0, "initial measurement, comma separated")->required()->delimiter(',');
    synth->add_option("--out", out, "bundle output path")->required();

    auto* run = app.add_subcommand("run", "closed-loop simulation");
    run->add_option("--bundle", bundle, "controller bundle")->required()->check(CLI::ExistingFile);
    run->add_option("--x0", x0, "initial state, comma separated")->required()->delimiter(',');
    run->add_option("--steps", steps, "number of steps")->check(CLI::NonNegativeNumber);
    run->add_option("--policy", policy, "zero, random_contraction, worst_case_sign or constant_matrix");
    run->add_option("--seed", seed, "uncertainty seed");
    run->add_option("--delta", delta, "constant uncertainty as a JSON matrix");
    run->add_option("--out", out, "trajectory CSV path")->required();

    auto* verify = app.add_subcommand("verify", "invariance and closed-loop checks");
    verify->add_option("--bundle", bundle, "controller bundle")->required()->check(CLI::ExistingFile);
    verify->add_option("--rpi-samples", rpi_samples, "invariance samples")->check(CLI::NonNegativeNumber);
    verify->add_option("--campaign", campaign, "number of rollouts")->check(CLI::NonNegativeNumber);
    verify->add_option("--steps", steps, "steps per rollout")->check(CLI::PositiveNumber);
    verify->add_option("--seed", seed, "sampling seed");

    auto* exp = app.add_subcommand("export-sdpa", "write a synthesis SDP in SDPA sparse format");
    exp->add_option("--config", config, "plant configuration (JSON)")->required()->check(CLI::ExistingFile);
    exp->add_option("--y0", y0, "initial measurement, comma separated")->required()->delimiter(',');
    exp->add_option("--problem", problem, "gain or rpi")->required()->check(CLI::IsMember({"gain", "rpi"}));
    exp->add_option("--out", out, "SDPA output path")->required();

    CLI11_PARSE(app, argc, argv);
    try {
        if (synth->parsed())
            return cmd_synth(config, y0, out);
        if (run->parsed())
            return cmd_run(bundle, x0, steps, policy, seed, delta, out);
        if (verify->parsed())
            return cmd_verify(bundle, rpi_samples, campaign, steps, seed);
        return cmd_export(config, y0, problem, out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
