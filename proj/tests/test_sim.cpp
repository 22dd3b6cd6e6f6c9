#include <catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "desk1.hpp"
#include "ofmpc/verify.hpp"
#include "quantities.hpp"

using namespace ofmpc;
namespace ts = testing_support;

namespace {

const ControllerBundle& desk_bundle()
{
    static const ControllerBundle b = synthesize_bundle(ts::desk1(), Vector::Constant(1, ts::desk1_y0));
    return b;
}

Vector desk_x0(double x1, double x2)
{
    Vector x(2);
    x << x1, x2;
    return x;
}

UncertainSystem wide_system(std::mt19937_64& rng)
{
    UncertainSystem s;
    s.phi = ts::random_matrix(rng, 3, 3, 0.4);
    s.g = ts::random_matrix(rng, 3, 1);
    s.bp = ts::random_matrix(rng, 3, 2, 0.2);
    s.c = UncertainSystem::canonical_c(1, 3);
    s.cq = ts::random_matrix(rng, 2, 3);
    s.dq = ts::random_matrix(rng, 2, 1);
    return s;
}

} // namespace

TEST_CASE("plant step under the basic uncertainty policies", "[sim]")
{
    const auto& sys = desk_bundle().sys();
    const Vector x = desk_x0(0.3, -0.2), u = Vector::Constant(1, 0.4);

    const PlantStep nominal = step_plant(sys, x, u, Matrix::Zero(1, 1));
    CHECK(nominal.x_next == Vector(sys.phi * x + sys.g * u));
    CHECK(nominal.p.isZero(0.0));
    CHECK(nominal.q == Vector(sys.cq * x + sys.dq * u));

    const PlantStep ident = step_plant(sys, x, u, Matrix::Identity(1, 1));
    CHECK(ident.p == ident.q);
    CHECK(ident.x_next == Vector(sys.phi * x + sys.g * u + sys.bp * ident.q));
}

TEST_CASE("random contractions never amplify q", "[sim]")
{
    std::mt19937_64 rng(12);
    const UncertainSystem sys = wide_system(rng);
    UncertaintySource src({PolicyMode::random_contraction, 99, {}}, sys, Matrix::Identity(3, 3));
    for (int i = 0; i < 10000; ++i) {
        const Vector x = ts::random_vector(rng, 3), u = ts::random_vector(rng, 1);
        const Vector q = sys.cq * x + sys.dq * u;
        const Matrix delta = src.draw(x, u, q);
        REQUIRE(delta.rows() == 2);
        REQUIRE(delta.cols() == 2);
        REQUIRE(spectral_norm(delta) <= 1.0 + 1e-12);
        REQUIRE((delta * q).norm() <= q.norm() * (1.0 + 1e-12));
    }
}

TEST_CASE("worst-case sign policy saturates the bound along B_p' P x+", "[sim]")
{
    std::mt19937_64 rng(13);
    const UncertainSystem sys = wide_system(rng);
    Matrix P = ts::random_matrix(rng, 3, 3);
    P = P * P.transpose() + Matrix::Identity(3, 3);
    UncertaintySource src({PolicyMode::worst_case_sign, 0, {}}, sys, P);
    for (int i = 0; i < 200; ++i) {
        const Vector x = ts::random_vector(rng, 3), u = ts::random_vector(rng, 1);
        const Vector q = sys.cq * x + sys.dq * u;
        const Vector p = src.draw(x, u, q) * q;
        const Vector d = sys.bp.transpose() * P * (sys.phi * x + sys.g * u);
        CHECK(p.norm() == Catch::Approx(q.norm()).epsilon(1e-12));
        CHECK(p.dot(d) == Catch::Approx(q.norm() * d.norm()).epsilon(1e-10));
        // No other admissible p on the same sphere gives a larger cross term.
        const Vector other = q.norm() * ts::random_vector(rng, 2).normalized();
        CHECK(other.dot(d) <= p.dot(d) + 1e-12);
    }
}

TEST_CASE("constant uncertainty must be a contraction of the right shape", "[sim]")
{
    const auto& sys = desk_bundle().sys();
    CHECK_THROWS_AS(UncertaintySource({PolicyMode::constant_matrix, 0, Matrix::Constant(1, 1, 1.5)}, sys,
                                      Matrix::Identity(2, 2)),
                    Error);
    CHECK_THROWS_AS(UncertaintySource({PolicyMode::constant_matrix, 0, Matrix::Identity(2, 2)}, sys,
                                      Matrix::Identity(2, 2)),
                    Error);
    UncertaintySource ok({PolicyMode::constant_matrix, 0, Matrix::Constant(1, 1, -1.0)}, sys, Matrix::Identity(2, 2));
    CHECK(ok.draw(Vector::Zero(2), Vector::Zero(1), Vector::Ones(1))(0, 0) == -1.0);
    CHECK(parse_policy_mode("worst_case_sign") == PolicyMode::worst_case_sign);
    CHECK_THROWS_AS(parse_policy_mode("adversarial"), Error);
}

TEST_CASE("closed loop from the origin stays at the origin", "[sim]")
{
    const ControllerBundle& b = desk_bundle();
    const Trajectory tr = run_closed_loop(b, Vector::Zero(2), 20, {PolicyMode::zero, 0, {}});
    REQUIRE(tr.records.size() == 20);
    for (const auto& r : tr.records) {
        CHECK(r.feasible);
        CHECK(r.x.norm() <= 1e-9);
        CHECK(r.u.norm() <= 1e-6);
    }
    const ClosedLoopReport rep = verify_closed_loop({tr});
    for (const PropertyCheck* c : rep.checks()) {
        INFO(c->name << ": " << c->detail);
        CHECK(c->passed);
    }
}

TEST_CASE("logged margins agree with the re-assembled problems", "[sim]")
{
    const ControllerBundle& b = desk_bundle();
    const Trajectory tr = run_closed_loop(b, desk_x0(0.1, 0.5), 40, {PolicyMode::random_contraction, 4, {}});
    REQUIRE(tr.records.size() == 40);
    Vector u_prev = initial_u_prev(b.sys(), b.spec());
    for (const auto& r : tr.records) {
        const OnlineProblem p = assemble(b, {b.sys().c * r.x, u_prev, r.t});
        REQUIRE(p.constraints.size() == r.margins.size());
        for (size_t i = 0; i < r.margins.size(); ++i)
            CHECK(p.constraints[i].margin(r.J_star, r.c_star) == r.margins[i]);
        CHECK(r.du_norm == (r.u - u_prev).norm());
        CHECK(r.q == Vector(b.sys().cq * r.x + b.sys().dq * r.u));
        CHECK(r.p.norm() <= r.q.norm() * (1.0 + 1e-12));
        u_prev = r.u;
    }
    for (size_t t = 0; t + 1 < tr.records.size(); ++t) {
        const auto& r = tr.records[t];
        const Vector next = b.sys().phi * r.x + b.sys().g * r.u + b.sys().bp * r.p;
        CHECK(tr.records[t + 1].x == next);
    }
}

TEST_CASE("a state far outside the invariant set is flagged at step 0", "[sim]")
{
    const ControllerBundle& b = desk_bundle();
    const Trajectory tr = run_closed_loop(b, desk_x0(5.0, 0.0), 3, {PolicyMode::zero, 0, {}});
    REQUIRE_FALSE(tr.records.empty());
    CHECK_FALSE(tr.records[0].feasible);
    CHECK(tr.records[0].fallback != Fallback::none);
    CHECK(tr.records[0].x.dot(b.rpi.P * tr.records[0].x) > b.rpi.rho);
}

TEST_CASE("identical inputs give identical trajectories", "[sim]")
{
    const ControllerBundle& b = desk_bundle();
    for (PolicyMode m : {PolicyMode::random_contraction, PolicyMode::worst_case_sign}) {
        const Trajectory a = run_closed_loop(b, desk_x0(0.1, -0.4), 30, {m, 17, {}});
        const Trajectory c = run_closed_loop(b, desk_x0(0.1, -0.4), 30, {m, 17, {}});
        REQUIRE(a.records.size() == c.records.size());
        for (size_t t = 0; t < a.records.size(); ++t) {
            const auto& ra = a.records[t];
            const auto& rc = c.records[t];
            CHECK(ra.x == rc.x);
            CHECK(ra.u == rc.u);
            CHECK(ra.c_star == rc.c_star);
            CHECK(ra.J_star == rc.J_star);
            CHECK(ra.p == rc.p);
            CHECK(ra.margins == rc.margins);
        }
        CHECK(a.x_final == c.x_final);
    }
}

TEST_CASE("controller decisions depend only on the measured stream", "[sim]")
{
    const ControllerBundle& b = desk_bundle();
    const Trajectory tr = run_closed_loop(b, desk_x0(0.1, 0.5), 40, {PolicyMode::random_contraction, 8, {}});

    // Replay the measurements into a controller that never sees the plant, once per hidden state.
    for (double hidden : {0.5, -0.9, 0.0}) {
        Controller ctl(b);
        Vector x = desk_x0(tr.records[0].x(0), hidden);
        for (const auto& r : tr.records) {
            x(0) = r.x(0);  // the simulator's unmeasured component is replaced; y is unchanged
            const StepResult s = ctl.step(b.sys().c * x);
            REQUIRE(s.u == r.u);
            REQUIRE(s.c_star == r.c_star);
        }
    }
}

TEST_CASE("trajectory CSV layout", "[sim]")
{
    const ControllerBundle& b = desk_bundle();
    const Trajectory tr = run_closed_loop(b, desk_x0(0.1, 0.2), 5, {PolicyMode::zero, 0, {}});
    std::ostringstream out;
    write_csv(tr, out);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "t,x_1,x_2,u_1,du_norm,y_norm,J_sum,feasible,solve_ms");
    int rows = 0;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ','))
            cells.push_back(cell);
        REQUIRE(cells.size() == 9);
        CHECK(std::stoi(cells[0]) == rows);
        CHECK(std::strtod(cells[1].c_str(), nullptr) == tr.records[rows].x(0));
        CHECK(std::strtod(cells[3].c_str(), nullptr) == tr.records[rows].u(0));
        CHECK(std::strtod(cells[6].c_str(), nullptr) == tr.records[rows].J_sum);
        CHECK(cells[7] == "1");
        ++rows;
    }
    CHECK(rows == 5);
}

TEST_CASE("invariant-set sampler", "[sim][verify]")
{
    const ControllerBundle& b = desk_bundle();
    SECTION("desk plant certificate")
    {
        const RpiReport r = verify_rpi(b, 10000, 1);
        CHECK(r.samples == 10000);
        CHECK(r.passed);
        CHECK(r.max_violation <= 1e-8);
    }
    SECTION("a ten times smaller level set is still invariant")
    {
        CHECK(verify_rpi(b, 10000, 2, 0.1).passed);
    }
    SECTION("no uncertainty input with a stable loop")
    {
        ControllerBundle nb = b;
        nb.config.sys.bp.setZero();
        CHECK(verify_rpi(nb, 2000, 3).passed);
    }
    SECTION("an enlarged gain breaks invariance")
    {
        ControllerBundle bad = b;
        bad.gain.K(0, 0) = 12.0;
        CHECK_FALSE(verify_rpi(bad, 2000, 4).passed);
    }
}

TEST_CASE("sampled initial states lie in the invariant set and in D(S)", "[sim][verify]")
{
    const ControllerBundle& b = desk_bundle();
    const auto xs = sample_initial_states(b, 20, 5);
    REQUIRE(xs.size() == 20);
    for (const auto& x : xs) {
        CHECK(x.dot(b.rpi.P * x) <= b.rpi.rho);
        CHECK(ds_contains(b.spec(), x));
    }
}

TEST_CASE("adversarial rollouts keep the constraints and converge", "[sim][verify]")
{
    const ControllerBundle& b = desk_bundle();
    std::vector<Trajectory> runs;
    for (int i = 0; i < 2; ++i)
        runs.push_back(run_closed_loop(b, desk_x0(0.1, i == 0 ? 0.5 : -0.8), 200,
                                       {i == 0 ? PolicyMode::worst_case_sign : PolicyMode::random_contraction,
                                        static_cast<std::uint64_t>(i), {}}));
    for (const auto& tr : runs)
        for (const auto& r : tr.records)
            REQUIRE(r.feasible);
    const ClosedLoopReport rep = verify_closed_loop(runs);
    INFO(rep.constraints.detail << rep.convergence.detail);
    CHECK(rep.constraints.passed);
    CHECK(rep.convergence.passed);
}

TEST_CASE("broken multiplier monotonicity is caught by the feasibility check", "[sim][verify]")
{
    ControllerBundle bad = desk_bundle();
    REQUIRE(bad.horizon() >= 2);
    bad.multipliers.tau[1](2) = bad.multipliers.tau[0](1) - 1.0;
    REQUIRE_FALSE(monotonicity_violations(bad.multipliers).empty());
    const Trajectory tr = run_closed_loop(bad, Vector::Zero(2), 10, {PolicyMode::zero, 0, {}});
    const ClosedLoopReport rep = verify_closed_loop({tr});
    CHECK_FALSE(rep.feasibility.passed);
    CHECK(rep.feasibility.worst == Catch::Approx(-1.0).margin(1e-6));
    CHECK(rep.constraints.passed);
    CHECK(rep.convergence.passed);
}

TEST_CASE("closed-loop report requires trajectories", "[verify]")
{
    const ClosedLoopReport rep = verify_closed_loop({});
    CHECK_FALSE(rep.passed());
}
