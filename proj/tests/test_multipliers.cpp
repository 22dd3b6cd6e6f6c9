#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <random>

#include "desk1.hpp"
#include "ofmpc/multipliers.hpp"
#include "ofmpc/synthesis.hpp"
#include "quantities.hpp"
#include "test_support.hpp"

using namespace ofmpc;
namespace ts = testing_support;

namespace {

struct Desk {
    io::PlantConfig cfg;
    Matrix K, P;
    double rho = 0.0;
    BlockCatalog cat;
};

Desk make_desk(int horizon = 3)
{
    Desk d;
    d.cfg = ts::desk1();
    d.cfg.spec.horizon = horizon;
    const Vector y0 = Vector::Constant(1, ts::desk1_y0);
    const GainResult gain = synthesize_gain(d.cfg.sys, d.cfg.spec, y0);
    const RpiResult rpi = synthesize_rpi(d.cfg.sys, d.cfg.spec, gain, y0);
    d.K = gain.K;
    d.P = rpi.P();
    d.rho = rpi.rho;
    d.cat = build_catalog(d.cfg.sys, d.cfg.spec, d.K, d.P);
    return d;
}

/// E + sum tau N + A^T X^{-1} A assembled from the raw blocks; nullopt when X is not positive definite.
std::optional<Matrix> lifted_oracle(const QuadBlockSet& b, const Vector& tau)
{
    Matrix e = b.E, a = b.D, x = -b.F - tau(b.stages) * b.S_bar;
    for (int i = 0; i < b.stages; ++i) {
        e += tau(i) * b.N[i];
        a += tau(i) * b.M[i];
        x -= tau(i) * b.Z[i];
    }
    x = 0.5 * (x + x.transpose());
    if (x.size() > 0 && ts::jacobi_min_eig(x) <= 0)
        return std::nullopt;
    Matrix l = e;
    if (x.size() > 0)
        l += a.transpose() * x.inverse() * a;
    return Matrix(0.5 * (l + l.transpose()));
}

double objective_oracle(const QuadBlockSet& b, const Vector& tau, std::optional<double> cap)
{
    const auto l = lifted_oracle(b, tau);
    if (!l)
        return std::numeric_limits<double>::infinity();
    const double lam = ts::jacobi_eigenvalues(*l).maxCoeff();
    if (!cap)
        return lam;
    const double margin = *cap - tau(b.stages);
    return margin > 0 ? lam / margin : std::numeric_limits<double>::infinity();
}

/// Best objective over a grid on [0, hi0] x [0, hi1) (the cap endpoint is excluded).
double grid_minimum(const QuadBlockSet& b, std::optional<double> cap, double hi0, double hi1, int points = 200)
{
    double best = std::numeric_limits<double>::infinity();
    Vector tau(2);
    for (int i = 0; i < points; ++i)
        for (int j = 0; j < points; ++j) {
            tau << hi0 * i / (points - 1), hi1 * (j + 0.5) / points;
            best = std::min(best, objective_oracle(b, tau, cap));
        }
    return best;
}

} // namespace

TEST_CASE("single-stage cost family matches a 200x200 grid", "[multipliers]")
{
    const Desk d = make_desk(1);
    const QuadBlockSet& b = d.cat.cost[0];
    REQUIRE(b.num_multipliers() == 2);
    MultiplierOptions opt;
    const auto sol = solve_family(Family::cost, d.cat, d.cfg.spec, d.rho, opt);
    REQUIRE(sol.size() == 1);
    const double found = objective_oracle(b, sol[0], std::nullopt);
    const double grid = grid_minimum(b, std::nullopt, std::max(1.0, 4.0 * sol[0](0)), opt.cost_offset_cap);
    CHECK(found <= grid + 2.0 * opt.lexicographic_slack * (1.0 + grid));
    CHECK(std::abs(found - grid) <= 0.01 * grid);
    CHECK(sol[0](1) <= opt.cost_offset_cap);
}

TEST_CASE("every two-multiplier instance on the desk plant matches a grid", "[multipliers]")
{
    const Desk d = make_desk();
    const MultiplierOptions opt;
    for (Family f : {Family::cost, Family::input, Family::rate, Family::output, Family::nonmeas}) {
        const int k = family_first(f);
        const QuadBlockSet& b = d.cat.get(f, k);
        REQUIRE(b.num_multipliers() == 2);
        const auto cap = family_cap(f, d.cfg.spec, d.rho);
        const Vector tau = solve_family(f, d.cat, d.cfg.spec, d.rho, opt).at(k);
        const double found = objective_oracle(b, tau, cap);
        const double hi1 = cap ? *cap : opt.cost_offset_cap;
        const double grid = grid_minimum(b, cap, std::max(1.0, 4.0 * tau(0)), hi1);
        INFO(to_string(f) << " tau = " << tau.transpose() << " found " << found << " grid " << grid);
        CHECK(found <= grid + 2.0 * opt.lexicographic_slack * (1.0 + grid));
        CHECK(std::abs(found - grid) <= 0.01 * grid);
    }
}

TEST_CASE("without uncertainty the stage multipliers stay at their lower bounds", "[multipliers]")
{
    Desk d = make_desk();
    d.cfg.sys.bp.setZero();
    d.cfg.sys.cq.setZero();
    d.cfg.sys.dq.setZero();
    d.cat = build_catalog(d.cfg.sys, d.cfg.spec, d.K, d.P);
    const MultiplierTable t = solve_multipliers(d.cat, d.cfg.spec, d.rho);
    for (Family f : all_families)
        for (int k : family_indices(f, t.horizon)) {
            const Vector& tau = t.of(f, k);
            const Vector& prev = f == Family::terminal || k == 0 || (k == 1 && (f == Family::output || f == Family::nonmeas))
                                     ? Vector()
                                     : t.of(f, k - 1);
            for (Eigen::Index h = 0; h + 1 < tau.size(); ++h) {
                const double lower = h >= 1 && h - 1 < prev.size() ? prev(h - 1) : 0.0;
                INFO(to_string(f) << "[" << k << "][" << h << "]");
                CHECK(tau(h) <= lower + 1e-6);
            }
        }
}

TEST_CASE("desk plant multiplier table satisfies the chains and the caps", "[multipliers]")
{
    const Desk d = make_desk();
    const MultiplierTable t = solve_multipliers(d.cat, d.cfg.spec, d.rho);
    const SynthesisSpec& s = d.cfg.spec;
    const int n = s.horizon;

    REQUIRE(t.tau.size() == static_cast<size_t>(n));
    REQUIRE(t.tau_n.size() == n + 1);
    for (int k = 0; k < n; ++k)
        REQUIRE(t.tau[k].size() == k + 2);
    for (int k = 1; k < n; ++k) {
        REQUIRE(t.alpha[k].size() == k + 1);
        REQUIRE(t.beta[k].size() == k + 1);
    }
    for (int k = 1; k <= n; ++k) {
        REQUIRE(t.theta[k].size() == k + 1);
        REQUIRE(t.eta[k].size() == k + 1);
    }

    auto chain = [](const std::vector<Vector>& v, int from, int to) {
        for (int k = from; k <= to; ++k)
            for (Eigen::Index h = 1; h < v[k].size(); ++h)
                if (v[k](h) < v[k - 1](h - 1))
                    return false;
        return true;
    };
    CHECK(chain(t.tau, 1, n - 1));
    CHECK(chain(t.alpha, 1, n - 1));
    CHECK(chain(t.beta, 1, n - 1));
    CHECK(chain(t.theta, 2, n));
    CHECK(chain(t.eta, 2, n));

    for (Family f : all_families)
        for (int k : family_indices(f, n))
            CHECK(t.of(f, k).minCoeff() >= 0.0);
    for (int k = 1; k < n; ++k) {
        CHECK(s.u_max * s.u_max - t.alpha[k](k) > 0);
        CHECK(s.du_max * s.du_max - t.beta[k](k) > 0);
    }
    for (int k = 1; k <= n; ++k) {
        CHECK(s.x_max * s.x_max - t.theta[k](k) > 0);
        CHECK(1.0 - t.eta[k](k) > 0);
    }
    CHECK(d.rho - t.tau_n(n) > 0);
    CHECK(monotonicity_violations(t).empty());
    CHECK(table_violations(t, s, d.rho).empty());
}

TEST_CASE("chain lower bounds never improve the objective", "[multipliers]")
{
    const Desk d = make_desk();
    MultiplierOptions chained, free;
    free.monotonicity = false;
    for (Family f : all_families) {
        if (f == Family::terminal)
            continue;
        const auto cap = family_cap(f, d.cfg.spec, d.rho);
        const auto a = solve_family(f, d.cat, d.cfg.spec, d.rho, chained);
        const auto b = solve_family(f, d.cat, d.cfg.spec, d.rho, free);
        for (int k : family_indices(f, d.cat.horizon)) {
            const QuadBlockSet& blocks = d.cat.get(f, k);
            const double with = objective_oracle(blocks, a[k], cap);
            const double without = objective_oracle(blocks, b[k], cap);
            INFO(to_string(f) << "[" << k << "] with " << with << " without " << without);
            CHECK(without <= with * (1.0 + 1e-5) + 1e-9);
        }
    }
}

TEST_CASE("factor tables reconstruct their lifted matrices", "[multipliers]")
{
    const Desk d = make_desk();
    const MultiplierTable t = solve_multipliers(d.cat, d.cfg.spec, d.rho);
    const FactorTable ft = compute_factors(t, d.cat);
    for (Family f : all_families)
        for (int k : family_indices(f, t.horizon)) {
            const QuadBlockSet& b = d.cat.get(f, k);
            const Matrix& r = ft.of(f, k);
            const auto l = lifted_oracle(b, t.of(f, k));
            REQUIRE(l);
            INFO(to_string(f) << "[" << k << "]");
            CHECK(r.cols() == b.nv());
            CHECK((r.transpose() * r - *l).cwiseAbs().maxCoeff() <= 1e-6 * std::max(1.0, l->norm()));
        }
}

TEST_CASE("factored bounds dominate the physical quantities", "[multipliers]")
{
    const Desk d = make_desk();
    const MultiplierTable t = solve_multipliers(d.cat, d.cfg.spec, d.rho);
    const FactorTable ft = compute_factors(t, d.cat);
    const auto& sys = d.cfg.sys;
    const int n = d.cfg.spec.horizon;
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 1000; ++trial) {
        const Vector x0 = ts::sample_in_ds(rng, sys, d.cfg.spec.s, 2.0);
        const Vector c = ts::random_vector(rng, (n + 1) * sys.nu(), trial % 2 == 0 ? 0.3 : 1.5);
        const ts::Rollout r = ts::rollout(rng, sys, d.K, x0, c, n + 1);
        for (Family f : all_families)
            for (int k : family_indices(f, n)) {
                const QuadBlockSet& b = d.cat.get(f, k);
                const Vector v = b.v_of(x0.head(sys.ny()), c);
                const double bound = t.offset(f, k) + (ft.of(f, k) * v).squaredNorm();
                const double direct = ts::family_quantity(f, k, sys, d.cfg.spec, d.P, r);
                INFO(to_string(f) << "[" << k << "] bound " << bound << " direct " << direct);
                REQUIRE(direct <= bound + 1e-9 * std::max(1.0, bound));
            }
    }
}

TEST_CASE("hand-computable factors", "[multipliers]")
{
    QuadBlockSet b;
    b.family = Family::cost;
    b.stages = 1;
    b.c_blocks = 1;
    b.ny = 1;
    b.nu = 1;
    b.nna = 1;
    b.np = 1;
    b.E = Matrix::Zero(2, 2);
    b.E.diagonal() << 1.0, 2.0;
    b.D = Matrix::Zero(2, 2);
    b.D(0, 0) = 2.0;
    b.F = -Matrix::Identity(2, 2);
    b.N = {Matrix::Zero(2, 2)};
    b.N[0](0, 0) = 1.0;
    b.M = {Matrix::Zero(2, 2)};
    b.Z = {Matrix::Zero(2, 2)};
    b.H = {Matrix::Zero(2, 2)};
    b.S_bar = Matrix::Zero(2, 2);

    SECTION("diagonal toy blocks")
    {
        // X = I, A = D, so E + 3 N + D^T D = diag(8, 2).
        const Matrix l = lifted_matrix(b, Vector::Map(std::array<double, 2>{3.0, 0.0}.data(), 2));
        const Matrix r = lmi::cholesky_psd(lmi::SymBlock(l)).factor;
        Matrix expected = Matrix::Zero(2, 2);
        expected.diagonal() << std::sqrt(8.0), std::sqrt(2.0);
        CHECK((r.cwiseAbs() - expected).cwiseAbs().maxCoeff() <= 1e-12);
    }
    SECTION("identity lifted matrix gives the identity factor")
    {
        b.E = Matrix::Identity(2, 2);
        b.D.setZero();
        b.N[0].setZero();
        const Matrix r = lmi::cholesky_psd(lmi::SymBlock(lifted_matrix(b, Vector::Zero(2)))).factor;
        CHECK((r - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() <= 1e-15);
    }
    SECTION("a corrupted table is rejected")
    {
        b.S_bar(0, 0) = 1.0;
        Vector tau(2);
        tau << 0.0, 5.0;
        CHECK_THROWS_MATCHES(lifted_matrix(b, tau), Error,
                             Catch::Matchers::Predicate<Error>([](const Error& e) { return e.code() == ErrorCode::not_psd; }));
    }
}

TEST_CASE("coincident multiplier bounds are handled as constants", "[multipliers]")
{
    const Desk d = make_desk();
    MultiplierOptions opt;
    opt.cost_offset_cap = 1.0;
    const auto cost = solve_family(Family::cost, d.cat, d.cfg.spec, d.rho, opt);
    for (int k = 0; k < d.cat.horizon; ++k)
        CHECK(cost[k](k + 1) <= 1.0);
    for (double cap : {1.0, 100.0}) {
        opt.cost_offset_cap = cap;
        const MultiplierTable t = solve_multipliers(d.cat, d.cfg.spec, d.rho, opt);
        CHECK(monotonicity_violations(t).empty());
        CHECK_NOTHROW(compute_factors(t, d.cat));
    }
}
