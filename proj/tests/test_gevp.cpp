#include <catch_amalgamated.hpp>

#include <cstdio>
#include <random>

#include "ofmpc/lmi/gevp.hpp"
#include "ofmpc/lmi/sdpa.hpp"
#include "test_support.hpp"

using namespace ofmpc;
using namespace ofmpc::lmi;
using Catch::Approx;
namespace ts = testing_support;

namespace {

Matrix scalar(double v)
{
    return Matrix::Constant(1, 1, v);
}

GevpProblem empty_problem(Eigen::Index nv, Eigen::Index nw, int m)
{
    GevpProblem p;
    p.e0 = Matrix::Zero(nv, nv);
    p.a0 = Matrix::Zero(nw, nv);
    p.x0 = Matrix::Zero(nw, nw);
    p.e_terms.assign(m, Matrix::Zero(nv, nv));
    p.a_terms.assign(m, Matrix::Zero(nw, nv));
    p.x_terms.assign(m, Matrix::Zero(nw, nw));
    p.lower = Vector::Zero(m);
    p.upper = Vector::Constant(m, std::numeric_limits<double>::infinity());
    return p;
}

/// Minimum of the objective over a uniform grid on the box.
double grid_min(const GevpProblem& p, int points)
{
    double best = std::numeric_limits<double>::infinity();
    const int m = p.num_multipliers();
    Vector tau(m);
    if (m == 1) {
        for (int i = 0; i < points; ++i) {
            tau(0) = p.lower(0) + (p.upper(0) - p.lower(0)) * i / (points - 1.0);
            best = std::min(best, p.objective(tau));
        }
        return best;
    }
    for (int i = 0; i < points; ++i) {
        for (int j = 0; j < points; ++j) {
            tau(0) = p.lower(0) + (p.upper(0) - p.lower(0)) * i / (points - 1.0);
            tau(1) = p.lower(1) + (p.upper(1) - p.lower(1)) * j / (points - 1.0);
            best = std::min(best, p.objective(tau));
        }
    }
    return best;
}

} // namespace

TEST_CASE("GEVP decoupled case returns lambda_max(E) with multipliers at the lower bound")
{
    std::mt19937_64 rng(1);
    GevpProblem p = empty_problem(3, 2, 1);
    Matrix a = ts::random_matrix(rng, 3, 3);
    p.e0 = a * a.transpose();
    p.x_terms[0] = Matrix::Identity(2, 2);
    p.lower(0) = 0.25;
    p.lexicographic_slack = 1e-6;
    const auto r = solve_min_max_eig(p);
    CHECK(r.objective == Approx(max_eig(p.e0)).epsilon(1e-6));
    CHECK(r.tau(0) == Approx(0.25).margin(1e-6));
}

TEST_CASE("GEVP scalar coupled instance matches calculus and grid")
{
    // E = 1 + tau, A = 1, X = tau - 1: f = 1 + tau + 1/(tau - 1), minimum 4 at tau = 2.
    GevpProblem p = empty_problem(1, 1, 1);
    p.e0 = scalar(1.0);
    p.e_terms[0] = scalar(1.0);
    p.a0 = scalar(1.0);
    p.x0 = scalar(-1.0);
    p.x_terms[0] = scalar(1.0);
    p.lower(0) = 1.0;
    p.upper(0) = 10.0;
    const auto r = solve_min_max_eig(p);
    CHECK(r.objective == Approx(4.0).epsilon(1e-6));
    CHECK(r.tau(0) == Approx(2.0).epsilon(1e-3));
    const double g = grid_min(p, 200);
    CHECK(std::abs(r.objective - g) <= 0.01 * g);
}

TEST_CASE("GEVP two-multiplier instances match a 200x200 grid")
{
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(0.1, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        GevpProblem p = empty_problem(2, 2, 2);
        Matrix b = ts::random_matrix(rng, 2, 2, 0.5);
        p.e0 = b * b.transpose() + 0.1 * Matrix::Identity(2, 2);
        Matrix n0 = ts::random_matrix(rng, 2, 1);
        p.e_terms[0] = u(rng) * n0 * n0.transpose();
        Matrix n1 = ts::random_matrix(rng, 2, 1);
        p.e_terms[1] = u(rng) * n1 * n1.transpose();
        p.a0 = ts::random_matrix(rng, 2, 2);
        p.a_terms[0] = 0.2 * ts::random_matrix(rng, 2, 2);
        p.x0 = -0.2 * Matrix::Identity(2, 2);
        p.x_terms[0] = Eigen::Vector2d(1.0, 0.1).asDiagonal();
        p.x_terms[1] = Eigen::Vector2d(0.1, 1.0).asDiagonal();
        p.upper = Vector::Constant(2, 6.0);
        if (trial % 2 == 1)
            p.cap = GevpProblem::Cap{1, 8.0};
        const auto r = solve_min_max_eig(p);
        const double g = grid_min(p, 200);
        INFO("trial " << trial << " sdp " << r.objective << " grid " << g);
        CHECK(r.objective <= g * (1.0 + 1e-6));
        CHECK(std::abs(r.objective - g) <= 0.01 * g);
    }
}

TEST_CASE("GEVP with empty feasible set reports no valid multiplier")
{
    GevpProblem p = empty_problem(1, 1, 1);
    p.e0 = scalar(1.0);
    p.x0 = scalar(-1.0);
    p.x_terms[0] = scalar(-1.0);
    p.a0 = scalar(1.0);
    try {
        (void)solve_min_max_eig(p);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::no_valid_multiplier);
    }

    GevpProblem q = empty_problem(1, 1, 1);
    q.e0 = scalar(1.0);
    q.x_terms[0] = scalar(1.0);
    q.lower(0) = 2.0;
    q.upper(0) = 1.0;
    try {
        (void)solve_min_max_eig(q);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::no_valid_multiplier);
    }
}

TEST_CASE("SDPA export: minimal problem is five lines and round-trips")
{
    LmiProblem p;
    p.num_variables = 1;
    p.objective = Vector::Ones(1);
    LmiConstraint c;
    c.constant = Matrix::Zero(1, 1);
    c.terms.emplace_back(0, Matrix::Ones(1, 1));
    p.constraints.push_back(c);
    const std::string text = to_sdpa(p);
    CHECK(std::count(text.begin(), text.end(), '\n') == 5);
    const LmiProblem back = from_sdpa(text);
    CHECK(to_sdpa(back) == text);
}

TEST_CASE("SDPA round trip is bit-exact on random problems")
{
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        LmiProblem p;
        p.num_variables = 4;
        p.objective = ts::random_vector(rng, 4);
        for (int b = 0; b < 3; ++b) {
            LmiConstraint c;
            const Eigen::Index n = 1 + (trial + b) % 4;
            c.constant = symmetrize(ts::random_matrix(rng, n, n)) * 1e3;
            for (int v = 0; v < 4; ++v)
                if ((v + b + trial) % 3 != 0)
                    c.terms.emplace_back(v, symmetrize(ts::random_matrix(rng, n, n)) * 1e-7);
            c.strict = (b == 1);
            p.constraints.push_back(c);
        }
        const LmiProblem q = from_sdpa(to_sdpa(p));
        REQUIRE(q.constraints.size() == p.constraints.size());
        for (int v = 0; v < 4; ++v)
            CHECK(q.objective(v) == p.objective(v));
        for (std::size_t b = 0; b < p.constraints.size(); ++b) {
            CHECK((q.constraints[b].constant - p.constraints[b].constant).cwiseAbs().maxCoeff() == 0.0);
            CHECK(q.constraints[b].strict == p.constraints[b].strict);
            REQUIRE(q.constraints[b].terms.size() == p.constraints[b].terms.size());
            for (std::size_t t = 0; t < p.constraints[b].terms.size(); ++t) {
                CHECK(q.constraints[b].terms[t].first == p.constraints[b].terms[t].first);
                CHECK((q.constraints[b].terms[t].second - p.constraints[b].terms[t].second).cwiseAbs().maxCoeff() ==
                      0.0);
            }
        }
    }
}

TEST_CASE("SDPA export rejects an empty problem and survives a file round trip")
{
    LmiProblem empty;
    empty.objective = Vector(0);
    CHECK_THROWS_AS(to_sdpa(empty), Error);

    LmiProblem p;
    p.num_variables = 2;
    p.objective = Eigen::Vector2d(1.0, -0.5);
    LmiConstraint c;
    c.constant = Matrix::Identity(2, 2);
    c.terms.emplace_back(0, Matrix::Ones(2, 2));
    c.terms.emplace_back(1, Eigen::Vector2d(1.0, 2.0).asDiagonal().toDenseMatrix());
    p.constraints.push_back(c);
    const std::string path = "gevp_sdpa_roundtrip.dat-s";
    export_sdpa(p, path);
    const LmiProblem q = import_sdpa(path);
    std::remove(path.c_str());
    CHECK(to_sdpa(q) == to_sdpa(p));
}
