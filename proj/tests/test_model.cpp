#include <catch_amalgamated.hpp>

#include <random>

#include "desk1.hpp"
#include "ofmpc/io/config.hpp"
#include "ofmpc/model.hpp"

using namespace ofmpc;
namespace ts = testing_support;

namespace {

ErrorCode first_code(const UncertainSystem& sys, const SynthesisSpec& spec)
{
    try {
        validate(sys, spec);
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("validation unexpectedly succeeded");
    return ErrorCode::invalid_input;
}

} // namespace

TEST_CASE("validate accepts the desk plant")
{
    const auto c = ts::desk1();
    CHECK_NOTHROW(validate(c.sys, c.spec));
    CHECK(check_model(c.sys, c.spec).empty());
}

TEST_CASE("validate reports structural violations")
{
    auto c = ts::desk1();
    c.sys.c = (Matrix(1, 2) << 0.0, 1.0).finished();
    CHECK(first_code(c.sys, c.spec) == ErrorCode::c_not_canonical);

    c = ts::desk1();
    c.spec.ru = Matrix::Zero(1, 1);
    CHECK(first_code(c.sys, c.spec) == ErrorCode::ru_not_pd);

    c = ts::desk1();
    c.sys.c = Matrix::Identity(2, 2);
    c.spec.s = Matrix(0, 0);
    CHECK(first_code(c.sys, c.spec) == ErrorCode::invalid_input);

    c = ts::desk1();
    c.sys.g = Matrix::Zero(3, 1);
    CHECK(first_code(c.sys, c.spec) == ErrorCode::dimension_mismatch);

    c = ts::desk1();
    c.spec.ru = Matrix::Zero(1, 1);
    c.spec.u_max = -1.0;
    CHECK(check_model(c.sys, c.spec).size() == 2);
}

TEST_CASE("ds_contains")
{
    auto c = ts::desk1();
    CHECK(ds_contains(c.spec, Eigen::Vector2d(100.0, 0.0)));
    CHECK_FALSE(ds_contains(c.spec, Eigen::Vector2d(0.0, 1.5)));
    c.spec.s = Matrix::Constant(1, 1, 4.0);
    CHECK(ds_contains(c.spec, Eigen::Vector2d(0.0, 0.5)));

    std::mt19937_64 rng(4);
    std::normal_distribution<double> nd;
    for (int i = 0; i < 1000; ++i) {
        SynthesisSpec s;
        s.s = Matrix::Constant(1, 1, std::abs(nd(rng)) + 0.1);
        const Vector x = Eigen::Vector2d(nd(rng), nd(rng));
        const double alpha = 0.1 + std::abs(nd(rng));
        SynthesisSpec scaled = s;
        scaled.s = s.s / (alpha * alpha);
        CHECK(ds_contains(s, x) == ds_contains(scaled, alpha * x, 1e-12));
    }
}

TEST_CASE("make_diag_S contains its box")
{
    CHECK(make_diag_S(Vector::Ones(1))(0, 0) == 1.0);
    CHECK_THROWS_AS(make_diag_S(Vector::Zero(1)), Error);

    const Matrix s2 = make_diag_S(Vector::Ones(2));
    const Vector corner = Vector::Ones(2);
    CHECK(corner.dot(s2 * corner) == Catch::Approx(1.0));

    const Vector b = Eigen::Vector3d(0.5, 2.0, 1.5);
    const Matrix s3 = make_diag_S(b);
    SynthesisSpec spec;
    spec.s = s3;
    for (int mask = 0; mask < 8; ++mask) {
        Vector x(4);
        x(0) = 7.0;
        for (int i = 0; i < 3; ++i)
            x(i + 1) = ((mask >> i) & 1 ? 1.0 : -1.0) * b(i);
        CHECK(ds_contains(spec, x, 1e-12));
    }
}

TEST_CASE("config parsing")
{
    const auto c = io::load_config(OFMPC_SOURCE_DIR "/configs/desk1.json");
    const auto ref = ts::desk1();
    CHECK(c.sys.phi == ref.sys.phi);
    CHECK(c.sys.c == ref.sys.c);
    CHECK(c.spec.horizon == 3);
    CHECK(io::spec_hash(c) == io::spec_hash(ref));

    auto j = io::config_to_json(ref);
    j["bogus"] = 1;
    CHECK_THROWS_AS(io::config_from_json(j), Error);

    auto j2 = io::config_to_json(ref);
    j2.erase("phi");
    CHECK_THROWS_AS(io::config_from_json(j2), Error);

    auto j3 = io::config_to_json(ref);
    j3["u_max"] = 2.0;
    CHECK(io::spec_hash(io::config_from_json(j3)) != io::spec_hash(ref));

    // Round trip through text preserves every double exactly.
    const auto back = io::config_from_json(io::parse(io::dump(io::config_to_json(ref)), "roundtrip"));
    CHECK(back.sys.g == ref.sys.g);
    CHECK(back.sys.bp == ref.sys.bp);
}
