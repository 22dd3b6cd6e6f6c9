#pragma once

#include <random>
#include <vector>

#include "ofmpc/prediction.hpp"
#include "test_support.hpp"

namespace testing_support {

/// Open-loop prediction run driven by an admissible uncertainty: p_j = delta_j q_j with |delta_j| <= 1.
struct Rollout {
    std::vector<Vector> x, u, p, q;
    Vector c, p_stack;
};

/// Random contraction of size rows x cols with spectral norm at most one.
inline Matrix random_contraction(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols)
{
    const Matrix a = random_matrix(rng, rows, cols);
    const double s = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    return s * svd.matrixU() * svd.matrixV().transpose();
}

/// x_{j+1} = Phi x_j + G u_j + B_p p_j with u_j = K C x_j + c_j and p_j = delta_j q_j.
inline Rollout rollout(std::mt19937_64& rng, const ofmpc::UncertainSystem& sys, const Matrix& K, const Vector& x0,
                       const Vector& c, int steps)
{
    Rollout r;
    r.c = c;
    r.x.push_back(x0);
    r.p_stack = Vector::Zero(steps * sys.np());
    for (int j = 0; j < steps; ++j) {
        const Vector& x = r.x.back();
        r.u.push_back(K * (sys.c * x) + c.segment(j * sys.nu(), sys.nu()));
        r.q.push_back(sys.cq * x + sys.dq * r.u.back());
        r.p.push_back(random_contraction(rng, sys.np(), sys.cq.rows()) * r.q.back());
        r.p_stack.segment(j * sys.np(), sys.np()) = r.p.back();
        r.x.push_back(sys.phi * x + sys.g * r.u.back() + sys.bp * r.p.back());
    }
    return r;
}

/// Physical quantity bounded by a family at index k, evaluated on a rollout of at least N + 1 steps.
inline double family_quantity(ofmpc::Family f, int k, const ofmpc::UncertainSystem& sys,
                              const ofmpc::SynthesisSpec& spec, const Matrix& P, const Rollout& r)
{
    using ofmpc::Family;
    const int n = spec.horizon;
    switch (f) {
    case Family::cost: {
        const Matrix& w = k == n - 1 ? P : spec.rx;
        const Vector ck = r.c.segment(k * sys.nu(), sys.nu());
        return r.x[k + 1].dot(w * r.x[k + 1]) + ck.dot(spec.ru * ck);
    }
    case Family::input: return r.u[k].squaredNorm();
    case Family::rate: return (r.u[k] - r.u[k - 1]).squaredNorm();
    case Family::output: return (sys.c * r.x[k]).squaredNorm();
    case Family::nonmeas: {
        const Vector xna = r.x[k].tail(sys.nna());
        return xna.dot(spec.s * xna);
    }
    case Family::terminal: return r.x[n].dot(P * r.x[n]);
    }
    return 0.0;
}

/// Point of D(S): x_na scaled into the ellipse x_na^T S x_na <= 1 (radius uniform in [0, 1]).
inline Vector sample_in_ds(std::mt19937_64& rng, const ofmpc::UncertainSystem& sys, const Matrix& s,
                           double y_scale = 1.0)
{
    Vector x(sys.nx());
    x.head(sys.ny()) = random_vector(rng, sys.ny(), y_scale);
    Vector d = random_vector(rng, sys.nna());
    const double q = d.dot(s * d);
    const double radius = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    x.tail(sys.nna()) = q > 0 ? Vector(d * (radius / std::sqrt(q))) : Vector(Vector::Zero(sys.nna()));
    return x;
}

} // namespace testing_support
