#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "ptmap/spline_basis.hpp"

using ptmap::KnotVector;
using ptmap::SplineBasis;

namespace {

SplineBasis unit_cubic() { return SplineBasis(KnotVector({0, 1, 2, 3}, 3)); }

SplineBasis wide_cubic() { return SplineBasis(KnotVector({-2, -1, 0, 1, 2, 3, 4}, 3)); }

}  // namespace

TEST_CASE("padded knots repeat the boundary knots degree times") {
    KnotVector k({0, 1, 2, 3}, 3);
    const std::vector<double> expected{0, 0, 0, 0, 1, 2, 3, 3, 3, 3};
    CHECK(k.padded() == expected);
    CHECK(SplineBasis(k).size() == 6);
}

TEST_CASE("make_knots count and placement") {
    std::vector<double> u(27);
    for (int i = 0; i < 27; ++i) u[i] = (i + 0.5) / 27.0;
    CHECK(ptmap::make_knots(u, 3).real().size() == 5);

    const auto xs = oracle::normal_samples(1000, 7);
    const auto k = ptmap::make_knots(xs, 3);
    const auto& r = k.real();
    CHECK(r.size() == 12);  // ceil(1000^(1/3)) + 2
    CHECK(r.front() == doctest::Approx(oracle::quantile(xs, 0.1)).epsilon(1e-14));
    CHECK(r.back() == doctest::Approx(oracle::quantile(xs, 0.9)).epsilon(1e-14));
    const double spacing = r[1] - r[0];
    for (std::size_t i = 1; i < r.size(); ++i) CHECK(std::abs((r[i] - r[i - 1]) - spacing) <= 1e-12);
}

TEST_CASE("make_knots rejects degenerate and short input") {
    std::vector<double> same(20, 1.5);
    CHECK_THROWS_AS(ptmap::make_knots(same, 3), ptmap::DegenerateDimension);
    std::vector<double> mostly(20, 0.0);
    mostly[19] = 1.0;  // q10 == q90
    CHECK_THROWS_AS(ptmap::make_knots(mostly, 3), ptmap::DegenerateDimension);
    CHECK_THROWS(ptmap::make_knots(std::vector<double>{1, 2, 3}, 3));
    std::vector<double> bad(20, 1.0);
    bad[3] = NAN;
    CHECK_THROWS(ptmap::make_knots(bad, 3));
}

TEST_CASE("few unique samples fall back to a small knot count") {
    std::vector<double> v;
    for (int rep = 0; rep < 5; ++rep)
        for (int i = 0; i < 6; ++i) v.push_back(i);
    CHECK(ptmap::make_knots(v, 3).real().size() == 5);  // max(4, 6 - 1)
}

TEST_CASE("degree zero basis is the interval indicator") {
    SplineBasis b(KnotVector({0, 1, 2}, 0));
    CHECK(b.size() == 2);
    const auto v1 = b.eval(0.5);
    CHECK(v1[0] == 1.0);
    CHECK(v1[1] == 0.0);
    const auto v2 = b.eval(1.5);
    CHECK(v2[0] == 0.0);
    CHECK(v2[1] == 1.0);
}

TEST_CASE("partition of unity and nonnegativity inside the knot range") {
    const auto b = wide_cubic();
    for (int i = 0; i <= 600; ++i) {
        const double x = -2.0 + 6.0 * i / 600.0;
        const auto v = b.eval(x);
        CHECK(std::abs(v.sum() - 1.0) <= 1e-12);
        CHECK(v.minCoeff() >= 0.0);
        CHECK(std::abs(b.eval_deriv(x).sum()) <= 1e-12);
    }
}

TEST_CASE("local support on the padded knots") {
    const auto b = wide_cubic();
    const auto& t = b.knots().padded();
    for (int i = 0; i <= 300; ++i) {
        const double x = -2.0 + 6.0 * i / 300.0;
        const auto v = b.eval(x);
        for (int j = 0; j < b.size(); ++j) {
            if (x < t[j] || x > t[j + 4]) CHECK(v[j] == 0.0);
        }
    }
}

TEST_CASE("linear tail matches an exact one-sided derivative oracle") {
    const auto b = unit_cubic();
    // Four-point backward difference is exact for the cubic piece on [2, 3].
    const double h = 0.1;
    const Eigen::VectorXd d3 =
        (11 * b.eval(3.0) - 18 * b.eval(3.0 - h) + 9 * b.eval(3.0 - 2 * h) - 2 * b.eval(3.0 - 3 * h)) / (6 * h);
    const Eigen::VectorXd expected = b.eval(3.0) + 1.0 * d3;
    CHECK((b.eval(4.0) - expected).cwiseAbs().maxCoeff() <= 1e-8);

    const Eigen::VectorXd d0 =
        (-11 * b.eval(0.0) + 18 * b.eval(h) - 9 * b.eval(2 * h) + 2 * b.eval(3 * h)) / (6 * h);
    CHECK((b.eval(-2.5) - (b.eval(0.0) - 2.5 * d0)).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("analytic derivative matches central differences") {
    const auto b = wide_cubic();
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1.99, 3.99);
    for (int k = 0; k < 100; ++k) {
        const double x = u(rng);
        const double h = 1e-6;
        const Eigen::VectorXd fd = (b.eval(x + h) - b.eval(x - h)) / (2 * h);
        const Eigen::VectorXd d = b.eval_deriv(x);
        for (int j = 0; j < b.size(); ++j) CHECK(std::abs(fd[j] - d[j]) <= 1e-6 * std::max(1.0, std::abs(d[j])));
    }
}

TEST_CASE("derivative is constant in the tails") {
    const auto b = unit_cubic();
    CHECK((b.eval_deriv(7.0) - b.eval_deriv(3.0)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((b.eval_deriv(-5.0) - b.eval_deriv(0.0)).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS(b.eval(NAN));
    CHECK_THROWS(b.eval_deriv(NAN));
}

TEST_CASE("C2 continuity across interior knots") {
    const auto b = wide_cubic();
    for (double k : {-1.0, 0.0, 1.0, 2.0, 3.0}) {
        const double e = 1e-10;
        CHECK((b.eval(k - e) - b.eval(k + e)).cwiseAbs().maxCoeff() <= 1e-6);
        CHECK((b.eval_deriv(k - e) - b.eval_deriv(k + e)).cwiseAbs().maxCoeff() <= 1e-6);
        const double h = 1e-8;
        const Eigen::VectorXd left = (b.eval_deriv(k) - b.eval_deriv(k - h)) / h;
        const Eigen::VectorXd right = (b.eval_deriv(k + h) - b.eval_deriv(k)) / h;
        CHECK((left - right).cwiseAbs().maxCoeff() <= 1e-6 * std::max(1.0, left.cwiseAbs().maxCoeff()));
    }
}

TEST_CASE("spline is affine outside the knot range") {
    const auto b = wide_cubic();
    Eigen::VectorXd beta(b.size());
    for (int i = 0; i < b.size(); ++i) beta[i] = std::sin(1.3 * i) + 0.1 * i * i;
    for (double start : {4.0, -12.0}) {
        const double h = 0.37;
        for (int i = 0; i < 20; ++i) {
            const double x = start + (start > 0 ? 1 : -1) * i * h;
            const double x1 = start > 0 ? x + h : x - h;
            const double x2 = start > 0 ? x + 2 * h : x - 2 * h;
            const double second = b.value(x, beta) - 2 * b.value(x1, beta) + b.value(x2, beta);
            CHECK(std::abs(second) <= 1e-10);
        }
    }
}

TEST_CASE("increasing coefficients give a nondecreasing spline") {
    const auto b = wide_cubic();
    std::mt19937_64 rng(11);
    std::exponential_distribution<double> inc(1.0);
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::VectorXd beta(b.size());
        double acc = -3;
        for (int i = 0; i < b.size(); ++i) beta[i] = acc += (i == 0 ? 0.0 : inc(rng) * (trial % 3 == 0 && i % 2 ? 0 : 1));
        double prev = -INFINITY;
        for (int i = 0; i <= 2000; ++i) {
            const double x = -6.0 + 14.0 * i / 2000.0;
            const double v = b.value(x, beta);
            CHECK(v >= prev - 1e-12);
            prev = v;
        }
    }
}

TEST_CASE("greville coefficients reproduce the identity") {
    const auto b = wide_cubic();
    const Eigen::VectorXd g = b.greville();
    for (double x : {-5.0, -2.0, -0.3, 1.7, 4.0, 9.0}) CHECK(b.value(x, g) == doctest::Approx(x).epsilon(1e-12));
}

TEST_CASE("second-difference penalty") {
    const auto pen = ptmap::make_penalty(4, 2);
    Eigen::MatrixXd expected(2, 4);
    expected << 1, -2, 1, 0, 0, 1, -2, 1;
    CHECK((pen.difference - expected).cwiseAbs().maxCoeff() == 0.0);

    const auto big = ptmap::make_penalty(12, 2);
    for (double a : {0.0, 1.0, -3.5}) {
        for (double s : {0.0, 2.0, -0.25}) {
            Eigen::VectorXd lin(12);
            for (int i = 0; i < 12; ++i) lin[i] = a + s * i;
            CHECK((big.gram * lin).cwiseAbs().maxCoeff() <= 1e-14);
        }
    }

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(big.gram);
    const auto& ev = es.eigenvalues();
    int zeros = 0;
    for (int i = 0; i < ev.size(); ++i) zeros += std::abs(ev[i]) < 1e-10 ? 1 : 0;
    CHECK(zeros == 2);
    CHECK(ev.minCoeff() > -1e-10);

    const auto first = ptmap::make_penalty(5, 1);
    CHECK(first.difference(0, 0) == -1.0);
    CHECK(first.difference(0, 1) == 1.0);
    CHECK_THROWS(ptmap::make_penalty(2, 2));
}
