#include "sadet/numeric.hpp"

#include "doctest.h"

#include <random>

using namespace sadet;

namespace {

Vec v2(double a, double b)
{
    Vec v(2);
    v << a, b;
    return v;
}

Mat random_mat(Index r, Index c, std::mt19937_64& rng)
{
    std::normal_distribution<double> n(0.0, 1.0);
    Mat m(r, c);
    for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < c; ++j) m(i, j) = n(rng);
    return m;
}

} // namespace

TEST_SUITE("numeric")
{
    TEST_CASE("cosine similarity examples")
    {
        Vec u(3);
        u << 1, 2, 3;
        CHECK(cosine_similarity(u, u) == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(cosine_similarity(v2(1, 0), v2(0, 1)) == 0.0);
        CHECK(cosine_similarity(v2(1, 1), v2(1, 0)) == doctest::Approx(0.7071067811865475).epsilon(1e-15));
    }

    TEST_CASE("cosine similarity errors")
    {
        CHECK_THROWS_AS(cosine_similarity(v2(1, 0), Vec::Ones(3)), DimensionError);
        CHECK_THROWS_AS(cosine_similarity(v2(0, 0), v2(1, 0)), ZeroNormError);
    }

    TEST_CASE("cosine similarity is symmetric and scale invariant")
    {
        std::mt19937_64 rng(11);
        std::uniform_real_distribution<double> scale(0.01, 100.0);
        for (int i = 0; i < 200; ++i) {
            const Mat m = random_mat(2, 7, rng);
            const Vec a = m.row(0).transpose(), b = m.row(1).transpose();
            const double c = scale(rng);
            CHECK(std::abs(cosine_similarity(a, b) - cosine_similarity(b, a)) < 1e-12);
            CHECK(std::abs(cosine_similarity(Vec(c * a), b) - cosine_similarity(a, b)) < 1e-12);
        }
    }

    TEST_CASE("max similarity examples and tie break")
    {
        Mat centers(2, 2);
        centers << 1, 0, 0, 1;
        auto m = max_similarity(v2(1, 0), centers);
        CHECK(m.index == 0);
        CHECK(m.value == doctest::Approx(1.0));
        m = max_similarity(v2(1, 1), centers);
        CHECK(m.index == 0);
        CHECK(m.value == doctest::Approx(0.7071067811865475));
        CHECK_THROWS(max_similarity(v2(1, 1), Mat(0, 2)));
    }

    TEST_CASE("max similarity equals a linear scan")
    {
        std::mt19937_64 rng(5);
        for (int trial = 0; trial < 300; ++trial) {
            const Mat c = random_mat(10, 6, rng);
            const Vec x = random_mat(6, 1, rng);
            Index best = 0;
            double best_v = -2.0;
            for (Index i = 0; i < c.rows(); ++i) {
                const Vec r = c.row(i).transpose();
                const double s = x.dot(r) / (x.norm() * r.norm());
                if (s > best_v) best_v = s, best = i;
            }
            const auto m = max_similarity(x, c);
            CHECK(m.index == best);
            CHECK(std::abs(m.value - best_v) < 1e-12);
        }
    }

    TEST_CASE("kmeans with k equal to n")
    {
        Mat p(4, 2);
        p << 0, 0, 1, 0, 0, 1, 5, 5;
        const auto m = kmeans(p, 4, 3);
        CHECK(m.inertia == 0.0);
        std::vector<bool> hit(4, false);
        for (Index i = 0; i < 4; ++i) hit[m.assignments[i]] = true;
        for (bool h : hit) CHECK(h);
    }

    TEST_CASE("kmeans separates two blobs")
    {
        std::mt19937_64 rng(9);
        std::uniform_real_distribution<double> u(-0.1, 0.1);
        Mat p(40, 2);
        for (Index i = 0; i < 40; ++i) {
            const double base = i < 20 ? 0.0 : 10.0;
            p(i, 0) = base + u(rng);
            p(i, 1) = base + u(rng);
        }
        const auto m = kmeans(p, 2, 1);
        // Exhaustive oracle over the blob split: the only optimal partition is by blob.
        for (Index c = 0; c < 2; ++c) {
            const double d0 = (m.centers.row(c) - Eigen::RowVector2d(0, 0)).norm();
            const double d1 = (m.centers.row(c) - Eigen::RowVector2d(10, 10)).norm();
            CHECK(std::min(d0, d1) < 0.2);
        }
        CHECK(m.assignments[0] != m.assignments[39]);
    }

    TEST_CASE("kmeans degenerate input")
    {
        Mat p = Mat::Constant(5, 3, 2.5);
        const auto m = kmeans(p, 1, 0);
        CHECK(m.inertia == 0.0);
        CHECK((m.centers.row(0) - p.row(0)).norm() == 0.0);
        CHECK_THROWS(kmeans(p, 6, 0));
        CHECK_THROWS(kmeans(Mat(0, 3), 1, 0));
    }

    TEST_CASE("kmeans inertia trace is non-increasing and the result is a fixed point")
    {
        std::mt19937_64 rng(21);
        for (int trial = 0; trial < 20; ++trial) {
            const Mat p = random_mat(60, 4, rng);
            const auto m = kmeans(p, 5, static_cast<std::uint64_t>(trial));
            for (std::size_t i = 1; i < m.inertia_trace.size(); ++i) {
                CHECK(m.inertia_trace[i] <= m.inertia_trace[i - 1] + 1e-12);
            }
            double inertia = 0.0;
            for (Index i = 0; i < p.rows(); ++i) {
                Index best = 0;
                for (Index c = 1; c < m.centers.rows(); ++c) {
                    if ((p.row(i) - m.centers.row(c)).squaredNorm() < (p.row(i) - m.centers.row(best)).squaredNorm())
                        best = c;
                }
                CHECK(best == m.assignments[i]);
                inertia += (p.row(i) - m.centers.row(m.assignments[i])).squaredNorm();
            }
            CHECK(std::abs(inertia - m.inertia) < 1e-9);
        }
    }

    TEST_CASE("kmeans is deterministic for a seed")
    {
        std::mt19937_64 rng(4);
        const Mat p = random_mat(50, 3, rng);
        const auto a = kmeans(p, 4, 77), b = kmeans(p, 4, 77);
        CHECK(a.centers == b.centers);
        CHECK(a.assignments == b.assignments);
    }

    TEST_CASE("finite differences")
    {
        const auto sq = [](const Vec& x) { return x.squaredNorm(); };
        const Vec g = finite_diff_gradient(sq, v2(1, 2), 1e-5);
        CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-8));
        CHECK(g[1] == doctest::Approx(4.0).epsilon(1e-8));
        const auto bil = [](const Vec& x) { return x[0] * x[1]; };
        const Vec h = finite_diff_gradient(bil, v2(3, 5), 1e-5);
        CHECK(h[0] == doctest::Approx(5.0).epsilon(1e-8));
        CHECK(h[1] == doctest::Approx(3.0).epsilon(1e-8));
        const auto bad = [](const Vec& x) { return x[0] > 0 ? std::log(-1.0) : 0.0; };
        CHECK_THROWS_AS(finite_diff_gradient(bad, v2(1, 1), 1e-5), NonFiniteError);
        CHECK_THROWS(finite_diff_gradient(sq, v2(1, 1), 0.0));
    }

    TEST_CASE("finite differences agree with an analytic composite gradient")
    {
        Vec x(3);
        x << 0.3, -1.2, 0.7;
        const auto f = [](const Vec& v) { return std::sin(v[0] * v[1]) + std::exp(v[2]) * v[0]; };
        Vec g(3);
        g << std::cos(x[0] * x[1]) * x[1] + std::exp(x[2]), std::cos(x[0] * x[1]) * x[0], std::exp(x[2]) * x[0];
        const Vec fd = finite_diff_gradient(f, x, 1e-5);
        CHECK((fd - g).norm() / g.norm() < 1e-8);
    }
}
