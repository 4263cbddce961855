#pragma once

// Dense numeric kernel: cosine similarity, nearest-center search, k-means and
// a central-difference gradient used as the test oracle for every analytic
// gradient in the library. Everything here is header-only and templated on
// the Eigen scalar type.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sadet {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ZeroNormError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Cosine of the angle between two vectors. Refuses zero-norm inputs.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine_similarity(const Eigen::MatrixBase<DerivedA>& u,
                                            const Eigen::MatrixBase<DerivedB>& v)
{
    using Scalar = typename DerivedA::Scalar;
    if (u.size() != v.size()) {
        throw DimensionError("cosine_similarity: dimension mismatch (" + std::to_string(u.size()) +
                             " vs " + std::to_string(v.size()) + ")");
    }
    const Scalar nu = u.norm();
    const Scalar nv = v.norm();
    if (!(nu > Scalar(0)) || !(nv > Scalar(0))) {
        throw ZeroNormError("cosine_similarity: zero-norm input");
    }
    const Scalar c = u.reshaped().dot(v.reshaped()) / (nu * nv);
    return std::clamp(c, Scalar(-1), Scalar(1));
}

template <typename Scalar>
struct SimilarityMatch {
    Index index = -1;
    Scalar value = Scalar(0);
};

/// Argmax of cosine similarity between `x` and the rows of `centers`.
/// Equal similarities resolve to the lowest row index.
template <typename DerivedX, typename DerivedC>
SimilarityMatch<typename DerivedX::Scalar> max_similarity(const Eigen::MatrixBase<DerivedX>& x,
                                                          const Eigen::MatrixBase<DerivedC>& centers)
{
    if (centers.rows() == 0) {
        throw std::invalid_argument("max_similarity: empty center list");
    }
    if (centers.cols() != x.size()) {
        throw DimensionError("max_similarity: dimension mismatch");
    }
    SimilarityMatch<typename DerivedX::Scalar> best;
    for (Index i = 0; i < centers.rows(); ++i) {
        const auto s = cosine_similarity(x, centers.row(i).transpose());
        if (best.index < 0 || s > best.value) {
            best.index = i;
            best.value = s;
        }
    }
    return best;
}

template <typename Scalar>
struct ClusterModel {
    /// One center per row.
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> centers;
    std::vector<Index> assignments;
    Scalar inertia = Scalar(0);
    int iterations = 0;
    /// Inertia after every assignment pass, in order.
    std::vector<Scalar> inertia_trace;

    std::vector<Index> counts() const
    {
        std::vector<Index> c(static_cast<std::size_t>(centers.rows()), 0);
        for (Index a : assignments) ++c[static_cast<std::size_t>(a)];
        return c;
    }
};

/// Lloyd's algorithm with k-means++ seeding. Points are the rows of `points`.
/// Deterministic for a fixed (points, k, seed). Empty clusters are re-seeded
/// with the point farthest from its current center.
template <typename Derived>
ClusterModel<typename Derived::Scalar> kmeans(const Eigen::MatrixBase<Derived>& points, Index k,
                                              std::uint64_t seed, int max_iterations = 300)
{
    using Scalar = typename Derived::Scalar;
    using MatS = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

    const Index n = points.rows();
    const Index dim = points.cols();
    if (n == 0) throw std::invalid_argument("kmeans: empty input");
    if (k < 1) throw std::invalid_argument("kmeans: k must be positive");
    if (k > n) {
        throw std::invalid_argument("kmeans: k (" + std::to_string(k) + ") exceeds number of points (" +
                                    std::to_string(n) + ")");
    }

    const MatS pts = points;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    ClusterModel<Scalar> model;
    model.centers.resize(k, dim);

    // k-means++ seeding
    std::vector<Scalar> d2(static_cast<std::size_t>(n), std::numeric_limits<Scalar>::max());
    Index first = static_cast<Index>(unit(rng) * static_cast<double>(n));
    first = std::min(first, n - 1);
    model.centers.row(0) = pts.row(first);
    for (Index c = 1; c < k; ++c) {
        double total = 0.0;
        for (Index i = 0; i < n; ++i) {
            const Scalar d = (pts.row(i) - model.centers.row(c - 1)).squaredNorm();
            d2[i] = std::min(d2[i], d);
            total += static_cast<double>(d2[i]);
        }
        Index pick = 0;
        if (total > 0.0) {
            double r = unit(rng) * total;
            pick = n - 1;
            for (Index i = 0; i < n; ++i) {
                r -= static_cast<double>(d2[i]);
                if (r < 0.0) {
                    pick = i;
                    break;
                }
            }
        } else {
            (void)unit(rng);
        }
        model.centers.row(c) = pts.row(pick);
    }

    std::vector<Index> assign(static_cast<std::size_t>(n), 0);
    std::vector<Scalar> dist(static_cast<std::size_t>(n), Scalar(0));
    auto assign_pass = [&](std::vector<Index>& out) {
        Scalar inertia = Scalar(0);
        for (Index i = 0; i < n; ++i) {
            Index best = 0;
            Scalar best_d = (pts.row(i) - model.centers.row(0)).squaredNorm();
            for (Index c = 1; c < k; ++c) {
                const Scalar d = (pts.row(i) - model.centers.row(c)).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            out[i] = best;
            dist[i] = best_d;
            inertia += best_d;
        }
        return inertia;
    };

    model.inertia_trace.push_back(assign_pass(assign));
    std::vector<Index> next(static_cast<std::size_t>(n), 0);
    int it = 0;
    for (; it < max_iterations; ++it) {
        MatS sums = MatS::Zero(k, dim);
        std::vector<Index> count(static_cast<std::size_t>(k), 0);
        for (Index i = 0; i < n; ++i) {
            sums.row(assign[i]) += pts.row(i);
            ++count[assign[i]];
        }
        std::vector<Scalar> spare = dist;
        for (Index c = 0; c < k; ++c) {
            if (count[c] > 0) {
                model.centers.row(c) = sums.row(c) / static_cast<Scalar>(count[c]);
                continue;
            }
            const auto far = std::max_element(spare.begin(), spare.end());
            if (*far > Scalar(0)) {
                model.centers.row(c) = pts.row(std::distance(spare.begin(), far));
                *far = Scalar(0);
            }
        }
        model.inertia_trace.push_back(assign_pass(next));
        if (next == assign) break;
        assign.swap(next);
    }

    model.iterations = std::min(it + 1, max_iterations);
    model.assignments = assign;
    Scalar inertia = Scalar(0);
    for (Index i = 0; i < n; ++i) inertia += (pts.row(i) - model.centers.row(assign[i])).squaredNorm();
    model.inertia = inertia;
    return model;
}

class NonFiniteError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
template <typename F>
Vec finite_diff_gradient(F&& f, const Vec& x, double h)
{
    if (!(h > 0.0)) throw std::invalid_argument("finite_diff_gradient: h must be positive");
    Vec g(x.size());
    Vec probe = x;
    for (Index i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + h;
        const double fp = f(probe);
        probe[i] = x[i] - h;
        const double fm = f(probe);
        probe[i] = x[i];
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NonFiniteError("finite_diff_gradient: non-finite evaluation at coordinate " + std::to_string(i));
        }
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

} // namespace sadet
