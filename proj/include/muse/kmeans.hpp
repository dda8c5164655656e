#pragma once

#include <limits>
#include <vector>

#include "muse/common.hpp"
#include "muse/random.hpp"
#include "muse/style.hpp"

// Lloyd's algorithm with seeded k-means++ initialization and farthest-point
// repair for empty clusters.
namespace muse::kmeans {

struct Result {
    style::ClusterModel model;
    std::vector<int> assignment;
    std::vector<Real> inertia_history;  // inertia after each update step
    int iterations = 0;
};

namespace detail {

inline Real sq_dist(const Real* a, const Real* b, int d) {
    Real acc = 0.0;
    for (int i = 0; i < d; ++i) {
        const Real diff = a[i] - b[i];
        acc += diff * diff;
    }
    return acc;
}

}  // namespace detail

// points: n x d row-major
inline Result fit(const std::vector<Real>& points, int n, int d, int k, std::uint64_t seed, int max_iter = 300,
                  Real tol = 1e-4) {
    require(n > 0 && d > 0, "kmeans: empty input");
    require(static_cast<std::size_t>(n) * d == points.size(), "kmeans: point buffer size mismatch");
    require(k >= 2, "kmeans: k must be >= 2");
    require(k <= n, "kmeans: k exceeds number of points");

    Rng rng(derive_seed(seed, 0x4b6d));
    auto point = [&](int i) { return points.data() + static_cast<std::size_t>(i) * d; };

    // k-means++ seeding
    std::vector<Real> centers(static_cast<std::size_t>(k) * d);
    std::vector<Real> d2(static_cast<std::size_t>(n), std::numeric_limits<Real>::max());
    {
        const int first = static_cast<int>(rng.index(static_cast<std::uint64_t>(n)));
        std::copy(point(first), point(first) + d, centers.begin());
        for (int c = 1; c < k; ++c) {
            Real total = 0.0;
            for (int i = 0; i < n; ++i) {
                const Real dist = detail::sq_dist(point(i), centers.data() + static_cast<std::size_t>(c - 1) * d, d);
                d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], dist);
                total += d2[static_cast<std::size_t>(i)];
            }
            int chosen = n - 1;
            if (total > 0.0) {
                const Real r = rng.uniform() * total;
                Real acc = 0.0;
                for (int i = 0; i < n; ++i) {
                    acc += d2[static_cast<std::size_t>(i)];
                    if (acc >= r) {
                        chosen = i;
                        break;
                    }
                }
            } else {
                chosen = static_cast<int>(rng.index(static_cast<std::uint64_t>(n)));
            }
            std::copy(point(chosen), point(chosen) + d, centers.begin() + static_cast<std::size_t>(c) * d);
        }
    }

    std::vector<int> assign(static_cast<std::size_t>(n), 0);
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    Result out;
    Real prev_inertia = std::numeric_limits<Real>::max();

    for (int iter = 0; iter < max_iter; ++iter) {
        // assignment step
        Real inertia = 0.0;
        for (int i = 0; i < n; ++i) {
            Real best = std::numeric_limits<Real>::max();
            int best_j = 0;
            for (int j = 0; j < k; ++j) {
                const Real dist = detail::sq_dist(point(i), centers.data() + static_cast<std::size_t>(j) * d, d);
                if (dist < best) {
                    best = dist;
                    best_j = j;
                }
            }
            assign[static_cast<std::size_t>(i)] = best_j;
            inertia += best;
        }

        // update step
        std::fill(counts.begin(), counts.end(), 0);
        std::vector<Real> sums(static_cast<std::size_t>(k) * d, 0.0);
        for (int i = 0; i < n; ++i) {
            const int j = assign[static_cast<std::size_t>(i)];
            ++counts[static_cast<std::size_t>(j)];
            for (int c = 0; c < d; ++c) sums[static_cast<std::size_t>(j) * d + c] += point(i)[c];
        }
        for (int j = 0; j < k; ++j) {
            if (counts[static_cast<std::size_t>(j)] == 0) {
                // empty cluster: seize the point farthest from its center
                int farthest = 0;
                Real far_d = -1.0;
                for (int i = 0; i < n; ++i) {
                    const Real dist = detail::sq_dist(
                        point(i), centers.data() + static_cast<std::size_t>(assign[static_cast<std::size_t>(i)]) * d, d);
                    if (dist > far_d) {
                        far_d = dist;
                        farthest = i;
                    }
                }
                std::copy(point(farthest), point(farthest) + d, centers.begin() + static_cast<std::size_t>(j) * d);
                assign[static_cast<std::size_t>(farthest)] = j;
            } else {
                for (int c = 0; c < d; ++c)
                    centers[static_cast<std::size_t>(j) * d + c] =
                        sums[static_cast<std::size_t>(j) * d + c] / counts[static_cast<std::size_t>(j)];
            }
        }

        out.inertia_history.push_back(inertia);
        out.iterations = iter + 1;
        if (prev_inertia < std::numeric_limits<Real>::max()) {
            const Real rel = (prev_inertia - inertia) / std::max(prev_inertia, 1e-300);
            if (rel >= 0.0 && rel < tol) break;
        }
        prev_inertia = inertia;
    }

    // final inertia under the final centers
    Real final_inertia = 0.0;
    for (int i = 0; i < n; ++i) {
        Real best = std::numeric_limits<Real>::max();
        int best_j = 0;
        for (int j = 0; j < k; ++j) {
            const Real dist = detail::sq_dist(point(i), centers.data() + static_cast<std::size_t>(j) * d, d);
            if (dist < best) {
                best = dist;
                best_j = j;
            }
        }
        assign[static_cast<std::size_t>(i)] = best_j;
        final_inertia += best;
    }

    out.model.centers = std::move(centers);
    out.model.k = k;
    out.model.dim = d;
    out.model.seed = seed;
    out.model.inertia = final_inertia;
    out.assignment = std::move(assign);
    out.model.validate();
    return out;
}

}  // namespace muse::kmeans
