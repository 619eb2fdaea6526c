#pragma once

#include "faith/error.hpp"
#include "faith/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace faith {

struct KMeansOptions {
    std::size_t k = 0;
    std::uint64_t seed = 0;
    int max_iterations = 25;
    double tolerance = 1e-4;  // stop once total squared centroid shift / total squared norm drops below
};

struct KMeansResult {
    std::vector<float> centroids;  // k x dim, row-major
    std::vector<std::uint32_t> assignment;
    int iterations = 0;
};

inline double squared_l2(std::span<const float> a, std::span<const float> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        s += d * d;
    }
    return s;
}

/// Index of the row of `centroids` (k x dim) closest to `x` in L2; ties go to the lower index.
inline std::uint32_t nearest_centroid(std::span<const float> x, std::span<const float> centroids, std::size_t dim) {
    const std::size_t k = centroids.size() / dim;
    std::uint32_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
        const double d = squared_l2(x, centroids.subspan(c * dim, dim));
        if (d < best_d) {
            best_d = d;
            best = static_cast<std::uint32_t>(c);
        }
    }
    return best;
}

/// Lloyd's k-means with k-means++ seeding. When there are fewer points than
/// clusters (or too few distinct points) the surplus centroids duplicate data
/// points. Empty clusters are repaired by splitting the largest cluster.
inline KMeansResult kmeans(std::span<const float> data, std::size_t dim, const KMeansOptions& opt) {
    if (dim == 0 || data.size() % dim != 0) throw PreconditionError("k-means data is not a whole number of rows");
    const std::size_t n = data.size() / dim;
    const std::size_t k = opt.k;
    if (n == 0 || k == 0) throw PreconditionError("k-means needs at least one point and one cluster");

    auto row = [&](std::size_t i) { return data.subspan(i * dim, dim); };
    Rng rng(opt.seed);
    KMeansResult out;
    out.centroids.assign(k * dim, 0.0F);
    auto centroid = [&](std::size_t c) { return std::span<float>(out.centroids).subspan(c * dim, dim); };

    // k-means++ seeding.
    std::vector<double> closest(n, std::numeric_limits<double>::infinity());
    std::size_t pick = rng.below(n);
    for (std::size_t c = 0; c < k; ++c) {
        std::copy_n(row(pick).begin(), dim, centroid(c).begin());
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            closest[i] = std::min(closest[i], squared_l2(row(i), centroid(c)));
            total += closest[i];
        }
        if (c + 1 == k) break;
        if (total <= 0.0) {
            pick = rng.below(n);
            continue;
        }
        double target = rng.uniform() * total;
        pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
            target -= closest[i];
            if (target < 0.0 && closest[i] > 0.0) {
                pick = i;
                break;
            }
        }
    }

    out.assignment.assign(n, 0);
    std::vector<double> sums(k * dim);
    std::vector<std::size_t> counts(k);
    for (int iter = 0; iter < opt.max_iterations; ++iter) {
        out.iterations = iter + 1;
        const std::span<const float> current(out.centroids);
        for (std::size_t i = 0; i < n; ++i) out.assignment[i] = nearest_centroid(row(i), current, dim);

        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto c = out.assignment[i];
            ++counts[c];
            for (std::size_t j = 0; j < dim; ++j) sums[c * dim + j] += row(i)[j];
        }

        double shift = 0.0;
        double norm = 0.0;
        std::vector<float> updated(k * dim);
        for (std::size_t c = 0; c < k; ++c) {
            for (std::size_t j = 0; j < dim; ++j)
                updated[c * dim + j] = counts[c] ? static_cast<float>(sums[c * dim + j] / static_cast<double>(counts[c]))
                                                 : out.centroids[c * dim + j];
        }
        // Empty-cluster repair: split the currently largest cluster in two.
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] != 0) continue;
            const auto largest = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
            if (counts[largest] < 2) continue;
            constexpr float eps = 1.0F / 1024.0F;
            for (std::size_t j = 0; j < dim; ++j) {
                const float v = updated[largest * dim + j];
                const float delta = (j % 2 == 0 ? eps : -eps) * (std::abs(v) + eps);
                updated[c * dim + j] = v + delta;
                updated[largest * dim + j] = v - delta;
            }
            counts[c] = counts[largest] / 2;
            counts[largest] -= counts[c];
        }
        for (std::size_t i = 0; i < k * dim; ++i) {
            const double d = static_cast<double>(updated[i]) - out.centroids[i];
            shift += d * d;
            norm += static_cast<double>(out.centroids[i]) * out.centroids[i];
        }
        out.centroids = std::move(updated);
        if (norm > 0.0 && shift / norm < opt.tolerance) break;
    }
    for (std::size_t i = 0; i < n; ++i) out.assignment[i] = nearest_centroid(row(i), std::span<const float>(out.centroids), dim);
    return out;
}

}  // namespace faith
