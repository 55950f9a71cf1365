#pragma once

#include <utility>

#include "dpfa/tensor.hpp"

namespace dpfa {

// Per-point K-neighbor index table. Row i starts with i itself; the remaining
// slots are the nearest other points sorted by ascending distance, ties by
// ascending index. When N < K the row is padded by repeating the self index.
struct NeighborGraph {
    IndexTable indices;
    int k = 0;
    int64_t space_dim = 0;
};

template <typename T>
struct NeighborGeometry {
    Tensor<T> rel_pos;          // [N, K, 3], neighbor minus query
    Tensor<T> dist;             // [N, K, 1], Euclidean
    Tensor<T> query_coords;     // [N, K, 3]
    Tensor<T> neighbor_coords;  // [N, K, 3]
};

// Exhaustive KNN over rows of `features`, ranked by squared Euclidean
// distance. Exact and deterministic; no spatial index, since later layers
// search high-dimensional feature spaces where trees do not help.
template <typename T>
NeighborGraph knn(const Tensor<T>& features, int k) {
    if (features.ndim() != 2 || features.shape[0] < 1 || features.shape[1] < 1)
        throw std::invalid_argument("knn: want a non-empty [N, D] tensor, got " +
                                    shape_str(features.shape));
    if (k < 1) throw std::invalid_argument("knn: k must be >= 1");
    const int64_t n = features.shape[0];
    const int64_t d = features.shape[1];

    NeighborGraph g;
    g.k = k;
    g.space_dim = d;
    g.indices = IndexTable(n, k);

    const T* fd = features.data.data();
    const int64_t pick = std::min<int64_t>(k - 1, n - 1);
#pragma omp parallel
    {
        std::vector<std::pair<T, int32_t>> cand(static_cast<size_t>(n > 1 ? n - 1 : 0));
#pragma omp for schedule(static)
        for (int64_t i = 0; i < n; ++i) {
            const T* fi = fd + i * d;
            size_t m = 0;
            for (int64_t j = 0; j < n; ++j) {
                if (j == i) continue;
                const T* fj = fd + j * d;
                T acc = 0;
                for (int64_t c = 0; c < d; ++c) {
                    const T diff = fi[c] - fj[c];
                    acc += diff * diff;
                }
                cand[m++] = {acc, static_cast<int32_t>(j)};
            }
            std::partial_sort(cand.begin(), cand.begin() + pick, cand.begin() + static_cast<int64_t>(m),
                              [](const auto& a, const auto& b) {
                                  return a.first != b.first ? a.first < b.first : a.second < b.second;
                              });
            g.indices.at(i, 0) = static_cast<int32_t>(i);
            for (int64_t s = 0; s < pick; ++s) g.indices.at(i, 1 + s) = cand[static_cast<size_t>(s)].second;
            for (int64_t s = 1 + pick; s < k; ++s) g.indices.at(i, s) = static_cast<int32_t>(i);
        }
    }
    return g;
}

// Relative positions and distances of each neighbor (geometry of the raw
// coordinates; carries no gradient).
template <typename T>
NeighborGeometry<T> neighbor_geometry(const Tensor<T>& coords, const NeighborGraph& g) {
    if (coords.ndim() != 2 || coords.shape[1] != 3)
        throw std::invalid_argument("neighbor_geometry: want coords[N, 3], got " +
                                    shape_str(coords.shape));
    const int64_t n = coords.shape[0];
    const int64_t k = g.indices.cols;
    if (g.indices.rows != n)
        throw std::invalid_argument("neighbor_geometry: graph has " + std::to_string(g.indices.rows) +
                                    " rows for " + std::to_string(n) + " points");
    for (int32_t idx : g.indices.v)
        if (idx < 0 || idx >= n)
            throw std::out_of_range("neighbor_geometry: index " + std::to_string(idx) +
                                    " out of range [0, " + std::to_string(n) + ")");

    NeighborGeometry<T> geo;
    geo.rel_pos = Tensor<T>({n, k, 3});
    geo.dist = Tensor<T>({n, k, 1});
    geo.query_coords = Tensor<T>({n, k, 3});
    geo.neighbor_coords = Tensor<T>({n, k, 3});
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        const T* q = coords.data.data() + i * 3;
        for (int64_t j = 0; j < k; ++j) {
            const T* p = coords.data.data() + static_cast<int64_t>(g.indices.at(i, j)) * 3;
            T acc = 0;
            for (int64_t c = 0; c < 3; ++c) {
                const T r = p[c] - q[c];
                geo.rel_pos.at3(i, j, c) = r;
                geo.query_coords.at3(i, j, c) = q[c];
                geo.neighbor_coords.at3(i, j, c) = p[c];
                acc += r * r;
            }
            geo.dist.at3(i, j, 0) = std::sqrt(acc);
        }
    }
    return geo;
}

}  // namespace dpfa
