// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

#include "dfa/knn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dfa {

auto to_string(GraphDomain domain) -> std::string
{
    return domain == GraphDomain::feature ? "feature" : "spatial";
}

auto parse_graph_domain(const std::string& name) -> GraphDomain
{
    if (name == "feature") {
        return GraphDomain::feature;
    }
    if (name == "spatial") {
        return GraphDomain::spatial;
    }
    throw ConfigError("unknown graph domain '" + name + "' (expected feature|spatial)");
}

namespace {

// dist must hold n*n zeros. Loops run column-innermost over a transposed
// copy so the per-pair sum still accumulates in dimension order.
template <typename T>
void sq_dist_into(const T* f, std::size_t n, std::size_t d, T* dist)
{
    for (std::size_t i = 0; i < n * d; ++i) {
        if (!std::isfinite(f[i])) {
            throw NumericError("pairwise_sq_dist: non-finite feature at point "
                               + std::to_string(i / d) + ", dim " + std::to_string(i % d));
        }
    }
    std::vector<T> ft(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < d; ++c) {
            ft[c * n + i] = f[i * d + c];
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        T* row = dist + i * n;
        for (std::size_t c = 0; c < d; ++c) {
            const T fi = f[i * d + c];
            const T* col = ft.data() + c * n;
            for (std::size_t j = i + 1; j < n; ++j) {
                const T diff = fi - col[j];
                row[j] += diff * diff;
            }
        }
        row[i] = T{0};
        for (std::size_t j = i + 1; j < n; ++j) {
            dist[j * n + i] = row[j];
        }
    }
}

template <typename T>
void select_into(const T* dist, std::size_t n, std::size_t k, std::size_t* out,
                 std::vector<std::size_t>& scratch)
{
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = dist + i * n;
        scratch.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) {
                scratch.push_back(j);
            }
        }
        auto less = [row](std::size_t a, std::size_t b) {
            return row[a] < row[b] || (row[a] == row[b] && a < b);
        };
        const auto take = static_cast<std::ptrdiff_t>(k - 1);
        std::partial_sort(scratch.begin(), scratch.begin() + take, scratch.end(), less);
        std::size_t* dst = out + i * k;
        dst[0] = i;
        std::copy_n(scratch.begin(), k - 1, dst + 1);
    }
}

void check_k(std::size_t k, std::size_t n)
{
    if (k == 0 || k > n) {
        throw ConfigError("knn: k = " + std::to_string(k) + " must lie in [1, N = "
                          + std::to_string(n) + "]");
    }
}

} // namespace

template <typename T>
auto pairwise_sq_dist(const Tensor<T>& features) -> Tensor<T>
{
    if (features.rank() != 2 || features.dim(0) == 0 || features.dim(1) == 0) {
        throw DimensionError("pairwise_sq_dist: expected non-empty [N, D], got "
                             + to_string(features.shape));
    }
    const std::size_t n = features.dim(0);
    Tensor<T> dist{{n, n}};
    sq_dist_into(features.data.data(), n, features.dim(1), dist.data.data());
    return dist;
}

template <typename T>
auto knn_select(const Tensor<T>& dist, std::size_t k, GraphDomain domain) -> NeighborGraph
{
    if (dist.rank() != 2 || dist.dim(0) != dist.dim(1)) {
        throw DimensionError("knn_select: expected square distance matrix, got "
                             + to_string(dist.shape));
    }
    const std::size_t n = dist.dim(0);
    check_k(k, n);
    NeighborGraph g{n, k, domain, std::vector<std::size_t>(n * k)};
    std::vector<std::size_t> scratch;
    select_into(dist.data.data(), n, k, g.indices.data(), scratch);
    return g;
}

template <typename T>
auto build_graphs(const Tensor<T>& features, std::size_t k, GraphDomain domain)
    -> std::vector<NeighborGraph>
{
    std::size_t batch = 1;
    if (features.rank() == 3) {
        batch = features.dim(0);
    } else if (features.rank() != 2) {
        throw DimensionError("build_graphs: expected [B, N, D] or [N, D], got "
                             + to_string(features.shape));
    }
    const std::size_t n = features.shape[features.rank() - 2];
    const std::size_t d = features.cols();
    if (n == 0 || d == 0) {
        throw DimensionError("build_graphs: empty feature tensor " + to_string(features.shape));
    }
    check_k(k, n);
    std::vector<NeighborGraph> graphs;
    std::vector<T> dist(n * n);
    std::vector<std::size_t> scratch;
    for (std::size_t b = 0; b < batch; ++b) {
        std::fill(dist.begin(), dist.end(), T{0});
        sq_dist_into(features.data.data() + b * n * d, n, d, dist.data());
        NeighborGraph g{n, k, domain, std::vector<std::size_t>(n * k)};
        select_into(dist.data(), n, k, g.indices.data(), scratch);
        graphs.push_back(std::move(g));
    }
    return graphs;
}

auto flat_neighbor_indices(const std::vector<NeighborGraph>& graphs) -> std::vector<std::size_t>
{
    std::vector<std::size_t> out;
    std::size_t offset = 0;
    for (const auto& g : graphs) {
        for (auto j : g.indices) {
            out.push_back(offset + j);
        }
        offset += g.points;
    }
    return out;
}

auto flat_center_indices(const std::vector<NeighborGraph>& graphs) -> std::vector<std::size_t>
{
    std::vector<std::size_t> out;
    std::size_t offset = 0;
    for (const auto& g : graphs) {
        for (std::size_t i = 0; i < g.points; ++i) {
            out.insert(out.end(), g.k, offset + i);
        }
        offset += g.points;
    }
    return out;
}

template <typename T>
auto gather_neighbors(const Var<T>& features, const std::vector<NeighborGraph>& graphs) -> Var<T>
{
    const auto& shape = features.shape();
    if (graphs.empty()) {
        throw DimensionError("gather_neighbors: no graphs");
    }
    const std::size_t n = graphs.front().points;
    const std::size_t k = graphs.front().k;
    const std::size_t batch = graphs.size();
    for (const auto& g : graphs) {
        if (g.points != n || g.k != k) {
            throw DimensionError("gather_neighbors: graphs disagree on N or k");
        }
    }
    if (features.value().rows() != batch * n) {
        throw DimensionError("gather_neighbors: features " + to_string(shape) + " vs "
                             + std::to_string(batch) + " graphs of " + std::to_string(n)
                             + " points");
    }
    const auto idx = flat_neighbor_indices(graphs);
    return gather_rows(features, idx, Shape{batch, n, k, shape.back()});
}

template auto pairwise_sq_dist<float>(const Tensor<float>&) -> Tensor<float>;
template auto pairwise_sq_dist<double>(const Tensor<double>&) -> Tensor<double>;
template auto knn_select<float>(const Tensor<float>&, std::size_t, GraphDomain) -> NeighborGraph;
template auto knn_select<double>(const Tensor<double>&, std::size_t, GraphDomain)
    -> NeighborGraph;
template auto build_graphs<float>(const Tensor<float>&, std::size_t, GraphDomain)
    -> std::vector<NeighborGraph>;
template auto build_graphs<double>(const Tensor<double>&, std::size_t, GraphDomain)
    -> std::vector<NeighborGraph>;
template auto gather_neighbors<float>(const Var<float>&, const std::vector<NeighborGraph>&)
    -> Var<float>;
template auto gather_neighbors<double>(const Var<double>&, const std::vector<NeighborGraph>&)
    -> Var<double>;

} // namespace dfa
