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

#pragma once

#include "dfa/autodiff.hpp"
#include "dfa/tensor.hpp"

#include <span>
#include <string>
#include <vector>

namespace dfa {

enum class GraphDomain { feature, spatial };

auto to_string(GraphDomain domain) -> std::string;
auto parse_graph_domain(const std::string& name) -> GraphDomain;

// k neighbours per point, row-major N x k. Slot 0 of every row is the
// point itself; the remaining k-1 slots are the nearest other points in
// ascending (squared distance, index) order.
struct NeighborGraph
{
    std::size_t points = 0;
    std::size_t k = 0;
    GraphDomain domain = GraphDomain::feature;
    std::vector<std::size_t> indices;

    [[nodiscard]] auto row(std::size_t i) const -> std::span<const std::size_t>
    {
        return {indices.data() + i * k, k};
    }

    auto operator==(const NeighborGraph&) const -> bool = default;
};

// Squared Euclidean distances between the rows of an [N, D] matrix,
// computed by direct subtraction so duplicated rows are exactly 0 apart.
template <typename T>
auto pairwise_sq_dist(const Tensor<T>& features) -> Tensor<T>;

// Throws ConfigError when k is 0 or exceeds N.
template <typename T>
auto knn_select(const Tensor<T>& dist, std::size_t k, GraphDomain domain = GraphDomain::feature)
    -> NeighborGraph;

// One graph per cloud of a [B, N, D] (or [N, D]) feature tensor.
template <typename T>
auto build_graphs(const Tensor<T>& features, std::size_t k,
                  GraphDomain domain = GraphDomain::feature) -> std::vector<NeighborGraph>;

// Row indices into the flattened [B*N] point axis, i.e. b*N + j for each
// neighbour j of every point of cloud b, in [B, N, k] order.
auto flat_neighbor_indices(const std::vector<NeighborGraph>& graphs) -> std::vector<std::size_t>;

// Index of the centre point repeated k times, same layout as above.
auto flat_center_indices(const std::vector<NeighborGraph>& graphs) -> std::vector<std::size_t>;

// [B, N, D] -> [B, N, k, D] with out[b][i][m] = F[b][graph_b.row(i)[m]].
// Gradients scatter back to the gathered rows.
template <typename T>
auto gather_neighbors(const Var<T>& features, const std::vector<NeighborGraph>& graphs) -> Var<T>;

} // namespace dfa
