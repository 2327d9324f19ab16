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

// Dynamic feature aggregation layer.
//
// For every point i the layer rebuilds a k-nearest-neighbour graph from
// its own input features, then for each neighbour j forms
//
//   semantic edge  h_f = f_i ++ (f_i - f_j)                      [2D]
//   position edge  h_x = MLP(x_i ++ x_j ++ (x_i - x_j) ++ |x_i - x_j|)   [P]
//   edge feature   h_ij = MLP(h_x ++ h_f)                         [M]
//
// and reduces the k edge features of each point channel-wise (max, sum,
// mean or softmax-weighted sum). Coordinates x are the transformed input
// coordinates and stay fixed across layers; only the graph changes.

#pragma once

#include "dfa/knn.hpp"
#include "dfa/layers.hpp"

#include <optional>
#include <string>
#include <vector>

namespace dfa {

enum class Aggregation { max, sum, mean, attention };

auto to_string(Aggregation kind) -> std::string;
// Accepts max|sum|mean|attn (and "attention").
auto parse_aggregation(const std::string& name) -> Aggregation;

struct DfaConfig
{
    std::size_t d_in = 3;
    std::size_t d_out = 64;
    std::size_t k = 20;
    std::size_t pos_dim = 64;
    Aggregation aggregation = Aggregation::max;
    bool use_position_encoding = true;
    GraphDomain graph_domain = GraphDomain::feature;

    void validate() const;
    // Input width of the edge MLP: P + 2D, or 2D without position encoding.
    [[nodiscard]] auto edge_input_dim() const -> std::size_t
    {
        return 2 * d_in + (use_position_encoding ? pos_dim : 0);
    }
    [[nodiscard]] auto param_count() const -> std::size_t;
};

// [B, N, D] features -> [B, N, k, 2D] semantic edge encoding.
template <typename T>
auto semantic_feature_encode(const Var<T>& features, const std::vector<NeighborGraph>& graphs)
    -> Var<T>;

// [B, N, 3] coordinates -> [B, N, k, 10] raw relative-position vectors.
template <typename T>
auto relative_position_raw(const Var<T>& coords, const std::vector<NeighborGraph>& graphs)
    -> Var<T>;

// Channel-wise reduction over the neighbour axis of [B, N, k, M] edge
// features. `scorer` ([M, 1] weights) is required for attention.
template <typename T>
auto aggregate(const Var<T>& edges, Aggregation kind, const Var<T>* scorer = nullptr) -> Var<T>;

template <typename T>
class DfaLayer
{
public:
    DfaLayer() = default;
    DfaLayer(ParamSet<T>& params, const std::string& name, const DfaConfig& config,
             std::mt19937_64& rng);

    // features [B, N, D], coords [B, N, 3] -> [B, N, M]. When `graphs` is
    // given it receives the graphs that were built.
    auto forward(Tape<T>& tape, const Var<T>& features, const Var<T>& coords,
                 std::vector<NeighborGraph>* graphs = nullptr) const -> Var<T>;

    // Relative-position vectors passed through the position MLP: [B, N, k, P].
    auto position_encode(Tape<T>& tape, const Var<T>& coords,
                         const std::vector<NeighborGraph>& graphs) const -> Var<T>;

    // h_x may be absent only when position encoding is disabled.
    auto edge_feature(Tape<T>& tape, const std::optional<Var<T>>& h_x, const Var<T>& h_f) const
        -> Var<T>;

    [[nodiscard]] auto config() const -> const DfaConfig& { return config_; }

private:
    DfaConfig config_;
    MlpBlock<T> position_mlp_;
    MlpBlock<T> edge_mlp_;
    Parameter<T>* scorer_ = nullptr;
};

extern template class DfaLayer<float>;
extern template class DfaLayer<double>;

} // namespace dfa
