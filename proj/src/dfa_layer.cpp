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

#include "dfa/dfa_layer.hpp"

#include <cmath>

namespace dfa {

auto to_string(Aggregation kind) -> std::string
{
    switch (kind) {
    case Aggregation::max:
        return "max";
    case Aggregation::sum:
        return "sum";
    case Aggregation::mean:
        return "mean";
    case Aggregation::attention:
        return "attn";
    }
    return "?";
}

auto parse_aggregation(const std::string& name) -> Aggregation
{
    if (name == "max") {
        return Aggregation::max;
    }
    if (name == "sum") {
        return Aggregation::sum;
    }
    if (name == "mean") {
        return Aggregation::mean;
    }
    if (name == "attn" || name == "attention") {
        return Aggregation::attention;
    }
    throw ConfigError("unknown aggregation '" + name + "' (expected max|sum|mean|attn)");
}

void DfaConfig::validate() const
{
    if (d_in == 0 || d_out == 0 || k == 0) {
        throw ConfigError("dfa layer: d_in, d_out and k must be positive");
    }
    if (use_position_encoding && pos_dim == 0) {
        throw ConfigError("dfa layer: position encoding needs pos_dim >= 1");
    }
}

auto DfaConfig::param_count() const -> std::size_t
{
    std::size_t n = mlp_block_param_count(edge_input_dim(), d_out);
    if (use_position_encoding) {
        n += mlp_block_param_count(10, pos_dim);
    }
    if (aggregation == Aggregation::attention) {
        n += d_out;
    }
    return n;
}

namespace {

void check_graphs(const char* op, const Shape& shape, const std::vector<NeighborGraph>& graphs)
{
    if (shape.size() != 3 || graphs.size() != shape[0]) {
        throw DimensionError(std::string{op} + ": expected [B, N, C] with B = "
                             + std::to_string(graphs.size()) + ", got " + to_string(shape));
    }
    for (const auto& g : graphs) {
        if (g.points != shape[1] || g.k != graphs.front().k) {
            throw DimensionError(std::string{op} + ": graph of " + std::to_string(g.points)
                                 + " points does not match " + to_string(shape));
        }
    }
}

template <typename T>
auto gather_centers(const Var<T>& x, const std::vector<NeighborGraph>& graphs) -> Var<T>
{
    const auto& s = x.shape();
    const auto idx = flat_center_indices(graphs);
    return gather_rows(x, idx, Shape{s[0], s[1], graphs.front().k, s[2]});
}

} // namespace

template <typename T>
auto semantic_feature_encode(const Var<T>& features, const std::vector<NeighborGraph>& graphs)
    -> Var<T>
{
    check_graphs("semantic_feature_encode", features.shape(), graphs);
    auto centers = gather_centers(features, graphs);
    auto neighbors = gather_neighbors(features, graphs);
    return concat_last<T>({centers, sub(centers, neighbors)});
}

template <typename T>
auto relative_position_raw(const Var<T>& coords, const std::vector<NeighborGraph>& graphs)
    -> Var<T>
{
    check_graphs("relative_position_raw", coords.shape(), graphs);
    if (coords.shape()[2] != 3) {
        throw DimensionError("relative_position_raw: coordinates must be [B, N, 3], got "
                             + to_string(coords.shape()));
    }
    auto xi = gather_centers(coords, graphs);
    auto xj = gather_neighbors(coords, graphs);
    auto rel = sub(xi, xj);
    return concat_last<T>({xi, xj, rel, norm_last(rel)});
}

template <typename T>
auto aggregate(const Var<T>& edges, Aggregation kind, const Var<T>* scorer) -> Var<T>
{
    const auto& s = edges.shape();
    if (s.size() < 2) {
        throw DimensionError("aggregate: expected [..., k, M], got " + to_string(s));
    }
    const std::size_t axis = s.size() - 2;
    switch (kind) {
    case Aggregation::max:
        return reduce_max(edges, axis);
    case Aggregation::sum:
        return reduce_sum(edges, axis);
    case Aggregation::mean:
        return reduce_mean(edges, axis);
    case Aggregation::attention: {
        if (scorer == nullptr) {
            throw ConfigError("aggregate: attention needs a scorer");
        }
        auto& tape = edges.tape();
        auto zero_bias = tape.constant(Tensor<T>{{1}});
        auto scores = linear(edges, *scorer, zero_bias);
        auto weights = softmax(scores, axis);
        return reduce_sum(mul_broadcast_last(edges, weights), axis);
    }
    }
    throw ConfigError("aggregate: unknown aggregation kind");
}

template <typename T>
DfaLayer<T>::DfaLayer(ParamSet<T>& params, const std::string& name, const DfaConfig& config,
                      std::mt19937_64& rng)
    : config_{config}
{
    config_.validate();
    if (config_.use_position_encoding) {
        position_mlp_ = MlpBlock<T>{params, name + ".pos", 10, config_.pos_dim, rng};
    }
    edge_mlp_ = MlpBlock<T>{params, name + ".edge", config_.edge_input_dim(), config_.d_out, rng};
    if (config_.aggregation == Aggregation::attention) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(config_.d_out));
        std::uniform_real_distribution<double> uniform(-bound, bound);
        Tensor<T> w{{config_.d_out, 1}};
        for (auto& v : w.data) {
            v = static_cast<T>(uniform(rng));
        }
        scorer_ = &params.add(name + ".attn.weight", std::move(w));
    }
}

template <typename T>
auto DfaLayer<T>::position_encode(Tape<T>& tape, const Var<T>& coords,
                                  const std::vector<NeighborGraph>& graphs) const -> Var<T>
{
    if (!config_.use_position_encoding) {
        throw ConfigError("dfa layer: position encoding is disabled");
    }
    return position_mlp_.forward(tape, relative_position_raw(coords, graphs));
}

template <typename T>
auto DfaLayer<T>::edge_feature(Tape<T>& tape, const std::optional<Var<T>>& h_x,
                               const Var<T>& h_f) const -> Var<T>
{
    if (h_x.has_value() != config_.use_position_encoding) {
        throw ConfigError(config_.use_position_encoding
                              ? "edge_feature: position encoding expected"
                              : "edge_feature: position encoding given but disabled");
    }
    auto input = h_x ? concat_last<T>({*h_x, h_f}) : h_f;
    if (input.shape().back() != edge_mlp_.in()) {
        throw DimensionError("edge_feature: input width " + std::to_string(input.shape().back())
                             + " does not match edge MLP width "
                             + std::to_string(edge_mlp_.in()));
    }
    return edge_mlp_.forward(tape, input);
}

template <typename T>
auto DfaLayer<T>::forward(Tape<T>& tape, const Var<T>& features, const Var<T>& coords,
                          std::vector<NeighborGraph>* graphs_out) const -> Var<T>
{
    const auto& fs = features.shape();
    const auto& xs = coords.shape();
    if (fs.size() != 3 || xs.size() != 3 || fs[0] != xs[0] || fs[1] != xs[1] || xs[2] != 3) {
        throw DimensionError("dfa layer: features " + to_string(fs) + " and coordinates "
                             + to_string(xs) + " do not describe the same clouds");
    }
    if (fs[2] != config_.d_in) {
        throw DimensionError("dfa layer: expected " + std::to_string(config_.d_in)
                             + " input channels, got " + to_string(fs));
    }
    const auto& source =
        config_.graph_domain == GraphDomain::feature ? features.value() : coords.value();
    auto graphs = build_graphs(source, config_.k, config_.graph_domain);

    auto h_f = semantic_feature_encode(features, graphs);
    std::optional<Var<T>> h_x;
    if (config_.use_position_encoding) {
        h_x = position_encode(tape, coords, graphs);
    }
    auto edges = edge_feature(tape, h_x, h_f);
    std::optional<Var<T>> scorer;
    if (scorer_ != nullptr) {
        scorer = tape.param(*scorer_);
    }
    auto out = aggregate(edges, config_.aggregation, scorer ? &*scorer : nullptr);
    if (graphs_out != nullptr) {
        *graphs_out = std::move(graphs);
    }
    return out;
}

template auto semantic_feature_encode<float>(const Var<float>&, const std::vector<NeighborGraph>&)
    -> Var<float>;
template auto semantic_feature_encode<double>(const Var<double>&,
                                              const std::vector<NeighborGraph>&) -> Var<double>;
template auto relative_position_raw<float>(const Var<float>&, const std::vector<NeighborGraph>&)
    -> Var<float>;
template auto relative_position_raw<double>(const Var<double>&, const std::vector<NeighborGraph>&)
    -> Var<double>;
template auto aggregate<float>(const Var<float>&, Aggregation, const Var<float>*) -> Var<float>;
template auto aggregate<double>(const Var<double>&, Aggregation, const Var<double>*)
    -> Var<double>;
template class DfaLayer<float>;
template class DfaLayer<double>;

} // namespace dfa
