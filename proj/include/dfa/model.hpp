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

#include "dfa/dfa_layer.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dfa {

enum class Task { classification, part_segmentation, semantic_segmentation };

auto to_string(Task task) -> std::string;
// Accepts cls|partseg|semseg.
auto parse_task(const std::string& name) -> Task;

// Architecture description. Widths are nominal; width_scale multiplies
// every internal width (see effective()).
struct ModelConfig
{
    Task task = Task::classification;
    std::size_t num_points = 1024;
    std::size_t num_classes = 40;
    std::size_t num_parts = 50;
    std::size_t num_categories = 16;
    std::size_t input_dim = 3;
    std::size_t k = 20;
    std::vector<std::size_t> dfa_widths{64, 64, 64, 64};
    // Per-layer k; empty means every layer uses k.
    std::vector<std::size_t> dfa_k;
    std::size_t pos_dim = 64;
    std::size_t global_branch_dim = 64;
    std::size_t embed_dim = 1024;
    std::vector<std::size_t> head_widths{512, 256};
    std::size_t category_dim = 64;
    std::vector<std::size_t> tnet_point_widths{64, 128, 256};
    std::vector<std::size_t> tnet_fc_widths{128, 64};
    double dropout = 0.5;
    Aggregation aggregation = Aggregation::max;
    GraphDomain graph_domain = GraphDomain::feature;
    bool use_position_encoding = true;
    bool use_low_dim_global = true;
    bool use_category_vector = true;
    double width_scale = 1.0;

    static auto classification() -> ModelConfig;
    static auto part_segmentation() -> ModelConfig;
    static auto semantic_segmentation() -> ModelConfig;

    void validate() const;

    // Copy with width_scale applied to every internal width (rounded,
    // at least 1) and width_scale reset to 1.
    [[nodiscard]] auto effective() const -> ModelConfig;

    [[nodiscard]] auto dfa_configs() const -> std::vector<DfaConfig>;

    // Width of the per-point concatenation of local and global features.
    [[nodiscard]] auto local_concat_dim() const -> std::size_t;
    // Width of the pooled global descriptor (plus category features).
    [[nodiscard]] auto global_dim() const -> std::size_t;
    [[nodiscard]] auto output_dim() const -> std::size_t;

    // Canonical key=value text, one entry per line in a fixed order.
    [[nodiscard]] auto to_text() const -> std::string;
    static auto from_text(const std::string& text) -> ModelConfig;

    auto operator==(const ModelConfig&) const -> bool = default;
};

// Trainable scalars of the network described by config, computed from the
// widths alone.
auto count_parameters(const ModelConfig& config) -> std::size_t;

// 2 x multiply-adds of every linear map over points/edges for one cloud of
// num_points points, plus N^2 * D per distance matrix of each DFA layer.
auto estimate_flops(const ModelConfig& config, std::size_t num_points) -> std::uint64_t;

// Shapes and graphs observed during a forward pass.
struct ForwardTrace
{
    Shape local_concat;
    Shape global;
    Shape point_features;
    std::vector<std::vector<NeighborGraph>> graphs;
};

template <typename T>
class DfaNetwork
{
public:
    DfaNetwork(const ModelConfig& config, std::uint64_t seed);

    DfaNetwork(const DfaNetwork&) = delete;
    auto operator=(const DfaNetwork&) -> DfaNetwork& = delete;

    [[nodiscard]] auto config() const -> const ModelConfig& { return config_; }
    auto params() -> ParamSet<T>& { return params_; }
    [[nodiscard]] auto params() const -> const ParamSet<T>& { return params_; }

    struct Transformed
    {
        Var<T> points;
        Var<T> matrix;
    };

    // [B, N, 3] -> aligned [B, N, 3] and the [B, 3, 3] matrix.
    auto spatial_transform(Tape<T>& tape, const Var<T>& coords) const -> Transformed;

    // [B, N, input_dim] -> [B, global_branch_dim].
    auto global_branch(Tape<T>& tape, const Var<T>& features) const -> Var<T>;

    // [B, N, 3] -> logits [B, num_classes].
    auto classify(Tape<T>& tape, const Var<T>& points, ForwardTrace* trace = nullptr) const
        -> Var<T>;

    // [B, N, input_dim] (+ one-hot [B, num_categories] for part
    // segmentation) -> per-point logits [B, N, num_parts].
    auto segment(Tape<T>& tape, const Var<T>& points, const std::optional<Var<T>>& category,
                 ForwardTrace* trace = nullptr) const -> Var<T>;

private:
    auto local_features(Tape<T>& tape, const Var<T>& features, const Var<T>& coords,
                        ForwardTrace* trace) const -> std::vector<Var<T>>;

    ModelConfig config_;
    ModelConfig shape_;
    ParamSet<T> params_;
    std::vector<MlpBlock<T>> tnet_point_;
    std::vector<MlpBlock<T>> tnet_fc_;
    LinearLayer<T> tnet_out_;
    MlpBlock<T> global_;
    std::vector<DfaLayer<T>> dfa_;
    MlpBlock<T> embed_;
    MlpBlock<T> category_;
    std::vector<MlpBlock<T>> head_;
    LinearLayer<T> output_;
};

extern template class DfaNetwork<float>;
extern template class DfaNetwork<double>;

} // namespace dfa
