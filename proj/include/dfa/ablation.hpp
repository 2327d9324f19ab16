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

#include "dfa/train.hpp"

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace dfa {

enum class AblationAxis { k, aggregation, graph_domain, position_encoding, low_dim_global };

auto to_string(AblationAxis axis) -> std::string;
// Accepts the canonical names and the short forms k|agg|domain|pos|global.
auto parse_ablation_axis(const std::string& name) -> AblationAxis;

struct AblationGrid
{
    std::vector<std::pair<AblationAxis, std::vector<std::string>>> axes;

    // "k=8,16;agg=max,mean". Boolean axes take on|off (or 1|0, true|false).
    static auto parse(const std::string& text) -> AblationGrid;
    // Cartesian product in axis order, first axis slowest.
    [[nodiscard]] auto cells(const ModelConfig& base) const -> std::vector<ModelConfig>;
};

struct AblationRow
{
    std::size_t k = 0;
    Aggregation aggregation = Aggregation::max;
    GraphDomain graph_domain = GraphDomain::feature;
    bool position_encoding = true;
    bool low_dim_global = true;
    std::uint64_t seed = 0;
    std::optional<double> oa;
    std::optional<double> macc;
    std::optional<double> miou;
    double wall_clock_s = 0;
};

inline constexpr const char* ablation_csv_header =
    "k,aggregation,graph_domain,position_encoding,low_dim_global,seed,oa,macc,miou,wall_clock_s";

// Every cell is trained from scratch for each seed (model and training
// seed both set to it) and scored on `test`. Classification fills oa and
// macc; part segmentation fills oa (point accuracy) and miou.
template <typename T>
auto run_ablation(const AblationGrid& grid, const ModelConfig& base, const TrainConfig& train_config,
                  const std::vector<std::uint64_t>& seeds, const Dataset& train_data,
                  const Dataset& test, const std::function<void(const AblationRow&)>& on_row = {})
    -> std::vector<AblationRow>;

void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows);

struct ReferenceResult
{
    std::string setting;
    double macc;
    double oa;
};

// Full-scale reference accuracies (percent, 2048-point 40-class
// classification) for each ablation axis; kept as report metadata only.
auto reference_results(AblationAxis axis) -> std::vector<ReferenceResult>;

} // namespace dfa
