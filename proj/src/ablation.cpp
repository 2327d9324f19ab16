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

#include "dfa/ablation.hpp"

#include "dfa/report.hpp"

#include <chrono>
#include <ostream>
#include <sstream>

namespace dfa {

auto to_string(AblationAxis axis) -> std::string
{
    switch (axis) {
    case AblationAxis::k: return "k";
    case AblationAxis::aggregation: return "aggregation";
    case AblationAxis::graph_domain: return "graph_domain";
    case AblationAxis::position_encoding: return "use_position_encoding";
    case AblationAxis::low_dim_global: return "use_low_dim_global";
    }
    return "k";
}

auto parse_ablation_axis(const std::string& name) -> AblationAxis
{
    if (name == "k") {
        return AblationAxis::k;
    }
    if (name == "aggregation" || name == "agg") {
        return AblationAxis::aggregation;
    }
    if (name == "graph_domain" || name == "domain") {
        return AblationAxis::graph_domain;
    }
    if (name == "use_position_encoding" || name == "pos") {
        return AblationAxis::position_encoding;
    }
    if (name == "use_low_dim_global" || name == "global") {
        return AblationAxis::low_dim_global;
    }
    throw ConfigError("unknown ablation axis '" + name
                      + "' (expected k|aggregation|graph_domain|use_position_encoding|"
                        "use_low_dim_global)");
}

namespace {

auto parse_switch(const std::string& v) -> bool
{
    if (v == "on" || v == "1" || v == "true") {
        return true;
    }
    if (v == "off" || v == "0" || v == "false") {
        return false;
    }
    throw ConfigError("expected on|off, got '" + v + "'");
}

void apply(ModelConfig& c, AblationAxis axis, const std::string& value)
{
    switch (axis) {
    case AblationAxis::k: {
        std::size_t k = 0;
        std::size_t used = 0;
        try {
            k = std::stoul(value, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != value.size() || k == 0) {
            throw ConfigError("ablation k must be a positive integer, got '" + value + "'");
        }
        c.k = k;
        c.dfa_k.clear();
        break;
    }
    case AblationAxis::aggregation: c.aggregation = parse_aggregation(value); break;
    case AblationAxis::graph_domain: c.graph_domain = parse_graph_domain(value); break;
    case AblationAxis::position_encoding: c.use_position_encoding = parse_switch(value); break;
    case AblationAxis::low_dim_global: c.use_low_dim_global = parse_switch(value); break;
    }
}

auto split(const std::string& s, char sep) -> std::vector<std::string>
{
    std::vector<std::string> out;
    std::stringstream ss{s};
    std::string item;
    while (std::getline(ss, item, sep)) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b != std::string::npos) {
            out.push_back(item.substr(b, e - b + 1));
        }
    }
    return out;
}

} // namespace

auto AblationGrid::parse(const std::string& text) -> AblationGrid
{
    AblationGrid g;
    for (const auto& part : split(text, ';')) {
        const auto eq = part.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("ablation grid: expected axis=v1,v2 in '" + part + "'");
        }
        const auto axis = parse_ablation_axis(part.substr(0, eq));
        for (const auto& [a, _] : g.axes) {
            if (a == axis) {
                throw ConfigError("ablation grid: axis '" + to_string(axis) + "' given twice");
            }
        }
        auto values = split(part.substr(eq + 1), ',');
        if (values.empty()) {
            throw ConfigError("ablation grid: axis '" + to_string(axis) + "' has no values");
        }
        ModelConfig probe;
        for (const auto& v : values) {
            apply(probe, axis, v);
        }
        g.axes.emplace_back(axis, std::move(values));
    }
    if (g.axes.empty()) {
        throw ConfigError("ablation grid is empty");
    }
    return g;
}

auto AblationGrid::cells(const ModelConfig& base) const -> std::vector<ModelConfig>
{
    std::vector<ModelConfig> out{base};
    for (const auto& [axis, values] : axes) {
        std::vector<ModelConfig> next;
        for (const auto& c : out) {
            for (const auto& v : values) {
                auto cell = c;
                apply(cell, axis, v);
                next.push_back(std::move(cell));
            }
        }
        out = std::move(next);
    }
    return out;
}

template <typename T>
auto run_ablation(const AblationGrid& grid, const ModelConfig& base, const TrainConfig& train_config,
                  const std::vector<std::uint64_t>& seeds, const Dataset& train_data,
                  const Dataset& test, const std::function<void(const AblationRow&)>& on_row)
    -> std::vector<AblationRow>
{
    if (seeds.empty()) {
        throw ConfigError("ablation needs at least one seed");
    }
    if (base.task == Task::semantic_segmentation) {
        throw ConfigError("ablation supports classification and part segmentation");
    }
    std::vector<AblationRow> rows;
    for (const auto& cell : grid.cells(base)) {
        cell.validate();
        for (auto seed : seeds) {
            const auto start = std::chrono::steady_clock::now();
            DfaNetwork<T> model{cell, seed};
            auto tc = train_config;
            tc.seed = seed;
            tc.checkpoint_path.clear();
            train(model, train_data, tc);

            AblationRow row;
            row.k = cell.k;
            row.aggregation = cell.aggregation;
            row.graph_domain = cell.graph_domain;
            row.position_encoding = cell.use_position_encoding;
            row.low_dim_global = cell.use_low_dim_global;
            row.seed = seed;
            if (cell.task == Task::classification) {
                const auto m = evaluate_classification(model, test, tc.batch_size);
                row.oa = m.oa;
                row.macc = m.macc;
            } else {
                const auto m = evaluate_part_segmentation(model, test, tc.batch_size);
                row.oa = m.accuracy;
                row.miou = m.miou;
            }
            row.wall_clock_s =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            rows.push_back(row);
            if (on_row) {
                on_row(row);
            }
        }
    }
    return rows;
}

void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows)
{
    auto opt = [](const std::optional<double>& v) { return v ? format_real(*v) : std::string{}; };
    out << ablation_csv_header << '\n';
    for (const auto& r : rows) {
        out << r.k << ',' << to_string(r.aggregation) << ',' << to_string(r.graph_domain) << ','
            << (r.position_encoding ? "on" : "off") << ',' << (r.low_dim_global ? "on" : "off")
            << ',' << r.seed << ',' << opt(r.oa) << ',' << opt(r.macc) << ',' << opt(r.miou) << ','
            << format_real(r.wall_clock_s) << '\n';
    }
}

auto reference_results(AblationAxis axis) -> std::vector<ReferenceResult>
{
    switch (axis) {
    case AblationAxis::k:
        return {{"10", 90.2, 93.3}, {"20", 90.8, 93.7}, {"40", 91.6, 94.0}, {"60", 91.5, 93.3}};
    case AblationAxis::aggregation:
        return {{"max", 91.6, 94.0}, {"sum", 90.5, 93.4}, {"mean", 90.3, 93.2},
                {"attn", 91.0, 93.5}};
    case AblationAxis::graph_domain:
        return {{"feature", 91.6, 94.0}, {"spatial", 91.1, 93.4}};
    case AblationAxis::position_encoding:
        return {{"on", 91.6, 94.0}, {"off", 90.1, 93.3}};
    case AblationAxis::low_dim_global:
        return {{"on", 91.6, 94.0}, {"off", 89.9, 93.1}};
    }
    return {};
}

template auto run_ablation<float>(const AblationGrid&, const ModelConfig&, const TrainConfig&,
                                  const std::vector<std::uint64_t>&, const Dataset&,
                                  const Dataset&, const std::function<void(const AblationRow&)>&)
    -> std::vector<AblationRow>;
template auto run_ablation<double>(const AblationGrid&, const ModelConfig&, const TrainConfig&,
                                   const std::vector<std::uint64_t>&, const Dataset&,
                                   const Dataset&, const std::function<void(const AblationRow&)>&)
    -> std::vector<AblationRow>;

} // namespace dfa
