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

#include "dfa/model.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

namespace dfa {

auto to_string(Task task) -> std::string
{
    switch (task) {
    case Task::classification:
        return "cls";
    case Task::part_segmentation:
        return "partseg";
    case Task::semantic_segmentation:
        return "semseg";
    }
    return "?";
}

auto parse_task(const std::string& name) -> Task
{
    if (name == "cls") {
        return Task::classification;
    }
    if (name == "partseg") {
        return Task::part_segmentation;
    }
    if (name == "semseg") {
        return Task::semantic_segmentation;
    }
    throw ConfigError("unknown task '" + name + "' (expected cls|partseg|semseg)");
}

// ---------------------------------------------------------------------------
// ModelConfig

auto ModelConfig::classification() -> ModelConfig
{
    return {};
}

auto ModelConfig::part_segmentation() -> ModelConfig
{
    ModelConfig c;
    c.task = Task::part_segmentation;
    c.num_points = 2048;
    c.k = 40;
    c.dfa_widths = {64, 64, 64};
    c.head_widths = {512, 256, 128};
    return c;
}

auto ModelConfig::semantic_segmentation() -> ModelConfig
{
    ModelConfig c = part_segmentation();
    c.task = Task::semantic_segmentation;
    c.num_points = 4096;
    c.k = 20;
    c.input_dim = 9;
    c.num_parts = 13;
    c.use_category_vector = false;
    return c;
}

void ModelConfig::validate() const
{
    auto positive = [](const std::vector<std::size_t>& v) {
        return !v.empty() && std::all_of(v.begin(), v.end(), [](auto w) { return w > 0; });
    };
    if (!positive(dfa_widths) || !positive(head_widths) || !positive(tnet_point_widths)
        || !positive(tnet_fc_widths)) {
        throw ConfigError("model config: width lists must be non-empty and positive");
    }
    if (k == 0 || pos_dim == 0 || global_branch_dim == 0 || embed_dim == 0 || category_dim == 0) {
        throw ConfigError("model config: k and all widths must be positive");
    }
    if (!dfa_k.empty() && dfa_k.size() != dfa_widths.size()) {
        throw ConfigError("model config: dfa_k needs one entry per DFA layer");
    }
    if (std::any_of(dfa_k.begin(), dfa_k.end(), [](auto v) { return v == 0; })) {
        throw ConfigError("model config: dfa_k entries must be positive");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        throw ConfigError("model config: dropout must lie in [0, 1)");
    }
    if (!(width_scale > 0.0) || !std::isfinite(width_scale)) {
        throw ConfigError("model config: width_scale must be positive");
    }
    if (input_dim < 3) {
        throw ConfigError("model config: input_dim must be at least 3");
    }
    if (task == Task::classification) {
        if (num_classes == 0 || input_dim != 3) {
            throw ConfigError("model config: classification needs num_classes >= 1 and xyz input");
        }
    } else if (num_parts == 0) {
        throw ConfigError("model config: segmentation needs num_parts >= 1");
    }
    if (task == Task::part_segmentation && use_category_vector && num_categories == 0) {
        throw ConfigError("model config: category vector needs num_categories >= 1");
    }
}

auto ModelConfig::effective() const -> ModelConfig
{
    ModelConfig e = *this;
    auto s = [this](std::size_t w) {
        return static_cast<std::size_t>(
            std::max<long long>(1, std::llround(static_cast<double>(w) * width_scale)));
    };
    auto sv = [&](std::vector<std::size_t>& v) {
        for (auto& w : v) {
            w = s(w);
        }
    };
    sv(e.dfa_widths);
    sv(e.head_widths);
    sv(e.tnet_point_widths);
    sv(e.tnet_fc_widths);
    e.pos_dim = s(pos_dim);
    e.global_branch_dim = s(global_branch_dim);
    e.embed_dim = s(embed_dim);
    e.category_dim = s(category_dim);
    e.width_scale = 1.0;
    return e;
}

auto ModelConfig::dfa_configs() const -> std::vector<DfaConfig>
{
    std::vector<DfaConfig> out;
    std::size_t d_in = input_dim;
    for (std::size_t i = 0; i < dfa_widths.size(); ++i) {
        DfaConfig c;
        c.d_in = d_in;
        c.d_out = dfa_widths[i];
        c.k = dfa_k.empty() ? k : dfa_k[i];
        c.pos_dim = pos_dim;
        c.aggregation = aggregation;
        c.use_position_encoding = use_position_encoding;
        c.graph_domain = graph_domain;
        out.push_back(c);
        d_in = dfa_widths[i];
    }
    return out;
}

auto ModelConfig::local_concat_dim() const -> std::size_t
{
    const auto locals = std::accumulate(dfa_widths.begin(), dfa_widths.end(), std::size_t{0});
    return locals + (use_low_dim_global ? global_branch_dim : 0);
}

auto ModelConfig::global_dim() const -> std::size_t
{
    const bool with_category = task == Task::part_segmentation && use_category_vector;
    return embed_dim + (with_category ? category_dim : 0);
}

auto ModelConfig::output_dim() const -> std::size_t
{
    return task == Task::classification ? num_classes : num_parts;
}

namespace {

auto join(const std::vector<std::size_t>& v) -> std::string
{
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out += (i ? "," : "") + std::to_string(v[i]);
    }
    return out;
}

auto format_double(double v) -> std::string
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

auto parse_size(const std::string& key, const std::string& s) -> std::size_t
{
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw ConfigError("model config: bad integer '" + s + "' for " + key);
    }
    return v;
}

auto parse_list(const std::string& key, const std::string& s) -> std::vector<std::size_t>
{
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(parse_size(key, item));
    }
    return out;
}

auto parse_double(const std::string& key, const std::string& s) -> double
{
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) {
            throw std::invalid_argument(s);
        }
        return v;
    } catch (const std::exception&) {
        throw ConfigError("model config: bad number '" + s + "' for " + key);
    }
}

auto parse_bool(const std::string& key, const std::string& s) -> bool
{
    if (s == "1" || s == "true") {
        return true;
    }
    if (s == "0" || s == "false") {
        return false;
    }
    throw ConfigError("model config: bad flag '" + s + "' for " + key);
}

} // namespace

auto ModelConfig::to_text() const -> std::string
{
    std::string t;
    auto put = [&t](const char* key, const std::string& value) {
        t += key;
        t += '=';
        t += value;
        t += '\n';
    };
    put("task", to_string(task));
    put("num_points", std::to_string(num_points));
    put("num_classes", std::to_string(num_classes));
    put("num_parts", std::to_string(num_parts));
    put("num_categories", std::to_string(num_categories));
    put("input_dim", std::to_string(input_dim));
    put("k", std::to_string(k));
    put("dfa_widths", join(dfa_widths));
    put("dfa_k", join(dfa_k));
    put("pos_dim", std::to_string(pos_dim));
    put("global_branch_dim", std::to_string(global_branch_dim));
    put("embed_dim", std::to_string(embed_dim));
    put("head_widths", join(head_widths));
    put("category_dim", std::to_string(category_dim));
    put("tnet_point_widths", join(tnet_point_widths));
    put("tnet_fc_widths", join(tnet_fc_widths));
    put("dropout", format_double(dropout));
    put("aggregation", to_string(aggregation));
    put("graph_domain", to_string(graph_domain));
    put("use_position_encoding", use_position_encoding ? "1" : "0");
    put("use_low_dim_global", use_low_dim_global ? "1" : "0");
    put("use_category_vector", use_category_vector ? "1" : "0");
    put("width_scale", format_double(width_scale));
    return t;
}

auto ModelConfig::from_text(const std::string& text) -> ModelConfig
{
    ModelConfig c;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("model config: expected key=value, got '" + line + "'");
        }
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (key == "task") {
            c.task = parse_task(value);
        } else if (key == "num_points") {
            c.num_points = parse_size(key, value);
        } else if (key == "num_classes") {
            c.num_classes = parse_size(key, value);
        } else if (key == "num_parts") {
            c.num_parts = parse_size(key, value);
        } else if (key == "num_categories") {
            c.num_categories = parse_size(key, value);
        } else if (key == "input_dim") {
            c.input_dim = parse_size(key, value);
        } else if (key == "k") {
            c.k = parse_size(key, value);
        } else if (key == "dfa_widths") {
            c.dfa_widths = parse_list(key, value);
        } else if (key == "dfa_k") {
            c.dfa_k = parse_list(key, value);
        } else if (key == "pos_dim") {
            c.pos_dim = parse_size(key, value);
        } else if (key == "global_branch_dim") {
            c.global_branch_dim = parse_size(key, value);
        } else if (key == "embed_dim") {
            c.embed_dim = parse_size(key, value);
        } else if (key == "head_widths") {
            c.head_widths = parse_list(key, value);
        } else if (key == "category_dim") {
            c.category_dim = parse_size(key, value);
        } else if (key == "tnet_point_widths") {
            c.tnet_point_widths = parse_list(key, value);
        } else if (key == "tnet_fc_widths") {
            c.tnet_fc_widths = parse_list(key, value);
        } else if (key == "dropout") {
            c.dropout = parse_double(key, value);
        } else if (key == "aggregation") {
            c.aggregation = parse_aggregation(value);
        } else if (key == "graph_domain") {
            c.graph_domain = parse_graph_domain(value);
        } else if (key == "use_position_encoding") {
            c.use_position_encoding = parse_bool(key, value);
        } else if (key == "use_low_dim_global") {
            c.use_low_dim_global = parse_bool(key, value);
        } else if (key == "use_category_vector") {
            c.use_category_vector = parse_bool(key, value);
        } else if (key == "width_scale") {
            c.width_scale = parse_double(key, value);
        } else {
            throw ConfigError("model config: unknown key '" + key + "'");
        }
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Accounting

auto count_parameters(const ModelConfig& config) -> std::size_t
{
    config.validate();
    const ModelConfig e = config.effective();
    std::size_t n = 0;
    std::size_t in = 3;
    for (auto w : e.tnet_point_widths) {
        n += mlp_block_param_count(in, w);
        in = w;
    }
    for (auto w : e.tnet_fc_widths) {
        n += mlp_block_param_count(in, w);
        in = w;
    }
    n += linear_param_count(in, 9);
    if (e.use_low_dim_global) {
        n += mlp_block_param_count(e.input_dim, e.global_branch_dim);
    }
    for (const auto& d : e.dfa_configs()) {
        n += d.param_count();
    }
    n += mlp_block_param_count(e.local_concat_dim(), e.embed_dim);
    if (e.task == Task::part_segmentation && e.use_category_vector) {
        n += mlp_block_param_count(e.num_categories, e.category_dim);
    }
    in = e.global_dim();
    if (e.task != Task::classification) {
        in += std::accumulate(e.dfa_widths.begin(), e.dfa_widths.end(), std::size_t{0});
    }
    for (auto w : e.head_widths) {
        n += mlp_block_param_count(in, w);
        in = w;
    }
    n += linear_param_count(in, e.output_dim());
    return n;
}

auto estimate_flops(const ModelConfig& config, std::size_t num_points) -> std::uint64_t
{
    config.validate();
    const ModelConfig e = config.effective();
    using u64 = std::uint64_t;
    const u64 n = num_points;
    u64 macs = 0;
    u64 distance = 0;

    u64 in = 3;
    for (auto w : e.tnet_point_widths) {
        macs += n * in * w;
        in = w;
    }
    for (auto w : e.tnet_fc_widths) {
        macs += in * w;
        in = w;
    }
    macs += in * 9 + n * 3 * 3;
    if (e.use_low_dim_global) {
        macs += n * e.input_dim * e.global_branch_dim;
    }
    for (const auto& d : e.dfa_configs()) {
        const u64 edges = n * std::min<u64>(d.k, n);
        distance += n * n * d.d_in;
        if (d.use_position_encoding) {
            macs += edges * 10 * d.pos_dim;
        }
        macs += edges * d.edge_input_dim() * d.d_out;
        if (d.aggregation == Aggregation::attention) {
            macs += edges * d.d_out;
        }
    }
    macs += n * e.local_concat_dim() * e.embed_dim;
    if (e.task == Task::part_segmentation && e.use_category_vector) {
        macs += u64{e.num_categories} * e.category_dim;
    }
    if (e.task == Task::classification) {
        in = e.global_dim();
        for (auto w : e.head_widths) {
            macs += in * w;
            in = w;
        }
        macs += in * e.output_dim();
    } else {
        in = e.global_dim()
             + std::accumulate(e.dfa_widths.begin(), e.dfa_widths.end(), std::size_t{0});
        for (auto w : e.head_widths) {
            macs += n * in * w;
            in = w;
        }
        macs += n * in * e.output_dim();
    }
    return 2 * macs + distance;
}

// ---------------------------------------------------------------------------
// DfaNetwork

template <typename T>
DfaNetwork<T>::DfaNetwork(const ModelConfig& config, std::uint64_t seed)
    : config_{config}, shape_{config.effective()}
{
    config_.validate();
    std::mt19937_64 rng{seed};
    std::size_t in = 3;
    for (std::size_t i = 0; i < shape_.tnet_point_widths.size(); ++i) {
        tnet_point_.emplace_back(params_, "tnet.point" + std::to_string(i), in,
                                 shape_.tnet_point_widths[i], rng);
        in = shape_.tnet_point_widths[i];
    }
    for (std::size_t i = 0; i < shape_.tnet_fc_widths.size(); ++i) {
        tnet_fc_.emplace_back(params_, "tnet.fc" + std::to_string(i), in,
                              shape_.tnet_fc_widths[i], rng);
        in = shape_.tnet_fc_widths[i];
    }
    tnet_out_ = LinearLayer<T>{params_, "tnet.out", in, 9, rng};
    // Start from the identity transform.
    std::fill(tnet_out_.weight().value.data.begin(), tnet_out_.weight().value.data.end(), T{0});
    auto& bias = tnet_out_.bias().value.data;
    for (std::size_t i = 0; i < 9; ++i) {
        bias[i] = (i % 4 == 0) ? T{1} : T{0};
    }

    if (shape_.use_low_dim_global) {
        global_ = MlpBlock<T>{params_, "global", shape_.input_dim, shape_.global_branch_dim, rng};
    }
    const auto dfa_cfgs = shape_.dfa_configs();
    for (std::size_t i = 0; i < dfa_cfgs.size(); ++i) {
        dfa_.emplace_back(params_, "dfa" + std::to_string(i), dfa_cfgs[i], rng);
    }
    embed_ = MlpBlock<T>{params_, "embed", shape_.local_concat_dim(), shape_.embed_dim, rng};

    const bool seg = shape_.task != Task::classification;
    if (shape_.task == Task::part_segmentation && shape_.use_category_vector) {
        category_ = MlpBlock<T>{params_, "category", shape_.num_categories, shape_.category_dim,
                                rng};
    }
    in = shape_.global_dim();
    if (seg) {
        in += std::accumulate(shape_.dfa_widths.begin(), shape_.dfa_widths.end(), std::size_t{0});
    }
    for (std::size_t i = 0; i < shape_.head_widths.size(); ++i) {
        head_.emplace_back(params_, "head" + std::to_string(i), in, shape_.head_widths[i], rng);
        in = shape_.head_widths[i];
    }
    output_ = LinearLayer<T>{params_, "output", in, shape_.output_dim(), rng};
}

template <typename T>
auto DfaNetwork<T>::spatial_transform(Tape<T>& tape, const Var<T>& coords) const -> Transformed
{
    const auto& s = coords.shape();
    if (s.size() != 3 || s[2] != 3) {
        throw DimensionError("spatial transform: expected [B, N, 3], got " + to_string(s));
    }
    auto h = coords;
    for (const auto& block : tnet_point_) {
        h = block.forward(tape, h);
    }
    auto g = reduce_max(h, 1);
    for (const auto& block : tnet_fc_) {
        g = block.forward(tape, g);
    }
    auto matrix = reshape(tnet_out_.forward(tape, g), Shape{s[0], 3, 3});
    return {batched_matmul(coords, matrix), matrix};
}

template <typename T>
auto DfaNetwork<T>::global_branch(Tape<T>& tape, const Var<T>& features) const -> Var<T>
{
    if (!shape_.use_low_dim_global) {
        throw ConfigError("global branch is disabled in this configuration");
    }
    return reduce_max(global_.forward(tape, features), 1);
}

template <typename T>
auto DfaNetwork<T>::local_features(Tape<T>& tape, const Var<T>& features, const Var<T>& coords,
                                   ForwardTrace* trace) const -> std::vector<Var<T>>
{
    std::vector<Var<T>> locals;
    auto f = features;
    for (const auto& layer : dfa_) {
        std::vector<NeighborGraph> graphs;
        f = layer.forward(tape, f, coords, trace != nullptr ? &graphs : nullptr);
        if (trace != nullptr) {
            trace->graphs.push_back(std::move(graphs));
        }
        locals.push_back(f);
    }
    return locals;
}

template <typename T>
auto DfaNetwork<T>::classify(Tape<T>& tape, const Var<T>& points, ForwardTrace* trace) const
    -> Var<T>
{
    if (shape_.task != Task::classification) {
        throw ConfigError("classify called on a " + to_string(shape_.task) + " model");
    }
    const auto& s = points.shape();
    if (s.size() != 3 || s[2] != 3) {
        throw DimensionError("classify: expected [B, N, 3], got " + to_string(s));
    }
    const auto aligned = spatial_transform(tape, points).points;
    auto parts = local_features(tape, aligned, aligned, trace);
    if (shape_.use_low_dim_global) {
        parts.push_back(broadcast_rows(global_branch(tape, aligned), s[1]));
    }
    auto concat = concat_last(parts);
    auto global = reduce_max(embed_.forward(tape, concat), 1);
    if (trace != nullptr) {
        trace->local_concat = concat.shape();
        trace->global = global.shape();
    }
    auto h = global;
    const T p = static_cast<T>(shape_.dropout);
    for (const auto& block : head_) {
        h = dropout(block.forward(tape, h), p);
    }
    return output_.forward(tape, h);
}

template <typename T>
auto DfaNetwork<T>::segment(Tape<T>& tape, const Var<T>& points,
                            const std::optional<Var<T>>& category, ForwardTrace* trace) const
    -> Var<T>
{
    if (shape_.task == Task::classification) {
        throw ConfigError("segment called on a classification model");
    }
    const auto& s = points.shape();
    if (s.size() != 3 || s[2] != shape_.input_dim) {
        throw DimensionError("segment: expected [B, N, " + std::to_string(shape_.input_dim)
                             + "], got " + to_string(s));
    }
    const bool wants_category =
        shape_.task == Task::part_segmentation && shape_.use_category_vector;
    if (category.has_value() && !wants_category) {
        throw ConfigError("segment: category vector supplied but the "
                          + to_string(shape_.task) + " model does not use one");
    }
    if (!category.has_value() && wants_category) {
        throw ConfigError("segment: part segmentation needs a category vector");
    }

    const bool xyz_only = shape_.input_dim == 3;
    const auto coords = xyz_only ? points : slice_last(points, 0, 3);
    const auto aligned = spatial_transform(tape, coords).points;
    const auto f0 =
        xyz_only ? aligned : concat_last<T>({aligned, slice_last(points, 3, shape_.input_dim)});

    auto locals = local_features(tape, f0, aligned, trace);
    auto parts = locals;
    if (shape_.use_low_dim_global) {
        parts.push_back(broadcast_rows(global_branch(tape, f0), s[1]));
    }
    auto concat = concat_last(parts);
    auto global = reduce_max(embed_.forward(tape, concat), 1);
    if (trace != nullptr) {
        trace->local_concat = concat.shape();
    }
    if (wants_category) {
        const auto& cs = category->shape();
        if (cs.size() != 2 || cs[0] != s[0] || cs[1] != shape_.num_categories) {
            throw DimensionError("segment: category vector must be [B, "
                                 + std::to_string(shape_.num_categories) + "], got "
                                 + to_string(cs));
        }
        global = concat_last<T>({global, category_.forward(tape, *category)});
    }
    if (trace != nullptr) {
        trace->global = global.shape();
    }
    std::vector<Var<T>> per_point{broadcast_rows(global, s[1])};
    per_point.insert(per_point.end(), locals.begin(), locals.end());
    auto h = concat_last(per_point);
    if (trace != nullptr) {
        trace->point_features = h.shape();
    }
    const T p = static_cast<T>(shape_.dropout);
    for (std::size_t i = 0; i < head_.size(); ++i) {
        h = head_[i].forward(tape, h);
        if (i < 2) {
            h = dropout(h, p);
        }
    }
    return output_.forward(tape, h);
}

template class DfaNetwork<float>;
template class DfaNetwork<double>;

} // namespace dfa
