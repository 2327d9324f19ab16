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

#include "dfa/metrics.hpp"

#include "dfa/error.hpp"

#include <string>

namespace dfa {

auto classification_metrics(const std::vector<std::vector<std::size_t>>& confusion)
    -> ClassificationMetrics
{
    ClassificationMetrics m;
    std::size_t correct = 0;
    double acc_sum = 0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < confusion.size(); ++c) {
        if (confusion[c].size() != confusion.size()) {
            throw DimensionError("confusion matrix must be square");
        }
        std::size_t row = 0;
        for (auto v : confusion[c]) {
            row += v;
        }
        m.total += row;
        correct += confusion[c][c];
        if (row == 0) {
            m.per_class.emplace_back();
            continue;
        }
        const double acc = static_cast<double>(confusion[c][c]) / static_cast<double>(row);
        m.per_class.emplace_back(acc);
        acc_sum += acc;
        ++present;
    }
    if (m.total == 0) {
        throw DataError("cannot score an empty prediction set");
    }
    m.oa = static_cast<double>(correct) / static_cast<double>(m.total);
    m.macc = acc_sum / static_cast<double>(present);
    return m;
}

auto classification_metrics(std::span<const int> truth, std::span<const int> pred,
                            std::size_t num_classes) -> ClassificationMetrics
{
    if (truth.size() != pred.size()) {
        throw DimensionError("truth and prediction counts differ");
    }
    std::vector<std::vector<std::size_t>> confusion(num_classes,
                                                    std::vector<std::size_t>(num_classes, 0));
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const auto t = truth[i];
        const auto p = pred[i];
        if (t < 0 || static_cast<std::size_t>(t) >= num_classes || p < 0
            || static_cast<std::size_t>(p) >= num_classes) {
            throw DataError("label outside [0, " + std::to_string(num_classes) + ") at index "
                            + std::to_string(i));
        }
        ++confusion[t][p];
    }
    return classification_metrics(confusion);
}

PartLayout::PartLayout(std::vector<std::size_t> parts_per_category)
    : counts_{std::move(parts_per_category)}
{
    if (counts_.empty()) {
        throw ConfigError("part layout needs at least one category");
    }
    for (auto c : counts_) {
        if (c == 0) {
            throw ConfigError("every category needs at least one part");
        }
        first_.push_back(total_);
        total_ += c;
    }
}

auto PartLayout::shapenet() -> PartLayout
{
    return PartLayout{{4, 2, 2, 4, 4, 3, 3, 2, 4, 2, 6, 2, 3, 3, 3, 3}};
}

auto PartLayout::for_counts(std::size_t categories, std::size_t parts) -> PartLayout
{
    if (categories == 16 && parts == 50) {
        return shapenet();
    }
    if (categories == 0 || parts % categories != 0) {
        throw ConfigError("cannot split " + std::to_string(parts) + " parts evenly over "
                          + std::to_string(categories) + " categories");
    }
    return PartLayout{std::vector<std::size_t>(categories, parts / categories)};
}

auto PartLayout::parts(std::size_t category) const -> std::pair<std::size_t, std::size_t>
{
    if (category >= counts_.size()) {
        throw DataError("category " + std::to_string(category) + " outside layout of "
                        + std::to_string(counts_.size()));
    }
    return {first_[category], first_[category] + counts_[category]};
}

auto shape_iou(std::span<const int> truth, std::span<const int> pred, std::size_t first,
               std::size_t last) -> double
{
    if (truth.size() != pred.size()) {
        throw DimensionError("truth and prediction lengths differ");
    }
    if (last <= first) {
        throw ConfigError("empty part range");
    }
    const std::size_t n_parts = last - first;
    std::vector<std::size_t> inter(n_parts, 0);
    std::vector<std::size_t> uni(n_parts, 0);
    auto in_range = [&](int v) {
        return v >= 0 && static_cast<std::size_t>(v) >= first && static_cast<std::size_t>(v) < last;
    };
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (!in_range(truth[i])) {
            throw DataError("ground-truth part " + std::to_string(truth[i]) + " outside ["
                            + std::to_string(first) + ", " + std::to_string(last) + ")");
        }
        const auto t = static_cast<std::size_t>(truth[i]) - first;
        ++uni[t];
        if (truth[i] == pred[i]) {
            ++inter[t];
        } else if (in_range(pred[i])) {
            ++uni[static_cast<std::size_t>(pred[i]) - first];
        }
    }
    double sum = 0;
    for (std::size_t p = 0; p < n_parts; ++p) {
        sum += uni[p] == 0 ? 1.0 : static_cast<double>(inter[p]) / static_cast<double>(uni[p]);
    }
    return sum / static_cast<double>(n_parts);
}

auto part_segmentation_metrics(std::span<const SegmentedInstance> instances,
                               const PartLayout& layout) -> SegmentationMetrics
{
    if (instances.empty()) {
        throw DataError("cannot score an empty prediction set");
    }
    SegmentationMetrics m;
    std::vector<double> cat_sum(layout.categories(), 0.0);
    std::vector<std::size_t> cat_n(layout.categories(), 0);
    std::size_t correct = 0;
    std::size_t points = 0;
    double total = 0;
    for (const auto& inst : instances) {
        const auto [first, last] = layout.parts(inst.category);
        const double iou = shape_iou(inst.truth, inst.pred, first, last);
        m.per_instance.push_back(iou);
        total += iou;
        cat_sum[inst.category] += iou;
        ++cat_n[inst.category];
        for (std::size_t i = 0; i < inst.truth.size(); ++i) {
            correct += inst.truth[i] == inst.pred[i];
        }
        points += inst.truth.size();
    }
    m.miou = total / static_cast<double>(instances.size());
    m.accuracy = points ? static_cast<double>(correct) / static_cast<double>(points) : 0.0;
    for (std::size_t c = 0; c < cat_sum.size(); ++c) {
        if (cat_n[c] == 0) {
            m.per_category.emplace_back();
        } else {
            m.per_category.emplace_back(cat_sum[c] / static_cast<double>(cat_n[c]));
        }
    }
    return m;
}

} // namespace dfa
