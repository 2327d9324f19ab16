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

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace dfa {

struct ClassificationMetrics
{
    double oa = 0;
    double macc = 0;
    // Empty for classes with no ground-truth instance.
    std::vector<std::optional<double>> per_class;
    std::size_t total = 0;
};

// confusion[truth][pred]. Classes without ground truth are left out of mAcc.
auto classification_metrics(const std::vector<std::vector<std::size_t>>& confusion)
    -> ClassificationMetrics;
auto classification_metrics(std::span<const int> truth, std::span<const int> pred,
                            std::size_t num_classes) -> ClassificationMetrics;

// Contiguous part ranges per category: category c owns parts
// [first(c), first(c) + count(c)).
class PartLayout
{
public:
    explicit PartLayout(std::vector<std::size_t> parts_per_category);

    // 16 categories, 50 parts: 4 2 2 4 4 3 3 2 4 2 6 2 3 3 3 3.
    static auto shapenet() -> PartLayout;
    // Picks shapenet() for (16, 50), a single category owning every part
    // for one category, and an even split otherwise.
    static auto for_counts(std::size_t categories, std::size_t parts) -> PartLayout;

    [[nodiscard]] auto categories() const -> std::size_t { return counts_.size(); }
    [[nodiscard]] auto total_parts() const -> std::size_t { return total_; }
    [[nodiscard]] auto parts(std::size_t category) const -> std::pair<std::size_t, std::size_t>;

private:
    std::vector<std::size_t> counts_;
    std::vector<std::size_t> first_;
    std::size_t total_ = 0;
};

// Mean over parts in [first, last) of |pred and gt| / |pred or gt|, with a
// part absent from both counting as 1. Throws DataError if a ground-truth
// label lies outside the range.
auto shape_iou(std::span<const int> truth, std::span<const int> pred, std::size_t first,
               std::size_t last) -> double;

struct SegmentationMetrics
{
    double miou = 0;      // mean of shape IoU over instances
    double accuracy = 0;  // point-level accuracy
    std::vector<std::optional<double>> per_category;
    std::vector<double> per_instance;
};

struct SegmentedInstance
{
    std::size_t category = 0;
    std::span<const int> truth;
    std::span<const int> pred;
};

auto part_segmentation_metrics(std::span<const SegmentedInstance> instances,
                               const PartLayout& layout) -> SegmentationMetrics;

} // namespace dfa
