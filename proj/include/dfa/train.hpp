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

#include "dfa/data.hpp"
#include "dfa/metrics.hpp"
#include "dfa/model.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace dfa {

enum class Schedule { cosine, constant };

auto to_string(Schedule s) -> std::string;
auto parse_schedule(const std::string& name) -> Schedule;

struct TrainConfig
{
    double lr = 0.1;
    double momentum = 0.9;
    std::size_t batch_size = 32;
    std::size_t epochs = 200;
    Schedule schedule = Schedule::cosine;
    double lr_min_ratio = 0.01; // cosine floor as a fraction of lr
    std::uint64_t seed = 1;
    double val_fraction = 0.1;
    bool augment = true;
    AugmentPolicy policy;
    std::string checkpoint_path; // empty: no checkpoint

    // 32 for classification, 16 for segmentation.
    static auto for_task(Task task) -> TrainConfig;
    void validate() const;
    [[nodiscard]] auto learning_rate(std::size_t epoch) const -> double;
    [[nodiscard]] auto to_text() const -> std::string;
};

struct EpochRecord
{
    std::size_t epoch = 0;
    double lr = 0;
    double train_loss = 0;
    double train_acc = 0;
    double val_metric = 0;
    double wall_clock_s = 0;
};

struct MetricReport
{
    Task task = Task::classification;
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_val_metric = -1;
    std::string fingerprint;
    double wall_clock_s = 0;
    std::size_t train_clouds = 0;
    std::size_t val_clouds = 0;
};

// 64-bit FNV-1a of the canonical model and training configuration and
// the floating-point width, as 16 hex digits.
auto config_fingerprint(const ModelConfig& model, const TrainConfig& train, int precision)
    -> std::string;

using EpochCallback = std::function<void(const EpochRecord&)>;

// Trains in place. The validation split (val_fraction) is held out and
// scored after every epoch; the checkpoint, if requested, is rewritten
// whenever that score improves. Throws DivergenceError on a non-finite
// loss.
template <typename T>
auto train(DfaNetwork<T>& model, const Dataset& data, const TrainConfig& config,
           const EpochCallback& on_epoch = {}) -> MetricReport;

// Per-cloud class predictions in evaluation mode.
template <typename T>
auto predict_classes(const DfaNetwork<T>& model, const Dataset& data, std::size_t batch = 32)
    -> std::vector<int>;

// Per-point part predictions. For part segmentation the argmax is taken
// over the parts of each cloud's category.
template <typename T>
auto predict_parts(const DfaNetwork<T>& model, const Dataset& data, std::size_t batch = 16)
    -> std::vector<std::vector<int>>;

template <typename T>
auto evaluate_classification(const DfaNetwork<T>& model, const Dataset& data,
                             std::size_t batch = 32) -> ClassificationMetrics;

// Instances without a class label are category 0.
template <typename T>
auto evaluate_part_segmentation(const DfaNetwork<T>& model, const Dataset& data,
                                std::size_t batch = 16) -> SegmentationMetrics;

// Task-appropriate headline metric: OA, or mIoU for part segmentation,
// or point accuracy for semantic segmentation.
template <typename T>
auto evaluate_headline(const DfaNetwork<T>& model, const Dataset& data, std::size_t batch)
    -> double;

auto part_layout(const ModelConfig& config) -> PartLayout;

// Throws DataError if data is empty or lacks the labels the task needs.
void check_dataset(const ModelConfig& config, const Dataset& data);

} // namespace dfa
