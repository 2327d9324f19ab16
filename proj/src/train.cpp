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

#include "dfa/train.hpp"

#include "dfa/checkpoint.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <sstream>

namespace dfa {

auto to_string(Schedule s) -> std::string
{
    return s == Schedule::cosine ? "cosine" : "constant";
}

auto parse_schedule(const std::string& name) -> Schedule
{
    if (name == "cosine") {
        return Schedule::cosine;
    }
    if (name == "constant") {
        return Schedule::constant;
    }
    throw ConfigError("unknown schedule '" + name + "' (expected cosine|constant)");
}

auto TrainConfig::for_task(Task task) -> TrainConfig
{
    TrainConfig c;
    c.batch_size = task == Task::classification ? 32 : 16;
    return c;
}

void TrainConfig::validate() const
{
    if (!(lr >= 0) || !std::isfinite(lr)) {
        throw ConfigError("lr must be finite and non-negative");
    }
    if (!(momentum >= 0 && momentum < 1)) {
        throw ConfigError("momentum must lie in [0, 1)");
    }
    if (batch_size < 2) {
        throw ConfigError("batch size must be at least 2 for batch normalisation");
    }
    if (!(lr_min_ratio >= 0 && lr_min_ratio <= 1)) {
        throw ConfigError("lr_min_ratio must lie in [0, 1]");
    }
    if (!(val_fraction >= 0 && val_fraction < 1)) {
        throw ConfigError("val_fraction must lie in [0, 1)");
    }
    policy.validate();
}

auto TrainConfig::learning_rate(std::size_t epoch) const -> double
{
    if (schedule == Schedule::constant || epochs <= 1) {
        return lr;
    }
    const double lo = lr * lr_min_ratio;
    const double t = static_cast<double>(std::min(epoch, epochs - 1))
                     / static_cast<double>(epochs - 1);
    return lo + 0.5 * (lr - lo) * (1 + std::cos(std::numbers::pi * t));
}

namespace {

auto fmt(double v) -> std::string
{
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

auto splitmix(std::uint64_t x) -> std::uint64_t
{
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

auto category_of(const PointCloud& c) -> std::size_t
{
    return c.class_label ? static_cast<std::size_t>(*c.class_label) : 0;
}

template <typename T>
struct Batch
{
    Tensor<T> points;
    std::optional<Tensor<T>> category;
    std::vector<int> labels; // per cloud or flattened per point
};

template <typename T>
auto make_batch(const ModelConfig& cfg, std::span<const PointCloud* const> clouds) -> Batch<T>
{
    const std::size_t b = clouds.size();
    const std::size_t n = clouds.front()->size();
    const std::size_t d = cfg.input_dim;
    Batch<T> out{Tensor<T>{Shape{b, n, d}}, std::nullopt, {}};
    auto& x = out.points.data;
    for (std::size_t i = 0; i < b; ++i) {
        const auto& c = *clouds[i];
        for (std::size_t p = 0; p < n; ++p) {
            T* row = x.data() + (i * n + p) * d;
            for (std::size_t a = 0; a < 3; ++a) {
                row[a] = static_cast<T>(c.coords[3 * p + a]);
            }
            for (std::size_t a = 3; a < d; ++a) {
                row[a] = static_cast<T>(c.extra[c.extra_dims * p + a - 3]);
            }
        }
    }
    if (cfg.task == Task::classification) {
        for (const auto* c : clouds) {
            out.labels.push_back(*c->class_label);
        }
        return out;
    }
    for (const auto* c : clouds) {
        out.labels.insert(out.labels.end(), c->part_labels.begin(), c->part_labels.end());
    }
    if (cfg.task == Task::part_segmentation && cfg.use_category_vector) {
        Tensor<T> onehot{Shape{b, cfg.num_categories}};
        for (std::size_t i = 0; i < b; ++i) {
            onehot.data[i * cfg.num_categories + category_of(*clouds[i])] = T{1};
        }
        out.category = std::move(onehot);
    }
    return out;
}

// Logits as [rows, classes]: one row per cloud or per point.
template <typename T>
auto forward_rows(const DfaNetwork<T>& model, Tape<T>& tape, const Batch<T>& batch) -> Var<T>
{
    auto x = tape.constant(batch.points);
    if (model.config().task == Task::classification) {
        return model.classify(tape, x);
    }
    std::optional<Var<T>> cat;
    if (batch.category) {
        cat = tape.constant(*batch.category);
    }
    auto logits = model.segment(tape, x, cat);
    const Shape s = logits.shape();
    return reshape(logits, Shape{s[0] * s[1], s[2]});
}

template <typename T>
auto argmax_row(const T* row, std::size_t first, std::size_t last) -> int
{
    std::size_t best = first;
    for (std::size_t j = first + 1; j < last; ++j) {
        if (row[j] > row[best]) {
            best = j;
        }
    }
    return static_cast<int>(best);
}

template <typename T>
auto eval_logits(const DfaNetwork<T>& model, const Dataset& data, std::size_t first,
                 std::size_t count) -> Tensor<T>
{
    std::vector<const PointCloud*> ptrs;
    for (std::size_t i = first; i < first + count; ++i) {
        ptrs.push_back(&data[i]);
    }
    const auto batch = make_batch<T>(model.config(), ptrs);
    Tape<T> tape{Mode::evaluation, 0, false};
    return forward_rows(model, tape, batch).value();
}

} // namespace

auto config_fingerprint(const ModelConfig& model, const TrainConfig& train, int precision)
    -> std::string
{
    const std::string text =
        model.to_text() + train.to_text() + "precision=" + std::to_string(precision) + '\n';
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

auto TrainConfig::to_text() const -> std::string
{
    std::string out;
    auto kv = [&out](const char* k, const std::string& v) { out += std::string{k} + '=' + v + '\n'; };
    kv("lr", fmt(lr));
    kv("momentum", fmt(momentum));
    kv("batch_size", std::to_string(batch_size));
    kv("epochs", std::to_string(epochs));
    kv("schedule", to_string(schedule));
    kv("lr_min_ratio", fmt(lr_min_ratio));
    kv("seed", std::to_string(seed));
    kv("val_fraction", fmt(val_fraction));
    kv("augment", augment ? "1" : "0");
    kv("scale", fmt(policy.scale_low) + ',' + fmt(policy.scale_high));
    kv("shift_low", fmt(policy.shift_low[0]) + ',' + fmt(policy.shift_low[1]) + ','
                        + fmt(policy.shift_low[2]));
    kv("shift_high", fmt(policy.shift_high[0]) + ',' + fmt(policy.shift_high[1]) + ','
                         + fmt(policy.shift_high[2]));
    kv("jitter", fmt(policy.jitter_sigma) + ',' + fmt(policy.jitter_clip));
    return out;
}

auto part_layout(const ModelConfig& config) -> PartLayout
{
    return PartLayout::for_counts(config.num_categories, config.num_parts);
}

void check_dataset(const ModelConfig& config, const Dataset& data)
{
    if (data.empty()) {
        throw DataError("dataset is empty");
    }
    const std::size_t n = data.front().size();
    std::optional<PartLayout> layout;
    if (config.task == Task::part_segmentation) {
        layout = part_layout(config);
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& c = data[i];
        const auto where = "cloud " + std::to_string(i) + ": ";
        if (c.size() != n || n == 0) {
            throw DataError(where + "all clouds need the same positive point count");
        }
        if (c.dims() != config.input_dim) {
            throw DataError(where + "has " + std::to_string(c.dims()) + " channels, model expects "
                            + std::to_string(config.input_dim));
        }
        if (config.task == Task::classification) {
            if (!c.class_label || *c.class_label < 0
                || static_cast<std::size_t>(*c.class_label) >= config.num_classes) {
                throw DataError(where + "needs a class label in [0, "
                                + std::to_string(config.num_classes) + ")");
            }
            continue;
        }
        if (c.part_labels.size() != n) {
            throw DataError(where + "needs one part label per point");
        }
        std::size_t lo = 0;
        std::size_t hi = config.num_parts;
        if (layout) {
            const auto cat = c.class_label.value_or(0);
            if (cat < 0 || static_cast<std::size_t>(cat) >= config.num_categories) {
                throw DataError(where + "category " + std::to_string(cat) + " outside [0, "
                                + std::to_string(config.num_categories) + ")");
            }
            std::tie(lo, hi) = layout->parts(static_cast<std::size_t>(cat));
        }
        for (int l : c.part_labels) {
            if (l < 0 || static_cast<std::size_t>(l) < lo || static_cast<std::size_t>(l) >= hi) {
                throw DataError(where + "part label " + std::to_string(l) + " outside ["
                                + std::to_string(lo) + ", " + std::to_string(hi) + ")");
            }
        }
    }
}

template <typename T>
auto train(DfaNetwork<T>& model, const Dataset& data, const TrainConfig& config,
           const EpochCallback& on_epoch) -> MetricReport
{
    using clock = std::chrono::steady_clock;
    const auto start = clock::now();
    config.validate();
    const auto& mcfg = model.config();
    check_dataset(mcfg, data);
    auto [train_set, val_set] = split_validation(data, config.val_fraction, splitmix(config.seed));
    if (train_set.size() < 2) {
        throw DataError("training split needs at least 2 clouds");
    }

    MetricReport report;
    report.task = mcfg.task;
    report.fingerprint = config_fingerprint(mcfg, config, static_cast<int>(8 * sizeof(T)));
    report.train_clouds = train_set.size();
    report.val_clouds = val_set.size();

    std::mt19937_64 rng{config.seed};
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = config.learning_rate(epoch);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0;
        std::size_t loss_rows = 0;
        std::size_t correct = 0;
        std::size_t seen = 0;
        for (std::size_t b = 0, first = 0; first < order.size(); ++b, first += config.batch_size) {
            const std::size_t count = std::min(config.batch_size, order.size() - first);
            if (count < 2) {
                break; // a single cloud cannot be batch-normalised
            }
            Dataset clouds;
            std::vector<const PointCloud*> ptrs;
            clouds.reserve(count);
            for (std::size_t i = 0; i < count; ++i) {
                const auto& src = train_set[order[first + i]];
                clouds.push_back(config.augment ? augment(src, rng, config.policy) : src);
            }
            for (const auto& c : clouds) {
                ptrs.push_back(&c);
            }
            const auto batch = make_batch<T>(mcfg, ptrs);

            Tape<T> tape{Mode::training, splitmix(config.seed ^ splitmix(epoch * 1000003 + b))};
            const auto where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(b);
            Var<T> logits;
            Var<T> loss;
            try {
                logits = forward_rows(model, tape, batch);
                loss = cross_entropy(logits, std::span<const int>{batch.labels});
            } catch (const DivergenceError&) {
                throw;
            } catch (const NumericError& e) {
                // Non-finite activations (caught by the kNN input check).
                throw DivergenceError(epoch, b, "diverged at " + where + ": " + e.what());
            }
            const double value = static_cast<double>(loss.value().data[0]);
            if (!std::isfinite(value)) {
                throw DivergenceError(epoch, b, "non-finite loss at " + where);
            }
            model.params().zero_grad();
            tape.backward(loss);
            sgd_momentum_step(model.params(), static_cast<T>(lr), static_cast<T>(config.momentum));

            const auto& lv = logits.value();
            const std::size_t rows = lv.rows();
            const std::size_t cols = lv.cols();
            for (std::size_t r = 0; r < rows; ++r) {
                correct += argmax_row(lv.data.data() + r * cols, 0, cols) == batch.labels[r];
            }
            seen += rows;
            loss_sum += value * static_cast<double>(rows);
            loss_rows += rows;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.train_loss = loss_rows ? loss_sum / static_cast<double>(loss_rows) : 0.0;
        rec.train_acc = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
        rec.val_metric = val_set.empty() ? rec.train_acc
                                         : evaluate_headline(model, val_set, config.batch_size);
        rec.wall_clock_s = std::chrono::duration<double>(clock::now() - start).count();
        if (rec.val_metric > report.best_val_metric) {
            report.best_val_metric = rec.val_metric;
            report.best_epoch = epoch;
            if (!config.checkpoint_path.empty()) {
                std::ostringstream state;
                state << rng;
                save_checkpoint(config.checkpoint_path, make_checkpoint(model, state.str()));
            }
        }
        report.epochs.push_back(rec);
        if (on_epoch) {
            on_epoch(rec);
        }
    }
    report.wall_clock_s = std::chrono::duration<double>(clock::now() - start).count();
    return report;
}

template <typename T>
auto predict_classes(const DfaNetwork<T>& model, const Dataset& data, std::size_t batch)
    -> std::vector<int>
{
    if (model.config().task != Task::classification) {
        throw ConfigError("predict_classes needs a classification model");
    }
    std::vector<int> out;
    for (std::size_t first = 0; first < data.size(); first += batch) {
        const auto count = std::min(batch, data.size() - first);
        const auto logits = eval_logits(model, data, first, count);
        const auto cols = logits.cols();
        for (std::size_t r = 0; r < count; ++r) {
            out.push_back(argmax_row(logits.data.data() + r * cols, 0, cols));
        }
    }
    return out;
}

template <typename T>
auto predict_parts(const DfaNetwork<T>& model, const Dataset& data, std::size_t batch)
    -> std::vector<std::vector<int>>
{
    const auto& cfg = model.config();
    if (cfg.task == Task::classification) {
        throw ConfigError("predict_parts needs a segmentation model");
    }
    std::optional<PartLayout> layout;
    if (cfg.task == Task::part_segmentation) {
        layout = part_layout(cfg);
    }
    std::vector<std::vector<int>> out;
    for (std::size_t first = 0; first < data.size(); first += batch) {
        const auto count = std::min(batch, data.size() - first);
        const auto logits = eval_logits(model, data, first, count);
        const auto cols = logits.cols();
        for (std::size_t i = 0; i < count; ++i) {
            const auto& cloud = data[first + i];
            const std::size_t n = cloud.size();
            auto [lo, hi] = layout ? layout->parts(category_of(cloud))
                                   : std::pair<std::size_t, std::size_t>{0, cols};
            std::vector<int> pred(n);
            for (std::size_t p = 0; p < n; ++p) {
                const std::size_t r = i * n + p;
                pred[p] = argmax_row(logits.data.data() + r * cols, lo, hi);
            }
            out.push_back(std::move(pred));
        }
    }
    return out;
}

template <typename T>
auto evaluate_classification(const DfaNetwork<T>& model, const Dataset& data, std::size_t batch)
    -> ClassificationMetrics
{
    check_dataset(model.config(), data);
    const auto pred = predict_classes(model, data, batch);
    std::vector<int> truth;
    for (const auto& c : data) {
        truth.push_back(*c.class_label);
    }
    return classification_metrics(truth, pred, model.config().num_classes);
}

template <typename T>
auto evaluate_part_segmentation(const DfaNetwork<T>& model, const Dataset& data,
                                std::size_t batch) -> SegmentationMetrics
{
    const auto& cfg = model.config();
    if (cfg.task != Task::part_segmentation) {
        throw ConfigError("evaluate_part_segmentation needs a part segmentation model");
    }
    check_dataset(cfg, data);
    const auto pred = predict_parts(model, data, batch);
    std::vector<SegmentedInstance> inst;
    for (std::size_t i = 0; i < data.size(); ++i) {
        inst.push_back({category_of(data[i]), data[i].part_labels, pred[i]});
    }
    return part_segmentation_metrics(inst, part_layout(cfg));
}

template <typename T>
auto evaluate_headline(const DfaNetwork<T>& model, const Dataset& data, std::size_t batch)
    -> double
{
    switch (model.config().task) {
    case Task::classification:
        return evaluate_classification(model, data, batch).oa;
    case Task::part_segmentation:
        return evaluate_part_segmentation(model, data, batch).miou;
    case Task::semantic_segmentation: {
        check_dataset(model.config(), data);
        const auto pred = predict_parts(model, data, batch);
        std::size_t correct = 0;
        std::size_t total = 0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            for (std::size_t p = 0; p < pred[i].size(); ++p) {
                correct += pred[i][p] == data[i].part_labels[p];
            }
            total += pred[i].size();
        }
        return static_cast<double>(correct) / static_cast<double>(total);
    }
    }
    return 0;
}

#define DFA_INSTANTIATE(T)                                                                         \
    template auto train<T>(DfaNetwork<T>&, const Dataset&, const TrainConfig&,                     \
                           const EpochCallback&) -> MetricReport;                                  \
    template auto predict_classes<T>(const DfaNetwork<T>&, const Dataset&, std::size_t)            \
        -> std::vector<int>;                                                                       \
    template auto predict_parts<T>(const DfaNetwork<T>&, const Dataset&, std::size_t)              \
        -> std::vector<std::vector<int>>;                                                          \
    template auto evaluate_classification<T>(const DfaNetwork<T>&, const Dataset&, std::size_t)    \
        -> ClassificationMetrics;                                                                  \
    template auto evaluate_part_segmentation<T>(const DfaNetwork<T>&, const Dataset&,              \
                                                std::size_t) -> SegmentationMetrics;               \
    template auto evaluate_headline<T>(const DfaNetwork<T>&, const Dataset&, std::size_t) -> double;

DFA_INSTANTIATE(float)
DFA_INSTANTIATE(double)

} // namespace dfa
