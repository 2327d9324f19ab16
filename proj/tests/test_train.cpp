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
#include "dfa/checkpoint.hpp"
#include "dfa/report.hpp"

#include "doctest.h"

#include <cmath>
#include <cstring>
#include <sstream>

using namespace dfa;

namespace {

auto tiny_set(std::size_t per_class, std::uint64_t seed, std::vector<std::string> classes = {"sphere", "plane"})
    -> Dataset
{
    SyntheticSpec spec;
    spec.classes = std::move(classes);
    spec.per_class = per_class;
    spec.points = 48;
    spec.seed = seed;
    return generate_synthetic_set(spec);
}

auto tiny_model(std::size_t classes = 2) -> ModelConfig
{
    auto c = ModelConfig::classification();
    c.num_classes = classes;
    c.num_points = 48;
    c.k = 6;
    c.width_scale = 0.125;
    return c;
}

auto tiny_train(std::size_t epochs) -> TrainConfig
{
    TrainConfig t;
    t.epochs = epochs;
    t.batch_size = 8;
    t.seed = 4;
    return t;
}

auto trainable(const ParamSet<float>& p) -> std::vector<std::vector<float>>
{
    std::vector<std::vector<float>> out;
    for (const auto& x : p) {
        if (x.trainable) {
            out.push_back(x.value.data);
        }
    }
    return out;
}

auto all_values(const ParamSet<float>& p) -> std::vector<std::vector<float>>
{
    std::vector<std::vector<float>> out;
    for (const auto& x : p) {
        out.push_back(x.value.data);
    }
    return out;
}

auto strip_last_column(const std::string& csv) -> std::string
{
    std::istringstream in{csv};
    std::string line;
    std::string out;
    while (std::getline(in, line)) {
        out += line.substr(0, line.rfind(',')) + "\n";
    }
    return out;
}

// Minimal well-formedness check: balanced, properly nested tags, quoted
// attributes, and no stray '<' or unescaped '&' in text.
auto well_formed_xml(const std::string& s) -> bool
{
    std::vector<std::string> stack;
    std::size_t i = 0;
    if (s.rfind("<?xml", 0) == 0) {
        i = s.find("?>");
        if (i == std::string::npos) {
            return false;
        }
        i += 2;
    }
    bool root_seen = false;
    while (i < s.size()) {
        if (s[i] == '<') {
            const auto end = s.find('>', i);
            if (end == std::string::npos) {
                return false;
            }
            std::string tag = s.substr(i + 1, end - i - 1);
            i = end + 1;
            if (!tag.empty() && tag[0] == '/') {
                if (stack.empty() || stack.back() != tag.substr(1)) {
                    return false;
                }
                stack.pop_back();
                continue;
            }
            const bool self_closing = !tag.empty() && tag.back() == '/';
            if (self_closing) {
                tag.pop_back();
            }
            const auto name = tag.substr(0, tag.find_first_of(" \t\n"));
            if (name.empty() || tag.find('<') != std::string::npos) {
                return false;
            }
            if (std::count(tag.begin(), tag.end(), '"') % 2 != 0) {
                return false;
            }
            if (stack.empty()) {
                if (root_seen) {
                    return false;
                }
                root_seen = true;
            }
            if (!self_closing) {
                stack.push_back(name);
            }
        } else {
            if (s[i] == '&') {
                const auto semi = s.find(';', i);
                const auto ent = s.substr(i, semi - i + 1);
                if (ent != "&amp;" && ent != "&lt;" && ent != "&gt;" && ent != "&quot;"
                    && ent != "&apos;") {
                    return false;
                }
            } else if (stack.empty() && !std::isspace(static_cast<unsigned char>(s[i]))) {
                return false;
            }
            ++i;
        }
    }
    return root_seen && stack.empty();
}

} // namespace

TEST_CASE("classification metrics")
{
    const auto m = classification_metrics({{3, 1}, {2, 4}});
    CHECK(m.oa == doctest::Approx(0.7));
    CHECK(m.macc == doctest::Approx((3.0 / 4 + 4.0 / 6) / 2));
    CHECK(m.macc == doctest::Approx(0.70833).epsilon(1e-5));

    std::vector<int> truth(100, 0);
    std::fill(truth.begin() + 90, truth.end(), 1);
    const std::vector<int> zeros(100, 0);
    const auto skew = classification_metrics(truth, zeros, 2);
    CHECK(skew.oa == doctest::Approx(0.9));
    CHECK(skew.macc == doctest::Approx(0.5));

    const auto perfect = classification_metrics(truth, truth, 2);
    CHECK(perfect.oa == 1.0);
    CHECK(perfect.macc == 1.0);

    // Class 2 never occurs: excluded from mAcc.
    const std::vector<int> t3{0, 0, 1, 1};
    const std::vector<int> p3{0, 2, 1, 1};
    const auto absent = classification_metrics(t3, p3, 3);
    CHECK(absent.macc == doctest::Approx(0.75));
    CHECK_FALSE(absent.per_class[2].has_value());

    // Balanced set: mAcc equals OA.
    const std::vector<int> bt{0, 0, 1, 1, 2, 2};
    const std::vector<int> bp{0, 1, 1, 1, 0, 2};
    const auto bal = classification_metrics(bt, bp, 3);
    CHECK(bal.macc == doctest::Approx(bal.oa));

    CHECK_THROWS_AS(classification_metrics(std::vector<int>{}, std::vector<int>{}, 2), DataError);
}

TEST_CASE("part IoU")
{
    const std::vector<int> gt{0, 0, 1, 1};
    const std::vector<int> pred{0, 1, 1, 1};
    CHECK(shape_iou(gt, pred, 0, 2) == doctest::Approx(7.0 / 12));
    CHECK(shape_iou(gt, gt, 0, 2) == 1.0);
    // Part 2 absent from both: IoU 1 for it.
    CHECK(shape_iou(gt, pred, 0, 3) == doctest::Approx((0.5 + 2.0 / 3 + 1.0) / 3));
    const std::vector<int> outside{0, 3, 1, 1};
    CHECK_THROWS_AS(shape_iou(outside, pred, 0, 2), DataError);

    const PartLayout layout{{2, 3}};
    CHECK(layout.parts(1) == std::pair<std::size_t, std::size_t>{2, 5});
    const std::vector<int> gt1{2, 3, 4, 4};
    const std::vector<SegmentedInstance> inst{{0, gt, pred}, {1, gt1, gt1}};
    const auto m = part_segmentation_metrics(inst, layout);
    CHECK(m.miou == doctest::Approx((7.0 / 12 + 1.0) / 2));
    CHECK(m.accuracy == doctest::Approx(7.0 / 8));
    CHECK(PartLayout::shapenet().total_parts() == 50);
    CHECK(PartLayout::for_counts(16, 50).categories() == 16);
}

TEST_CASE("cosine schedule")
{
    TrainConfig c;
    c.epochs = 200;
    CHECK(c.learning_rate(0) == doctest::Approx(0.1));
    CHECK(c.learning_rate(199) == doctest::Approx(1e-3));
    for (std::size_t e = 1; e < 200; ++e) {
        CHECK(c.learning_rate(e) <= c.learning_rate(e - 1));
    }
    CHECK(TrainConfig::for_task(Task::part_segmentation).batch_size == 16);
    CHECK(TrainConfig::for_task(Task::classification).batch_size == 32);
    c.batch_size = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("zero learning rate leaves the weights untouched")
{
    const auto data = tiny_set(6, 1);
    DfaNetwork<float> net{tiny_model(), 1};
    const auto before = trainable(net.params());
    auto cfg = tiny_train(3);
    cfg.lr = 0.0;
    (void)train(net, data, cfg);
    CHECK(trainable(net.params()) == before);
}

TEST_CASE("single batch overfits")
{
    auto data = tiny_set(4, 2);
    auto mcfg = tiny_model();
    mcfg.width_scale = 0.25;
    DfaNetwork<float> net{mcfg, 2};
    auto cfg = tiny_train(200);
    cfg.val_fraction = 0.0;
    cfg.augment = false;
    cfg.lr = 0.05;
    const auto report = train(net, data, cfg);
    REQUIRE(report.epochs.size() == 200);
    CHECK(report.epochs.back().train_loss < report.epochs.front().train_loss);
    CHECK(report.epochs.back().train_loss < 0.5 * report.epochs.front().train_loss);
}

TEST_CASE("training is reproducible and evaluation is read-only")
{
    const auto data = tiny_set(6, 3);
    auto run = [&](std::string& csv, std::string& ckpt) {
        DfaNetwork<float> net{tiny_model(), 9};
        auto cfg = tiny_train(4);
        const auto report = train(net, data, cfg);
        std::ostringstream out;
        write_epoch_csv(out, report.epochs);
        csv = out.str();
        std::ostringstream c;
        write_checkpoint(c, make_checkpoint(net));
        ckpt = c.str();
        return report.epochs.back().train_loss;
    };
    std::string csv1, csv2, ck1, ck2;
    const double l1 = run(csv1, ck1);
    const double l2 = run(csv2, ck2);
    CHECK(std::memcmp(&l1, &l2, sizeof l1) == 0);
    CHECK(strip_last_column(csv1) == strip_last_column(csv2));
    CHECK(ck1 == ck2);

    DfaNetwork<float> net{tiny_model(), 9};
    const auto before = all_values(net.params());
    (void)evaluate_classification(net, data);
    (void)predict_classes(net, data, 4);
    CHECK(all_values(net.params()) == before);
}

TEST_CASE("divergence is reported with its position")
{
    const auto data = tiny_set(6, 4);
    DfaNetwork<float> net{tiny_model(), 1};
    auto cfg = tiny_train(5);
    cfg.lr = 1e30;
    try {
        (void)train(net, data, cfg);
        FAIL("expected divergence");
    } catch (const DivergenceError& e) {
        CHECK(std::string{e.what()}.find("epoch " + std::to_string(e.epoch())) != std::string::npos);
    }
}

TEST_CASE("dataset checks")
{
    DfaNetwork<float> net{tiny_model(), 1};
    CHECK_THROWS_AS(train(net, Dataset{}, tiny_train(1)), DataError);
    auto unlabeled = tiny_set(2, 5);
    for (auto& c : unlabeled) {
        c.class_label.reset();
    }
    CHECK_THROWS_AS(train(net, unlabeled, tiny_train(1)), DataError);
    CHECK_THROWS_AS(evaluate_classification(net, Dataset{}), DataError);
}

TEST_CASE("checkpoints")
{
    const auto data = tiny_set(3, 6);
    DfaNetwork<float> net{tiny_model(), 3};
    auto cfg = tiny_train(2);
    (void)train(net, data, cfg);

    std::stringstream ss;
    write_checkpoint(ss, make_checkpoint(net, "state"));
    CHECK(ss.str().rfind("dfa-ckpt-1\n", 0) == 0);
    const auto ck = read_checkpoint(ss);
    CHECK(ck.config == net.config());
    CHECK(ck.rng_state == "state");

    DfaNetwork<float> restored{ck.config, 77};
    restore_parameters(restored, ck);
    CHECK(all_values(restored.params()) == all_values(net.params()));
    CHECK(predict_classes(restored, data) == predict_classes(net, data));

    DfaNetwork<double> wide{ck.config, 77};
    restore_parameters(wide, ck);
    CHECK(static_cast<float>(wide.params().get("output.weight").value[0])
          == net.params().get("output.weight").value[0]);

    auto other = tiny_model(3);
    DfaNetwork<float> mismatch{other, 1};
    CHECK_THROWS_AS(restore_parameters(mismatch, ck), ConfigError);

    std::istringstream bad{"dfa-ckpt-9\n"};
    CHECK_THROWS_AS(read_checkpoint(bad), FormatError);
    std::stringstream cut;
    write_checkpoint(cut, make_checkpoint(net));
    std::istringstream truncated{cut.str().substr(0, cut.str().size() / 2)};
    CHECK_THROWS_AS(read_checkpoint(truncated), FormatError);
}

TEST_CASE("epoch reports")
{
    std::ostringstream empty;
    write_epoch_csv(empty, {});
    CHECK(empty.str() == std::string{epoch_csv_header} + "\n");

    std::vector<EpochRecord> e{{0, 0.1, 1.5, 0.25, 0.5, 0.3}, {1, 0.05, 0.9, 0.5, 0.75, 0.6},
                               {2, 0.001, 0.4, 0.75, 1.0, 0.9}};
    std::ostringstream out;
    write_epoch_csv(out, e);
    std::istringstream in{out.str()};
    std::string line;
    std::getline(in, line);
    CHECK(line == epoch_csv_header);
    int rows = 0;
    while (std::getline(in, line)) {
        CHECK(std::stoi(line.substr(0, line.find(','))) == rows);
        ++rows;
    }
    CHECK(rows == 3);
    std::istringstream back{out.str()};
    const auto parsed = read_epoch_csv(back);
    REQUIRE(parsed.size() == 3);
    CHECK(parsed[1].train_loss == 0.9);

    const auto svg = render_svg(e, "loss & <accuracy>");
    CHECK(well_formed_xml(svg));
    CHECK(svg == render_svg(e, "loss & <accuracy>"));
    CHECK(well_formed_xml(render_svg({}, "empty")));
    CHECK_FALSE(well_formed_xml("<svg><g></svg></g>"));

    std::istringstream broken{std::string{epoch_csv_header} + "\n1,2,x,4,5,6\n"};
    CHECK_THROWS_AS(read_epoch_csv(broken), FormatError);
    CHECK_THROWS_AS(write_text_file("/nonexistent-dir/x.svg", svg), Error);
}

TEST_CASE("ablation grids")
{
    const auto grid = AblationGrid::parse("aggregation=max,mean");
    const auto base = tiny_model();
    CHECK(grid.cells(base).size() == 2);
    const auto big = AblationGrid::parse("k=4,8;agg=max,sum,mean;pos=on,off");
    const auto cells = big.cells(base);
    REQUIRE(cells.size() == 12);
    CHECK(cells[0].k == 4);
    CHECK(cells[11].k == 8);
    CHECK(cells[1].use_position_encoding == false);
    CHECK(cells[2].aggregation == Aggregation::sum);
    CHECK_THROWS_AS(AblationGrid::parse("depth=1,2"), ConfigError);
    CHECK_THROWS_AS(AblationGrid::parse("k=4;k=8"), ConfigError);
    CHECK_THROWS_AS(AblationGrid::parse("pos=maybe"), ConfigError);
    CHECK(reference_results(AblationAxis::k).size() == 4);
}

TEST_CASE("ablation runs")
{
    const auto train_data = tiny_set(4, 7);
    const auto test_data = tiny_set(2, 8);
    auto cfg = tiny_train(2);
    const auto base = tiny_model();
    auto csv = [&](const std::string& g) {
        const auto rows = run_ablation<float>(AblationGrid::parse(g), base, cfg, {5}, train_data,
                                              test_data);
        std::ostringstream out;
        write_ablation_csv(out, rows);
        return std::make_pair(rows, out.str());
    };
    const auto [agg_rows, agg_csv] = csv("agg=max,mean");
    CHECK(agg_rows.size() == 2);
    CHECK(agg_csv.rfind(std::string{ablation_csv_header} + "\n", 0) == 0);
    CHECK(strip_last_column(csv("agg=max,mean").second) == strip_last_column(agg_csv));

    // The baseline cell gives the same scores whichever grid it sits in.
    const auto [pos_rows, pos_csv] = csv("pos=on,off");
    CHECK(pos_rows[0].oa == agg_rows[0].oa);
    CHECK(pos_rows[0].macc == agg_rows[0].macc);
}
