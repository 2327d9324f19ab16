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

// Command-line front end. Exit codes: 0 success, 1 usage or configuration
// error, 2 data or format error, 3 numeric divergence (or a failed
// gradient check).

#include "dfa/ablation.hpp"
#include "dfa/checkpoint.hpp"
#include "dfa/gradcheck_suite.hpp"
#include "dfa/report.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

using json = nlohmann::ordered_json;

namespace {

enum Exit : int { ok = 0, usage = 1, data_error = 2, divergence = 3 };

struct ModelFlags
{
    std::string task = "cls";
    std::optional<std::size_t> points;
    std::optional<std::size_t> k;
    std::optional<std::string> agg;
    std::optional<std::string> domain;
    bool no_pos = false;
    bool no_global = false;
    std::optional<double> width_scale;
    std::optional<std::size_t> classes;
    std::optional<std::size_t> parts;
    std::optional<std::size_t> categories;
    std::optional<double> dropout;

    void add(CLI::App& app)
    {
        app.add_option("--task", task, "cls | partseg | semseg")
            ->check(CLI::IsMember({"cls", "partseg", "semseg"}));
        app.add_option("--points", points, "Points per cloud (random subset if the data has more)");
        app.add_option("--k", k, "Neighbours per point");
        app.add_option("--agg", agg, "max | sum | mean | attn")
            ->check(CLI::IsMember({"max", "sum", "mean", "attn", "attention"}));
        app.add_option("--domain", domain, "feature | spatial")
            ->check(CLI::IsMember({"feature", "spatial"}));
        app.add_flag("--no-pos-enc", no_pos, "Disable relative position encoding");
        app.add_flag("--no-global", no_global, "Disable the low-dimensional global branch");
        app.add_option("--width-scale", width_scale, "Multiplier on every layer width")
            ->check(CLI::PositiveNumber);
        app.add_option("--classes", classes, "Number of classes (default: from the labels)");
        app.add_option("--parts", parts, "Number of part labels (default: from the labels)");
        app.add_option("--categories", categories,
                       "Number of shape categories (default: from the class labels)");
        app.add_option("--dropout", dropout, "Dropout probability in the head");
    }
};

struct TrainFlags
{
    double lr = 0.1;
    double momentum = 0.9;
    std::size_t epochs = 200;
    std::optional<std::size_t> batch;
    std::uint64_t seed = 1;
    int precision = 32;
    double val_fraction = 0.1;
    std::string schedule = "cosine";
    bool no_augment = false;

    void add(CLI::App& app)
    {
        app.add_option("--lr", lr, "Initial learning rate")->capture_default_str();
        app.add_option("--momentum", momentum, "SGD momentum")->capture_default_str();
        app.add_option("--epochs", epochs, "Epoch budget")->capture_default_str();
        app.add_option("--batch", batch, "Batch size (default 32, 16 for segmentation)");
        app.add_option("--seed", seed, "Seed for initialisation, shuffling and augmentation")
            ->capture_default_str();
        app.add_option("--precision", precision, "Floating-point width")
            ->check(CLI::IsMember({32, 64}))
            ->capture_default_str();
        app.add_option("--val-fraction", val_fraction, "Held-out share for checkpoint selection")
            ->capture_default_str();
        app.add_option("--schedule", schedule, "cosine | constant")->capture_default_str();
        app.add_flag("--no-augment", no_augment, "Train on the clouds as stored");
    }

    [[nodiscard]] auto config(dfa::Task task) const -> dfa::TrainConfig
    {
        auto c = dfa::TrainConfig::for_task(task);
        c.lr = lr;
        c.momentum = momentum;
        c.epochs = epochs;
        if (batch) {
            c.batch_size = *batch;
        }
        c.seed = seed;
        c.val_fraction = val_fraction;
        c.schedule = dfa::parse_schedule(schedule);
        c.augment = !no_augment;
        c.validate();
        return c;
    }
};

auto max_label(const dfa::Dataset& data, bool parts) -> int
{
    int m = -1;
    for (const auto& c : data) {
        if (parts) {
            for (int l : c.part_labels) {
                m = std::max(m, l);
            }
        } else if (c.class_label) {
            m = std::max(m, *c.class_label);
        }
    }
    return m;
}

auto build_model_config(const ModelFlags& f, const dfa::Dataset& data) -> dfa::ModelConfig
{
    if (data.empty()) {
        throw dfa::DataError("dataset is empty");
    }
    const auto task = dfa::parse_task(f.task);
    auto c = task == dfa::Task::classification        ? dfa::ModelConfig::classification()
             : task == dfa::Task::part_segmentation   ? dfa::ModelConfig::part_segmentation()
                                                      : dfa::ModelConfig::semantic_segmentation();
    c.num_points = f.points.value_or(data.front().size());
    c.input_dim = data.front().dims();
    if (f.k) {
        c.k = *f.k;
    }
    if (f.agg) {
        c.aggregation = dfa::parse_aggregation(*f.agg);
    }
    if (f.domain) {
        c.graph_domain = dfa::parse_graph_domain(*f.domain);
    }
    c.use_position_encoding = !f.no_pos;
    c.use_low_dim_global = !f.no_global;
    if (f.width_scale) {
        c.width_scale = *f.width_scale;
    }
    if (f.dropout) {
        c.dropout = *f.dropout;
    }
    if (task == dfa::Task::classification) {
        c.num_classes = f.classes.value_or(static_cast<std::size_t>(max_label(data, false) + 1));
    } else {
        c.num_parts = f.parts.value_or(static_cast<std::size_t>(max_label(data, true) + 1));
        if (task == dfa::Task::part_segmentation) {
            c.num_categories = f.categories.value_or(
                static_cast<std::size_t>(std::max(0, max_label(data, false)) + 1));
        }
    }
    c.validate();
    return c;
}

// Applies --points by random subsetting, seeded for reproducibility.
auto fit_points(dfa::Dataset data, std::size_t n, std::uint64_t seed) -> dfa::Dataset
{
    std::mt19937_64 rng{seed ^ 0x5eedull};
    for (auto& c : data) {
        if (c.size() != n) {
            c = dfa::select_points(c, n, rng);
        }
    }
    return data;
}

auto metrics_json(const dfa::ClassificationMetrics& m) -> json
{
    json j{{"oa", m.oa}, {"macc", m.macc}, {"count", m.total}};
    json per = json::array();
    for (const auto& v : m.per_class) {
        per.push_back(v ? json(*v) : json(nullptr));
    }
    j["per_class_accuracy"] = per;
    return j;
}

auto metrics_json(const dfa::SegmentationMetrics& m) -> json
{
    json j{{"miou", m.miou}, {"point_accuracy", m.accuracy}, {"count", m.per_instance.size()}};
    json per = json::array();
    for (const auto& v : m.per_category) {
        per.push_back(v ? json(*v) : json(nullptr));
    }
    j["per_category_miou"] = per;
    return j;
}

template <typename T>
auto evaluate_json(const dfa::DfaNetwork<T>& model, const dfa::Dataset& data, std::size_t batch)
    -> json
{
    switch (model.config().task) {
    case dfa::Task::classification:
        return metrics_json(dfa::evaluate_classification(model, data, batch));
    case dfa::Task::part_segmentation:
        return metrics_json(dfa::evaluate_part_segmentation(model, data, batch));
    case dfa::Task::semantic_segmentation:
        return json{{"point_accuracy", dfa::evaluate_headline(model, data, batch)}};
    }
    return {};
}

struct TrainArgs
{
    ModelFlags model;
    TrainFlags train;
    std::string data;
    std::string test;
    std::string ckpt;
    std::string out;
    bool verbose = false;
};

template <typename T>
auto run_train(const TrainArgs& a) -> int
{
    auto data = dfa::read_pcb(a.data);
    const auto mcfg = build_model_config(a.model, data);
    data = fit_points(std::move(data), mcfg.num_points, a.train.seed);
    auto tcfg = a.train.config(mcfg.task);
    tcfg.checkpoint_path = a.ckpt;

    dfa::DfaNetwork<T> model{mcfg, a.train.seed};
    std::ofstream csv;
    if (!a.out.empty()) {
        csv.open(a.out, std::ios::binary);
        if (!csv) {
            throw dfa::Error("cannot write '" + a.out + "'");
        }
        csv << dfa::epoch_csv_header << '\n';
    }
    auto on_epoch = [&](const dfa::EpochRecord& e) {
        if (csv.is_open()) {
            std::ostringstream row;
            dfa::write_epoch_csv(row, {e});
            const auto text = row.str();
            csv << text.substr(text.find('\n') + 1) << std::flush;
        }
        if (a.verbose) {
            std::fprintf(stderr, "epoch %zu lr %.5g loss %.5f train_acc %.4f val %.4f (%.1fs)\n",
                         e.epoch, e.lr, e.train_loss, e.train_acc, e.val_metric, e.wall_clock_s);
        }
    };
    const auto report = dfa::train(model, data, tcfg, on_epoch);

    json summary{{"task", dfa::to_string(mcfg.task)},
                 {"fingerprint", report.fingerprint},
                 {"parameters", dfa::count_parameters(mcfg)},
                 {"epochs", report.epochs.size()},
                 {"train_clouds", report.train_clouds},
                 {"val_clouds", report.val_clouds},
                 {"best_epoch", report.best_epoch},
                 {"best_val_metric", report.best_val_metric},
                 {"final_train_loss",
                  report.epochs.empty() ? 0.0 : report.epochs.back().train_loss},
                 {"wall_clock_s", report.wall_clock_s}};
    summary["train"] = evaluate_json(model, data, tcfg.batch_size);
    if (!a.test.empty()) {
        const auto test = fit_points(dfa::read_pcb(a.test), mcfg.num_points, a.train.seed + 1);
        summary["test"] = evaluate_json(model, test, tcfg.batch_size);
    }
    std::cout << summary.dump(2) << '\n';
    return ok;
}

struct EvalArgs
{
    std::string data;
    std::string ckpt;
    std::optional<std::size_t> batch;
    std::optional<int> precision;
    std::string out;
};

template <typename T>
auto run_eval(const EvalArgs& a, const dfa::Checkpoint& ckpt) -> int
{
    dfa::DfaNetwork<T> model{ckpt.config, 0};
    dfa::restore_parameters(model, ckpt);
    const auto& cfg = model.config();
    const auto data = fit_points(dfa::read_pcb(a.data), cfg.num_points, 0);
    const std::size_t batch = a.batch.value_or(cfg.task == dfa::Task::classification ? 32 : 16);
    json j{{"task", dfa::to_string(cfg.task)}, {"metrics", evaluate_json(model, data, batch)}};
    if (!a.out.empty()) {
        dfa::write_text_file(a.out, j.dump(2) + "\n");
    }
    std::cout << j.dump(2) << '\n';
    return ok;
}

struct AblateArgs
{
    ModelFlags model;
    TrainFlags train;
    std::string grid;
    std::string seeds = "1,2,3";
    std::string data;
    std::string test;
    std::string out;
    bool verbose = false;
};

auto parse_seeds(const std::string& text) -> std::vector<std::uint64_t>
{
    std::vector<std::uint64_t> seeds;
    std::stringstream ss{text};
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            seeds.push_back(std::stoull(item, &used));
            if (used != item.size()) {
                throw std::invalid_argument(item);
            }
        } catch (const std::exception&) {
            throw dfa::ConfigError("bad seed '" + item + "'");
        }
    }
    if (seeds.empty()) {
        throw dfa::ConfigError("no seeds given");
    }
    return seeds;
}

template <typename T>
auto run_ablate(const AblateArgs& a) -> int
{
    const auto grid = dfa::AblationGrid::parse(a.grid);
    const auto seeds = parse_seeds(a.seeds);
    auto train_data = dfa::read_pcb(a.data);
    const auto base = build_model_config(a.model, train_data);
    train_data = fit_points(std::move(train_data), base.num_points, 0);
    const auto test_data = fit_points(dfa::read_pcb(a.test), base.num_points, 1);
    const auto tcfg = a.train.config(base.task);

    std::ofstream csv;
    if (!a.out.empty()) {
        csv.open(a.out, std::ios::binary);
        if (!csv) {
            throw dfa::Error("cannot write '" + a.out + "'");
        }
    }
    std::ostream& out = csv.is_open() ? static_cast<std::ostream&>(csv) : std::cout;
    out << dfa::ablation_csv_header << '\n' << std::flush;
    auto on_row = [&](const dfa::AblationRow& r) {
        std::ostringstream row;
        dfa::write_ablation_csv(row, {r});
        const auto text = row.str();
        out << text.substr(text.find('\n') + 1) << std::flush;
        if (a.verbose) {
            std::fprintf(stderr, "cell done: seed %llu (%.1fs)\n",
                         static_cast<unsigned long long>(r.seed), r.wall_clock_s);
        }
    };
    dfa::run_ablation<T>(grid, base, tcfg, seeds, train_data, test_data, on_row);

    if (!a.out.empty()) {
        json meta{{"grid", a.grid},
                  {"seeds", seeds},
                  {"base_config", base.to_text()},
                  {"train_config", tcfg.to_text()}};
        json refs = json::object();
        for (const auto& [axis, values] : grid.axes) {
            json rows = json::array();
            for (const auto& r : dfa::reference_results(axis)) {
                rows.push_back({{"setting", r.setting}, {"macc", r.macc}, {"oa", r.oa}});
            }
            refs[dfa::to_string(axis)] = rows;
        }
        meta["full_scale_reference"] = refs;
        dfa::write_text_file(a.out + ".meta.json", meta.dump(2) + "\n");
    }
    return ok;
}

auto run_gradcheck(std::uint64_t seed, std::size_t max_coords, const std::string& out) -> int
{
    const auto cases = dfa::run_gradcheck_suite(seed, max_coords);
    std::ostringstream csv;
    csv << "check,tolerance,max_rel_error,analytic,numeric,coords,passed\n";
    bool all = true;
    for (const auto& c : cases) {
        all = all && c.passed();
        std::printf("%-32s %-4s max rel err %.3e (tol %.0e, %zu coords)%s%s\n", c.name.c_str(),
                    c.passed() ? "ok" : "FAIL", c.result.max_rel_error, c.tolerance,
                    c.result.checked, c.detail.empty() ? "" : " worst: ", c.detail.c_str());
        csv << c.name << ',' << dfa::format_real(c.tolerance) << ','
            << dfa::format_real(c.result.max_rel_error) << ',' << dfa::format_real(c.result.analytic)
            << ',' << dfa::format_real(c.result.numeric) << ',' << c.result.checked << ','
            << (c.passed() ? 1 : 0) << '\n';
    }
    if (!out.empty()) {
        dfa::write_text_file(out, csv.str());
    }
    return all ? ok : divergence;
}

} // namespace

auto main(int argc, char** argv) -> int
{
    CLI::App app{"Point-cloud networks with dynamic feature aggregation"};
    app.require_subcommand(1);

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "Train a model on a PCB dataset");
    train_args.model.add(*train);
    train_args.train.add(*train);
    train->add_option("--data", train_args.data, "Training PCB file")->required();
    train->add_option("--test", train_args.test, "Optional PCB file scored after training");
    train->add_option("--ckpt", train_args.ckpt, "Checkpoint written at the best validation score");
    train->add_option("--out", train_args.out, "Per-epoch metrics CSV");
    train->add_flag("-v,--verbose", train_args.verbose, "Print one line per epoch");

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "Score a checkpoint on a PCB dataset");
    eval->add_option("--data", eval_args.data, "PCB file")->required();
    eval->add_option("--ckpt", eval_args.ckpt, "Checkpoint")->required();
    eval->add_option("--batch", eval_args.batch, "Evaluation batch size");
    eval->add_option("--precision", eval_args.precision,
                     "Floating-point width (default: as stored)")
        ->check(CLI::IsMember({32, 64}));
    eval->add_option("--out", eval_args.out, "Write the metrics JSON here as well");

    AblateArgs ablate_args;
    auto* ablate = app.add_subcommand("ablate", "Train and score every cell of an ablation grid");
    ablate_args.model.add(*ablate);
    ablate_args.train.add(*ablate);
    ablate->add_option("--grid", ablate_args.grid,
                       "Axes and values, e.g. \"agg=max,mean;pos=on,off\"")
        ->required();
    ablate->add_option("--seeds", ablate_args.seeds, "Comma-separated seeds")->capture_default_str();
    ablate->add_option("--data", ablate_args.data, "Training PCB file")->required();
    ablate->add_option("--test", ablate_args.test, "Test PCB file")->required();
    ablate->add_option("--out", ablate_args.out, "CSV path (default: stdout)");
    ablate->add_flag("-v,--verbose", ablate_args.verbose, "Report each finished cell");

    std::uint64_t gc_seed = 7;
    std::size_t gc_coords = 24;
    std::string gc_out;
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks (64-bit)");
    gradcheck->add_option("--seed", gc_seed, "Seed for the random inputs")->capture_default_str();
    gradcheck->add_option("--max-coords", gc_coords,
                          "Coordinates probed per parameter tensor in whole-network checks "
                          "(0 = all)")
        ->capture_default_str();
    gradcheck->add_option("--out", gc_out, "CSV of the results");

    dfa::SyntheticSpec synth_spec;
    std::string synth_spec_path;
    std::string synth_classes;
    std::string synth_out;
    auto* synth = app.add_subcommand("synth", "Generate a labelled synthetic shape set");
    synth->add_option("--spec", synth_spec_path, "key=value spec file (flags override it)");
    synth->add_option("--shapes", synth_classes,
                      "Comma-separated shapes from sphere,cube,torus,plane,lollipop");
    synth->add_option("--per-class", synth_spec.per_class, "Clouds per shape");
    synth->add_option("--points", synth_spec.points, "Points per cloud");
    synth->add_option("--noise", synth_spec.noise, "Surface noise sigma");
    synth->add_option("--seed", synth_spec.seed, "Generator seed");
    synth->add_option("--out", synth_out, "PCB output")->required();

    std::vector<std::string> off_paths;
    std::size_t off_points = 1024;
    std::uint64_t off_seed = 1;
    std::optional<int> off_label;
    std::string off_out;
    auto* sample = app.add_subcommand("sample-off", "Sample point clouds from OFF meshes");
    sample->add_option("--data", off_paths, "OFF file(s)")->required();
    sample->add_option("--points", off_points, "Points per cloud")->capture_default_str();
    sample->add_option("--seed", off_seed, "Sampling seed")->capture_default_str();
    sample->add_option("--label", off_label, "Class label stored with every cloud");
    sample->add_option("--out", off_out, "PCB output")->required();

    std::string report_in;
    std::string report_out;
    std::string report_title = "training curves";
    auto* report = app.add_subcommand("report", "Render a per-epoch metrics CSV as SVG");
    report->add_option("--data", report_in, "Per-epoch CSV written by train")->required();
    report->add_option("--out", report_out, "SVG output")->required();
    report->add_option("--title", report_title, "Chart title");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? ok : usage;
    }

    try {
        if (train->parsed()) {
            return train_args.train.precision == 64 ? run_train<double>(train_args)
                                                    : run_train<float>(train_args);
        }
        if (eval->parsed()) {
            const auto ckpt = dfa::load_checkpoint(eval_args.ckpt);
            const bool stored_double = !ckpt.tensors.empty() && ckpt.tensors.front().is_double;
            const int bits = eval_args.precision.value_or(stored_double ? 64 : 32);
            return bits == 64 ? run_eval<double>(eval_args, ckpt) : run_eval<float>(eval_args, ckpt);
        }
        if (ablate->parsed()) {
            return ablate_args.train.precision == 64 ? run_ablate<double>(ablate_args)
                                                     : run_ablate<float>(ablate_args);
        }
        if (gradcheck->parsed()) {
            return run_gradcheck(gc_seed, gc_coords, gc_out);
        }
        if (synth->parsed()) {
            auto spec = synth_spec;
            if (!synth_spec_path.empty()) {
                spec = dfa::SyntheticSpec::parse(dfa::read_text_file(synth_spec_path));
                // Explicit flags win over the file.
                if (synth->count("--per-class")) {
                    spec.per_class = synth_spec.per_class;
                }
                if (synth->count("--points")) {
                    spec.points = synth_spec.points;
                }
                if (synth->count("--noise")) {
                    spec.noise = synth_spec.noise;
                }
                if (synth->count("--seed")) {
                    spec.seed = synth_spec.seed;
                }
            }
            if (!synth_classes.empty()) {
                spec.classes = dfa::SyntheticSpec::parse("classes=" + synth_classes).classes;
            }
            spec.validate();
            const auto set = dfa::generate_synthetic_set(spec);
            dfa::write_pcb(synth_out, set);
            std::printf("wrote %zu clouds of %zu points to %s\n", set.size(), spec.points,
                        synth_out.c_str());
            return ok;
        }
        if (sample->parsed()) {
            std::mt19937_64 rng{off_seed};
            dfa::Dataset set;
            for (const auto& p : off_paths) {
                auto cloud = dfa::sample_surface_uniform(dfa::read_off(p), off_points, rng);
                cloud.class_label = off_label;
                set.push_back(std::move(cloud));
            }
            dfa::write_pcb(off_out, set);
            std::printf("wrote %zu clouds to %s\n", set.size(), off_out.c_str());
            return ok;
        }
        if (report->parsed()) {
            std::istringstream in{dfa::read_text_file(report_in)};
            const auto epochs = dfa::read_epoch_csv(in);
            dfa::write_text_file(report_out, dfa::render_svg(epochs, report_title));
            return ok;
        }
    } catch (const dfa::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return usage;
    } catch (const dfa::NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return divergence;
    } catch (const dfa::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return data_error;
    }
    return usage;
}
