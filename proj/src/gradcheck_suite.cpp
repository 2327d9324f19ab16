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

#include "dfa/gradcheck_suite.hpp"

#include "dfa/dfa_layer.hpp"
#include "dfa/model.hpp"

#include <random>

namespace dfa {

namespace {

using D = double;
using Fn = TapeFunction<D>;

auto random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0)
    -> Tensor<D>
{
    Tensor<D> t{std::move(shape)};
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : t.data) {
        v = u(rng);
    }
    return t;
}

// Values with magnitude in [0.1, 1], away from activation kinks.
auto away_from_zero(Shape shape, std::mt19937_64& rng) -> Tensor<D>
{
    auto t = random_tensor(std::move(shape), rng, 0.1, 1.0);
    std::bernoulli_distribution flip(0.5);
    for (auto& v : t.data) {
        v = flip(rng) ? -v : v;
    }
    return t;
}

// Scalar projection with fixed pseudo-random weights, so every output
// element contributes a distinct amount.
auto project(const Var<D>& y) -> Var<D>
{
    std::mt19937_64 rng{4242};
    auto w = random_tensor(y.shape(), rng, -1.0, 1.0);
    return sum(mul(y, y.tape().constant(std::move(w))));
}

class Suite
{
public:
    explicit Suite(std::uint64_t seed) : rng_{seed} {}

    void check(const std::string& name, double tol, const Fn& fn, const Tensor<D>& x,
               Mode mode = Mode::evaluation)
    {
        GradcheckOptions opt;
        opt.mode = mode;
        cases_.push_back({name, tol, finite_difference_check<D>(fn, x, opt), {}});
    }

    void check_params(const std::string& name, const std::function<Var<D>(Tape<D>&)>& loss,
                      ParamSet<D>& params, std::size_t max_coords)
    {
        GradcheckOptions opt;
        opt.mode = Mode::training;
        opt.max_coords = max_coords;
        opt.relative_floor = 1e-3;
        GradcheckCase c{name, composite_tolerance, {}, {}};
        for (const auto& [pname, r] : parameter_gradient_check<D>(loss, params, opt)) {
            if (c.detail.empty() || r.max_rel_error > c.result.max_rel_error) {
                const auto checked = c.result.checked;
                c.result = r;
                c.result.checked = checked;
                c.detail = pname;
            }
            c.result.checked += r.checked;
        }
        cases_.push_back(std::move(c));
    }

    auto rng() -> std::mt19937_64& { return rng_; }
    auto take() -> std::vector<GradcheckCase> { return std::move(cases_); }

private:
    std::mt19937_64 rng_;
    std::vector<GradcheckCase> cases_;
};

void elementwise_cases(Suite& s)
{
    auto& rng = s.rng();
    const auto a = random_tensor({3, 4}, rng);
    const auto b = random_tensor({3, 4}, rng);
    const double tol = elementwise_tolerance;
    s.check("add(a)", tol, [&](Tape<D>& t, const Var<D>& x) { return project(add(x, t.constant(b))); }, a);
    s.check("add(b)", tol, [&](Tape<D>& t, const Var<D>& x) { return project(add(t.constant(a), x)); }, b);
    s.check("sub(a)", tol, [&](Tape<D>& t, const Var<D>& x) { return project(sub(x, t.constant(b))); }, a);
    s.check("sub(b)", tol, [&](Tape<D>& t, const Var<D>& x) { return project(sub(t.constant(a), x)); }, b);
    s.check("mul(a)", tol, [&](Tape<D>& t, const Var<D>& x) { return project(mul(x, t.constant(b))); }, a);
    s.check("mul(b)", tol, [&](Tape<D>& t, const Var<D>& x) { return project(mul(t.constant(a), x)); }, b);
    s.check("scale", tol, [](Tape<D>&, const Var<D>& x) { return project(scale(x, 1.7)); }, a);
    s.check("leaky_relu", tol,
            [](Tape<D>&, const Var<D>& x) { return project(leaky_relu(x, 0.2)); },
            away_from_zero({4, 5}, rng));
    s.check("sum", tol, [](Tape<D>&, const Var<D>& x) { return sum(x); }, a);
}

void op_cases(Suite& s)
{
    auto& rng = s.rng();
    const double tol = composite_tolerance;

    const auto x = random_tensor({2, 3, 4}, rng);
    const auto w = random_tensor({4, 5}, rng);
    const auto bias = random_tensor({5}, rng);
    s.check("linear(x)", tol, [&](Tape<D>& t, const Var<D>& v) {
        return project(linear(v, t.constant(w), t.constant(bias)));
    }, x);
    s.check("linear(weight)", tol, [&](Tape<D>& t, const Var<D>& v) {
        return project(linear(t.constant(x), v, t.constant(bias)));
    }, w);
    s.check("linear(bias)", tol, [&](Tape<D>& t, const Var<D>& v) {
        return project(linear(t.constant(x), t.constant(w), v));
    }, bias);

    const auto bx = random_tensor({6, 4}, rng);
    const auto gamma = random_tensor({4}, rng, 0.5, 1.5);
    const auto beta = random_tensor({4}, rng);
    const auto rmean = random_tensor({4}, rng);
    const auto rvar = random_tensor({4}, rng, 0.5, 2.0);
    auto bn = [&](const Var<D>& in, const Var<D>& g, const Var<D>& b) {
        Parameter<D> m{"m", rmean, {}, {}, false};
        Parameter<D> v{"v", rvar, {}, {}, false};
        return project(batch_norm(in, g, b, BatchNormStats<D>{&m, &v}));
    };
    s.check("batch_norm.train(x)", tol, [&](Tape<D>& t, const Var<D>& v) {
        return bn(v, t.constant(gamma), t.constant(beta));
    }, bx, Mode::training);
    s.check("batch_norm.train(gamma)", tol, [&](Tape<D>& t, const Var<D>& v) {
        return bn(t.constant(bx), v, t.constant(beta));
    }, gamma, Mode::training);
    s.check("batch_norm.train(beta)", tol, [&](Tape<D>& t, const Var<D>& v) {
        return bn(t.constant(bx), t.constant(gamma), v);
    }, beta, Mode::training);
    s.check("batch_norm.eval(x)", tol, [&](Tape<D>& t, const Var<D>& v) {
        return bn(v, t.constant(gamma), t.constant(beta));
    }, bx, Mode::evaluation);

    const auto r = random_tensor({2, 5, 3}, rng);
    for (std::size_t axis = 0; axis < 3; ++axis) {
        const auto suffix = "(axis " + std::to_string(axis) + ")";
        s.check("reduce_max" + suffix, tol,
                [axis](Tape<D>&, const Var<D>& v) { return project(reduce_max(v, axis)); }, r);
        s.check("reduce_sum" + suffix, tol,
                [axis](Tape<D>&, const Var<D>& v) { return project(reduce_sum(v, axis)); }, r);
        s.check("reduce_mean" + suffix, tol,
                [axis](Tape<D>&, const Var<D>& v) { return project(reduce_mean(v, axis)); }, r);
        s.check("softmax" + suffix, tol,
                [axis](Tape<D>&, const Var<D>& v) { return project(softmax(v, axis)); }, r);
    }
    s.check("dropout.train", tol,
            [](Tape<D>&, const Var<D>& v) { return project(dropout(v, 0.3)); },
            random_tensor({4, 6}, rng), Mode::training);

    const std::vector<int> labels{0, 3, 1, 1, 2};
    s.check("cross_entropy", tol, [&](Tape<D>&, const Var<D>& v) {
        return cross_entropy(v, std::span<const int>{labels});
    }, random_tensor({5, 4}, rng, -2.0, 2.0));

    s.check("reshape", tol,
            [](Tape<D>&, const Var<D>& v) { return project(reshape(v, Shape{3, 4})); },
            random_tensor({2, 6}, rng));
    const std::vector<std::size_t> rows{4, 0, 0, 2, 3, 1, 4};
    s.check("gather_rows", tol, [&](Tape<D>&, const Var<D>& v) {
        return project(gather_rows(v, std::span<const std::size_t>{rows}, Shape{7, 3}));
    }, random_tensor({5, 3}, rng));
    const auto other = random_tensor({2, 3, 4}, rng);
    s.check("concat_last(first)", tol, [&](Tape<D>& t, const Var<D>& v) {
        return project(concat_last<D>({v, t.constant(other)}));
    }, random_tensor({2, 3, 2}, rng));
    s.check("concat_last(second)", tol, [&](Tape<D>& t, const Var<D>& v) {
        return project(concat_last<D>({t.constant(other), v, t.constant(other)}));
    }, random_tensor({2, 3, 2}, rng));
    s.check("slice_last", tol,
            [](Tape<D>&, const Var<D>& v) { return project(slice_last(v, 1, 4)); },
            random_tensor({2, 3, 5}, rng));
    s.check("broadcast_rows", tol,
            [](Tape<D>&, const Var<D>& v) { return project(broadcast_rows(v, 4)); },
            random_tensor({2, 3}, rng));
    s.check("norm_last", tol, [](Tape<D>&, const Var<D>& v) { return project(norm_last(v)); },
            away_from_zero({3, 4, 3}, rng));

    const auto mx = random_tensor({2, 3, 4}, rng);
    const auto mw = random_tensor({2, 3, 1}, rng);
    s.check("mul_broadcast_last(x)", tol, [&](Tape<D>& t, const Var<D>& v) {
        return project(mul_broadcast_last(v, t.constant(mw)));
    }, mx);
    s.check("mul_broadcast_last(w)", tol, [&](Tape<D>& t, const Var<D>& v) {
        return project(mul_broadcast_last(t.constant(mx), v));
    }, mw);

    const auto bm_x = random_tensor({2, 4, 3}, rng);
    const auto bm_m = random_tensor({2, 3, 3}, rng);
    s.check("batched_matmul(x)", tol, [&](Tape<D>& t, const Var<D>& v) {
        return project(batched_matmul(v, t.constant(bm_m)));
    }, bm_x);
    s.check("batched_matmul(m)", tol, [&](Tape<D>& t, const Var<D>& v) {
        return project(batched_matmul(t.constant(bm_x), v));
    }, bm_m);
}

void dfa_cases(Suite& s, std::size_t max_coords)
{
    auto& rng = s.rng();
    const double tol = composite_tolerance;
    const std::size_t b = 2;
    const std::size_t n = 8;
    const std::size_t k = 4;
    const auto feats = random_tensor({b, n, 4}, rng);
    const auto coords = random_tensor({b, n, 3}, rng);
    const auto graphs = build_graphs(feats, k);

    s.check("gather_neighbors", tol, [&](Tape<D>&, const Var<D>& v) {
        return project(gather_neighbors(v, graphs));
    }, feats);
    s.check("semantic_feature_encode", tol, [&](Tape<D>&, const Var<D>& v) {
        return project(semantic_feature_encode(v, graphs));
    }, feats);
    s.check("relative_position_raw", tol, [&](Tape<D>&, const Var<D>& v) {
        return project(relative_position_raw(v, graphs));
    }, away_from_zero({b, n, 3}, rng));

    const auto edges = random_tensor({b, n, k, 6}, rng);
    const auto scorer = random_tensor({6, 1}, rng);
    for (auto kind : {Aggregation::max, Aggregation::sum, Aggregation::mean, Aggregation::attention}) {
        s.check("aggregate." + to_string(kind) + "(edges)", tol, [&, kind](Tape<D>& t, const Var<D>& v) {
            auto sc = t.constant(scorer);
            return project(aggregate(v, kind, &sc));
        }, edges);
    }
    s.check("aggregate.attn(scorer)", tol, [&](Tape<D>& t, const Var<D>& v) {
        return project(aggregate(t.constant(edges), Aggregation::attention, &v));
    }, scorer);

    // Whole layer: kNN in feature space, both edge encodings, edge MLP,
    // aggregation. Gradients flow to features and coordinates.
    struct Variant
    {
        std::string name;
        Aggregation agg;
        GraphDomain domain;
        bool pos;
    };
    const std::vector<Variant> variants{
        {"max", Aggregation::max, GraphDomain::feature, true},
        {"sum", Aggregation::sum, GraphDomain::feature, true},
        {"mean", Aggregation::mean, GraphDomain::feature, true},
        {"attn", Aggregation::attention, GraphDomain::feature, true},
        {"spatial", Aggregation::max, GraphDomain::spatial, true},
        {"no-pos", Aggregation::max, GraphDomain::feature, false},
    };
    for (const auto& var : variants) {
        ParamSet<D> params;
        std::mt19937_64 init{rng()};
        DfaConfig cfg{.d_in = 4, .d_out = 6, .k = k, .pos_dim = 5, .aggregation = var.agg,
                      .use_position_encoding = var.pos, .graph_domain = var.domain};
        DfaLayer<D> layer{params, "dfa", cfg, init};
        const auto name = "dfa_layer." + var.name;
        s.check(name + "(features)", tol, [&](Tape<D>& t, const Var<D>& v) {
            return project(layer.forward(t, v, t.constant(coords)));
        }, feats, Mode::training);
        if (var.pos && var.domain == GraphDomain::feature) {
            s.check(name + "(coords)", tol, [&](Tape<D>& t, const Var<D>& v) {
                return project(layer.forward(t, t.constant(feats), v));
            }, coords, Mode::training);
        }
        s.check_params(name + "(params)", [&](Tape<D>& t) {
            return project(layer.forward(t, t.constant(feats), t.constant(coords)));
        }, params, 0);
    }

    // Small complete networks, all trainable parameters.
    {
        auto cfg = ModelConfig::classification();
        cfg.num_classes = 4;
        cfg.k = 4;
        cfg.width_scale = 1.0 / 16;
        DfaNetwork<D> net{cfg, rng()};
        const auto pts = random_tensor({3, 16, 3}, rng);
        const std::vector<int> y{0, 2, 3};
        s.check_params("network.cls(params)", [&](Tape<D>& t) {
            return cross_entropy(net.classify(t, t.constant(pts)), std::span<const int>{y});
        }, net.params(), max_coords);
    }
    {
        auto cfg = ModelConfig::part_segmentation();
        cfg.num_categories = 2;
        cfg.num_parts = 4;
        cfg.k = 4;
        cfg.width_scale = 1.0 / 16;
        DfaNetwork<D> net{cfg, rng()};
        const auto pts = random_tensor({3, 12, 3}, rng);
        Tensor<D> onehot{Shape{3, 2}, {1, 0, 0, 1, 1, 0}};
        std::vector<int> y(3 * 12);
        for (std::size_t i = 0; i < y.size(); ++i) {
            y[i] = static_cast<int>(i % 4);
        }
        s.check_params("network.partseg(params)", [&](Tape<D>& t) {
            auto logits = net.segment(t, t.constant(pts), t.constant(onehot));
            return cross_entropy(reshape(logits, Shape{36, 4}), std::span<const int>{y});
        }, net.params(), max_coords);
    }
}

} // namespace

auto run_gradcheck_suite(std::uint64_t seed, std::size_t max_coords) -> std::vector<GradcheckCase>
{
    Suite s{seed};
    elementwise_cases(s);
    op_cases(s);
    dfa_cases(s, max_coords);
    return s.take();
}

} // namespace dfa
