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

#include "dfa/dfa_layer.hpp"
#include "dfa/gradcheck.hpp"

#include "support.hpp"

#include "doctest.h"

#include <cmath>

using namespace dfa;
using dfa::test::uniform;
using D = double;

namespace {

auto leaky(double v) -> double
{
    return v > 0 ? v : 0.2 * v;
}

// linear -> evaluation batch norm with fresh running statistics -> leaky.
auto mlp_oracle(const ParamSet<D>& params, const std::string& name, const std::vector<double>& in)
    -> std::vector<double>
{
    const auto& w = params.get(name + ".weight").value;
    const auto& b = params.get(name + ".bias").value;
    const auto& gamma = params.get(name + ".bn.gamma").value;
    const auto& beta = params.get(name + ".bn.beta").value;
    const auto& mean = params.get(name + ".bn.running_mean").value;
    const auto& var = params.get(name + ".bn.running_var").value;
    const std::size_t out = w.dim(1);
    std::vector<double> y(out);
    for (std::size_t j = 0; j < out; ++j) {
        double acc = b[j];
        for (std::size_t i = 0; i < in.size(); ++i) {
            acc += in[i] * w[i * out + j];
        }
        y[j] = leaky((acc - mean[j]) / std::sqrt(var[j] + 1e-5) * gamma[j] + beta[j]);
    }
    return y;
}

auto make_layer(ParamSet<D>& params, DfaConfig cfg, std::uint64_t seed = 1) -> DfaLayer<D>
{
    std::mt19937_64 rng{seed};
    return DfaLayer<D>{params, "dfa", cfg, rng};
}

} // namespace

TEST_CASE("semantic encoding")
{
    Tape<D> t;
    const Tensor<D> f{{1, 2, 2}, {1, 2, 3, 5}};
    const auto graphs = build_graphs(f, 2);
    auto out = semantic_feature_encode(t.constant(f), graphs);
    CHECK(out.shape() == Shape{1, 2, 2, 4});
    // Row 0: self slot, then neighbour 1.
    CHECK(std::vector<D>(out.value().data.begin(), out.value().data.begin() + 8)
          == std::vector<D>{1, 2, 0, 0, 1, 2, -2, -3});

    std::mt19937_64 rng{1};
    const auto r = uniform({1, 16, 4}, rng);
    const auto g = build_graphs(r, 5);
    auto enc = semantic_feature_encode(t.constant(r), g);
    for (std::size_t i = 0; i < 16; ++i) {
        for (std::size_t m = 0; m < 5; ++m) {
            const std::size_t j = g[0].row(i)[m];
            for (std::size_t c = 0; c < 4; ++c) {
                CHECK(enc.value()[((i * 5 + m) * 8) + c] == r[i * 4 + c]);
                CHECK(enc.value()[((i * 5 + m) * 8) + 4 + c] == r[i * 4 + c] - r[j * 4 + c]);
            }
        }
    }
    CHECK_THROWS(semantic_feature_encode(t.constant(uniform({1, 15, 4}, rng)), g));
}

TEST_CASE("relative position vectors")
{
    Tape<D> t;
    const Tensor<D> x{{1, 2, 3}, {0, 0, 0, 1, 0, 0}};
    auto raw = relative_position_raw(t.constant(x), build_graphs(x, 2));
    CHECK(raw.shape() == Shape{1, 2, 2, 10});
    CHECK(std::vector<D>(raw.value().data.begin(), raw.value().data.begin() + 20)
          == std::vector<D>{0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, -1, 0, 0, 1});

    std::mt19937_64 rng{2};
    const auto p = uniform({2, 10, 3}, rng);
    const auto g = build_graphs(p, 4);
    auto table = relative_position_raw(t.constant(p), g);
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t i = 0; i < 10; ++i) {
            for (std::size_t m = 0; m < 4; ++m) {
                const std::size_t j = g[b].row(i)[m];
                const double* xi = &p.data[(b * 10 + i) * 3];
                const double* xj = &p.data[(b * 10 + j) * 3];
                const double* row = &table.value().data[(((b * 10 + i) * 4) + m) * 10];
                double norm = 0.0;
                for (std::size_t c = 0; c < 3; ++c) {
                    CHECK(row[c] == xi[c]);
                    CHECK(row[3 + c] == xj[c]);
                    CHECK(row[6 + c] == xi[c] - xj[c]);
                    norm += (xi[c] - xj[c]) * (xi[c] - xj[c]);
                }
                CHECK(row[9] == doctest::Approx(std::sqrt(norm)).epsilon(1e-15));
            }
        }
    }
    CHECK_THROWS(relative_position_raw(t.constant(uniform({2, 10, 2}, rng)), g));
}

TEST_CASE("position MLP gradients")
{
    ParamSet<D> params;
    const DfaConfig cfg{.d_in = 4, .d_out = 6, .k = 3, .pos_dim = 5};
    auto layer = make_layer(params, cfg);
    std::mt19937_64 rng{3};
    const auto x = uniform({2, 7, 3}, rng);
    const auto g = build_graphs(x, 3);
    const auto w = uniform({2, 7, 3, 5}, rng);
    GradcheckOptions opt;
    opt.mode = Mode::training;
    const auto r = finite_difference_check<D>([&](Tape<D>& t, const Var<D>& v) {
        return sum(mul(layer.position_encode(t, v, g), t.constant(w)));
    }, x, opt);
    CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("edge MLP input widths")
{
    CHECK(DfaConfig{.d_in = 64, .d_out = 64, .pos_dim = 64}.edge_input_dim() == 192);
    CHECK(DfaConfig{.d_in = 64, .d_out = 64, .pos_dim = 64, .use_position_encoding = false}
              .edge_input_dim()
          == 128);

    ParamSet<D> params;
    auto layer = make_layer(params, {.d_in = 64, .d_out = 64, .k = 4, .pos_dim = 64});
    CHECK(params.get("dfa.edge.weight").value.shape == Shape{192, 64});
    CHECK(params.get("dfa.pos.weight").value.shape == Shape{10, 64});

    ParamSet<D> no_pos;
    auto plain = make_layer(no_pos, {.d_in = 8, .d_out = 16, .k = 4, .use_position_encoding = false});
    CHECK(no_pos.get("dfa.edge.weight").value.shape == Shape{16, 16});
    CHECK_FALSE(no_pos.contains("dfa.pos.weight"));

    Tape<D> t;
    std::mt19937_64 rng{4};
    auto h_f = t.constant(uniform({1, 3, 4, 10}, rng));
    CHECK_THROWS_AS(plain.edge_feature(t, std::nullopt, h_f), DimensionError);
    CHECK_THROWS(layer.edge_feature(t, std::nullopt, t.constant(uniform({1, 3, 4, 128}, rng))));
}

TEST_CASE("aggregation")
{
    Tape<D> t;
    auto h = t.constant({{1, 1, 2, 2}, {1, 5, 3, 2}});
    CHECK(aggregate(h, Aggregation::max).value().data == std::vector<D>{3, 5});
    CHECK(aggregate(h, Aggregation::mean).value().data == std::vector<D>{2, 3.5});
    CHECK(aggregate(h, Aggregation::sum).value().data == std::vector<D>{4, 7});
    auto zero = t.constant(Tensor<D>{{2, 1}});
    CHECK(aggregate(h, Aggregation::attention, &zero).value().data == std::vector<D>{2, 3.5});
    CHECK_THROWS(aggregate(h, Aggregation::attention));

    std::mt19937_64 rng{5};
    const auto edges = uniform({2, 6, 5, 4}, rng);
    const auto mx = aggregate(t.constant(edges), Aggregation::max).value();
    const auto mean = aggregate(t.constant(edges), Aggregation::mean).value();
    for (std::size_t i = 0; i < mx.size(); ++i) {
        CHECK(mx[i] >= mean[i]);
    }

    // Channel 0 is constant over the neighbours, so the attention output
    // there is that constant times the sum of the weights.
    auto varied = edges;
    for (std::size_t row = 0; row < 12; ++row) {
        for (std::size_t m = 0; m < 5; ++m) {
            varied[(row * 5 + m) * 4] = 0.5 + static_cast<double>(row);
        }
    }
    auto scorer = t.constant(uniform({4, 1}, rng, -3.0, 3.0));
    const auto att = aggregate(t.constant(varied), Aggregation::attention, &scorer).value();
    for (std::size_t row = 0; row < 12; ++row) {
        CHECK(std::abs(att[row * 4] / (0.5 + static_cast<double>(row)) - 1.0) < 1e-12);
    }
    CHECK_THROWS(parse_aggregation("median"));
}

TEST_CASE("single point: the layer is one MLP on the self edge")
{
    ParamSet<D> params;
    auto layer = make_layer(params, {.d_in = 2, .d_out = 5, .k = 1, .pos_dim = 4});
    const Tensor<D> f{{1, 1, 2}, {0.3, -0.7}};
    const Tensor<D> x{{1, 1, 3}, {0.1, 0.2, -0.4}};
    Tape<D> t{Mode::evaluation};
    auto out = layer.forward(t, t.constant(f), t.constant(x));
    const auto pos = mlp_oracle(params, "dfa.pos", {0.1, 0.2, -0.4, 0.1, 0.2, -0.4, 0, 0, 0, 0});
    std::vector<double> edge_in = pos;
    edge_in.insert(edge_in.end(), {0.3, -0.7, 0, 0});
    const auto expected = mlp_oracle(params, "dfa.edge", edge_in);
    REQUIRE(out.shape() == Shape{1, 1, 5});
    for (std::size_t j = 0; j < 5; ++j) {
        CHECK(out.value()[j] == doctest::Approx(expected[j]).epsilon(1e-13));
    }
}

TEST_CASE("first layer on coordinates yields 64 channels")
{
    ParamSet<D> params;
    auto layer = make_layer(params, {.d_in = 3, .d_out = 64, .k = 20, .pos_dim = 64});
    std::mt19937_64 rng{6};
    const auto x = uniform({2, 32, 3}, rng);
    Tape<D> t{Mode::training};
    auto out = layer.forward(t, t.constant(x), t.constant(x));
    CHECK(out.shape() == Shape{2, 32, 64});
}

TEST_CASE("whole-layer parameter gradients")
{
    ParamSet<D> params;
    auto layer = make_layer(params, {.d_in = 3, .d_out = 8, .k = 6, .pos_dim = 6});
    std::mt19937_64 rng{7};
    const auto x = uniform({1, 32, 3}, rng);
    const auto w = uniform({1, 32, 8}, rng);
    GradcheckOptions opt;
    opt.mode = Mode::training;
    opt.relative_floor = 1e-3;
    const auto results = parameter_gradient_check<D>([&](Tape<D>& t) {
        return sum(mul(layer.forward(t, t.constant(x), t.constant(x)), t.constant(w)));
    }, params, opt);
    CHECK(results.size() == 8);
    for (const auto& [name, r] : results) {
        INFO(name);
        CHECK(r.max_rel_error < 1e-4);
    }
}

TEST_CASE("permutation equivariance")
{
    std::mt19937_64 rng{8};
    Tensor<D> x;
    do {
        x = uniform({1, 14, 3}, rng);
    } while (!test::distinct_distances(x, 1e-6));
    const auto f = uniform({1, 14, 5}, rng);
    const auto perm = test::random_permutation(14, rng);
    for (auto agg : {Aggregation::max, Aggregation::attention}) {
        ParamSet<D> params;
        auto layer = make_layer(params, {.d_in = 5, .d_out = 7, .k = 4, .pos_dim = 4,
                                         .aggregation = agg, .graph_domain = GraphDomain::spatial});
        Tape<D> t{Mode::evaluation};
        const auto a = layer.forward(t, t.constant(f), t.constant(x)).value();
        const auto b = layer.forward(t, t.constant(test::permute_rows(f, perm)),
                                     t.constant(test::permute_rows(x, perm)))
                           .value();
        const auto pa = test::permute_rows(a, perm);
        CHECK(test::max_abs_diff(pa.data, b.data) < 1e-10);

        ParamSet<float> pf;
        std::mt19937_64 init{1};
        DfaLayer<float> lf{pf, "dfa", {.d_in = 5, .d_out = 7, .k = 4, .pos_dim = 4,
                                       .aggregation = agg, .graph_domain = GraphDomain::spatial},
                           init};
        Tape<float> tf{Mode::evaluation};
        const auto fa = lf.forward(tf, tf.constant(test::cast<float>(f)),
                                   tf.constant(test::cast<float>(x)))
                            .value();
        const auto fb = lf.forward(tf, tf.constant(test::cast<float>(test::permute_rows(f, perm))),
                                   tf.constant(test::cast<float>(test::permute_rows(x, perm))))
                            .value();
        const auto pfa = test::permute_rows(fa, perm);
        for (std::size_t i = 0; i < fb.size(); ++i) {
            CHECK(std::abs(pfa[i] - fb[i]) <= 1e-5f * std::max(1.0f, std::abs(fb[i])));
        }
    }
}

TEST_CASE("rows depend only on their neighbourhood")
{
    ParamSet<D> params;
    auto layer = make_layer(params, {.d_in = 3, .d_out = 6, .k = 3, .pos_dim = 4});
    std::mt19937_64 rng{9};
    const auto x = uniform({1, 10, 3}, rng);
    std::vector<NeighborGraph> before;
    Tape<D> t{Mode::evaluation};
    const auto out = layer.forward(t, t.constant(x), t.constant(x), &before).value();

    // Pick a row i and a point j outside its neighbourhood, then nudge j
    // slightly and keep the graph unchanged.
    const auto row = before[0].row(0);
    std::size_t j = 0;
    while (std::find(row.begin(), row.end(), j) != row.end()) {
        ++j;
    }
    auto moved = x;
    moved[j * 3] += 1e-7;
    std::vector<NeighborGraph> after;
    const auto out2 = layer.forward(t, t.constant(moved), t.constant(moved), &after).value();
    REQUIRE(after[0].indices == before[0].indices);
    for (std::size_t c = 0; c < 6; ++c) {
        CHECK(out2[c] == out[c]);
    }
}

TEST_CASE("k = 1 makes the layer pointwise")
{
    ParamSet<D> params;
    auto layer = make_layer(params, {.d_in = 4, .d_out = 5, .k = 1, .pos_dim = 3});
    std::mt19937_64 rng{10};
    const auto f = uniform({1, 6, 4}, rng);
    const auto x = uniform({1, 6, 3}, rng);
    Tape<D> t{Mode::evaluation};
    const auto all = layer.forward(t, t.constant(f), t.constant(x)).value();
    for (std::size_t i = 0; i < 6; ++i) {
        Tensor<D> fi{{1, 1, 4}, {f.data.begin() + i * 4, f.data.begin() + i * 4 + 4}};
        Tensor<D> xi{{1, 1, 3}, {x.data.begin() + i * 3, x.data.begin() + i * 3 + 3}};
        const auto one = layer.forward(t, t.constant(fi), t.constant(xi)).value();
        for (std::size_t c = 0; c < 5; ++c) {
            CHECK(one[c] == all[i * 5 + c]);
        }
    }
}
