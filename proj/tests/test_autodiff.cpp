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

#include "dfa/autodiff.hpp"
#include "dfa/gradcheck.hpp"

#include "support.hpp"

#include "doctest.h"

#include <cmath>
#include <limits>

using namespace dfa;
using dfa::test::uniform;
using D = double;

namespace {

auto run_grad(const Tensor<D>& x, const std::function<Var<D>(const Var<D>&)>& fn,
              Mode mode = Mode::evaluation) -> std::vector<D>
{
    Tape<D> tape{mode};
    auto v = tape.variable(x);
    tape.backward(fn(v));
    return {v.grad().begin(), v.grad().end()};
}

auto weighted_sum(const Var<D>& y, std::uint64_t seed = 99) -> Var<D>
{
    std::mt19937_64 rng{seed};
    return sum(mul(y, y.tape().constant(uniform(y.shape(), rng))));
}

auto check(const TapeFunction<D>& fn, const Tensor<D>& x, Mode mode = Mode::evaluation) -> double
{
    GradcheckOptions opt;
    opt.mode = mode;
    return finite_difference_check<D>(fn, x, opt).max_rel_error;
}

} // namespace

TEST_CASE("linear: identity and zero weights")
{
    Tape<D> t;
    auto x = t.constant({{1, 2}, {1, 2}});
    auto y = linear(x, t.constant({{2, 2}, {1, 0, 0, 1}}), t.constant({{2}, {0, 0}}));
    CHECK(y.value().data == std::vector<D>{1, 2});
    auto z = linear(x, t.constant(Tensor<D>{{2, 2}}), t.constant({{2}, {3, 4}}));
    CHECK(z.value().data == std::vector<D>{3, 4});
}

TEST_CASE("linear: forward matches a loop and gradients match differences")
{
    std::mt19937_64 rng{1};
    const auto x = uniform({4, 3}, rng);
    const auto w = uniform({3, 5}, rng);
    const auto b = uniform({5}, rng);
    Tape<D> t;
    auto y = linear(t.constant(x), t.constant(w), t.constant(b));
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t j = 0; j < 5; ++j) {
            double acc = b[j];
            for (std::size_t i = 0; i < 3; ++i) {
                acc += x[r * 3 + i] * w[i * 5 + j];
            }
            CHECK(y.value()[r * 5 + j] == doctest::Approx(acc).epsilon(1e-14));
        }
    }
    CHECK(check([&](Tape<D>& tp, const Var<D>& v) {
        return weighted_sum(linear(v, tp.constant(w), tp.constant(b)));
    }, x) < 1e-8);
    CHECK(check([&](Tape<D>& tp, const Var<D>& v) {
        return weighted_sum(linear(tp.constant(x), v, tp.constant(b)));
    }, w) < 1e-8);
    CHECK(check([&](Tape<D>& tp, const Var<D>& v) {
        return weighted_sum(linear(tp.constant(x), tp.constant(w), v));
    }, b) < 1e-8);
}

TEST_CASE("linear: shape mismatch names both shapes")
{
    Tape<D> t;
    auto x = t.constant(Tensor<D>{{2, 3}});
    auto w = t.constant(Tensor<D>{{4, 5}});
    auto b = t.constant(Tensor<D>{{5}});
    try {
        (void)linear(x, w, b);
        FAIL("expected a dimension error");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2, 3]") != std::string::npos);
        CHECK(msg.find("[4, 5]") != std::string::npos);
    }
}

TEST_CASE("leaky_relu values and gradient at the kink")
{
    const Tensor<D> x{{3}, {2.0, -1.0, 0.0}};
    Tape<D> t;
    auto v = t.variable(x);
    auto y = leaky_relu(v, 0.2);
    CHECK(y.value()[0] == 2.0);
    CHECK(y.value()[1] == doctest::Approx(-0.2));
    CHECK(y.value()[2] == 0.0);
    t.backward(sum(y));
    CHECK(v.grad()[0] == 1.0);
    CHECK(v.grad()[1] == doctest::Approx(0.2));
    CHECK(v.grad()[2] == doctest::Approx(0.2));
}

TEST_CASE("batch_norm")
{
    Parameter<D> rm{"m", Tensor<D>{{1}}, {}, {}, false};
    Parameter<D> rv{"v", Tensor<D>::filled({1}, 1.0), {}, {}, false};
    BatchNormStats<D> stats{&rm, &rv};

    SUBCASE("two-point symmetry")
    {
        Tape<D> t{Mode::training};
        auto y = batch_norm(t.constant({{2, 1}, {1, 3}}), t.constant({{1}, {1}}),
                            t.constant({{1}, {0}}), stats, {.eps = 1e-12, .momentum = 0.1});
        CHECK(y.value()[0] == doctest::Approx(-1.0));
        CHECK(y.value()[1] == doctest::Approx(1.0));
        // Running stats: 0.9*0 + 0.1*2, 0.9*1 + 0.1*2 (unbiased variance of {1,3}).
        CHECK(rm.value[0] == doctest::Approx(0.2));
        CHECK(rv.value[0] == doctest::Approx(1.1));
    }
    SUBCASE("constant channel yields beta")
    {
        Tape<D> t{Mode::training};
        auto y = batch_norm(t.constant(Tensor<D>::filled({5, 1}, 3.5)), t.constant({{1}, {1.3}}),
                            t.constant({{1}, {0.25}}), stats);
        for (double v : y.value().data) {
            CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
        }
    }
    SUBCASE("output statistics of a random batch")
    {
        std::mt19937_64 rng{5};
        Parameter<D> m4{"m", Tensor<D>{{4}}, {}, {}, false};
        Parameter<D> v4{"v", Tensor<D>::filled({4}, 1.0), {}, {}, false};
        const auto x = uniform({8, 4}, rng, -3.0, 5.0);
        Tape<D> t{Mode::training};
        auto y = batch_norm(t.constant(x), t.constant(Tensor<D>::filled({4}, 1.0)),
                            t.constant(Tensor<D>{{4}}), BatchNormStats<D>{&m4, &v4});
        for (std::size_t c = 0; c < 4; ++c) {
            double mean = 0.0;
            double var = 0.0;
            double xm = 0.0;
            double xv = 0.0;
            for (std::size_t r = 0; r < 8; ++r) {
                mean += y.value()[r * 4 + c] / 8;
                xm += x[r * 4 + c] / 8;
            }
            for (std::size_t r = 0; r < 8; ++r) {
                var += std::pow(y.value()[r * 4 + c] - mean, 2) / 8;
                xv += std::pow(x[r * 4 + c] - xm, 2) / 8;
            }
            CHECK(std::abs(mean) < 1e-6);
            CHECK(var == doctest::Approx(xv / (xv + 1e-5)).epsilon(1e-4));
        }
    }
    SUBCASE("evaluation uses running statistics")
    {
        rm.value[0] = 2.0;
        rv.value[0] = 4.0 - 1e-5;
        Tape<D> t{Mode::evaluation};
        auto y = batch_norm(t.constant({{2, 1}, {4, 0}}), t.constant({{1}, {1}}),
                            t.constant({{1}, {0}}), stats);
        CHECK(y.value()[0] == doctest::Approx(1.0));
        CHECK(y.value()[1] == doctest::Approx(-1.0));
        CHECK(rm.value[0] == 2.0);
    }
    SUBCASE("a training batch of one is rejected")
    {
        Tape<D> t{Mode::training};
        CHECK_THROWS_AS(batch_norm(t.constant({{1, 1}, {1}}), t.constant({{1}, {1}}),
                                   t.constant({{1}, {0}}), stats),
                        ConfigError);
    }
}

TEST_CASE("reduce_max with the first-index tie rule")
{
    Tape<D> t;
    auto y = reduce_max(t.constant({{2, 2}, {1, 5, 3, 2}}), 0);
    CHECK(y.value().data == std::vector<D>{3, 5});

    const auto g = run_grad({{1, 2}, {2, 2}}, [](const Var<D>& v) { return sum(reduce_max(v, 1)); });
    CHECK(g == std::vector<D>{1, 0});

    std::mt19937_64 rng{2};
    const auto x = uniform({4, 6, 8}, rng);
    for (std::size_t axis = 0; axis < 3; ++axis) {
        CHECK(check([axis](Tape<D>&, const Var<D>& v) { return weighted_sum(reduce_max(v, axis)); },
                    x) < 1e-8);
    }
    CHECK_THROWS(reduce_max(t.constant(Tensor<D>{{2, 0}}), 1));
}

TEST_CASE("softmax")
{
    Tape<D> t;
    auto y = softmax(t.constant(Tensor<D>{{3}}), 0);
    for (double v : y.value().data) {
        CHECK(v == doctest::Approx(1.0 / 3.0));
    }
    auto big = softmax(t.constant({{2}, {1000, 0}}), 0);
    CHECK(big.value()[0] == 1.0);
    CHECK(big.value()[1] >= 0.0);
    CHECK(big.value()[1] < 1e-300);

    std::mt19937_64 rng{3};
    const auto x = uniform({3, 5}, rng, -4.0, 4.0);
    auto s = softmax(t.constant(x), 1);
    for (std::size_t r = 0; r < 3; ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < 5; ++c) {
            total += s.value()[r * 5 + c];
        }
        CHECK(std::abs(total - 1.0) < 1e-12);
    }
    // Central differences at step 1e-6 carry ~1e-10 absolute rounding
    // error, which is above 1e-8 relative for the smaller entries here.
    CHECK(check([](Tape<D>&, const Var<D>& v) { return weighted_sum(softmax(v, 1)); }, x) < 1e-7);
}

TEST_CASE("dropout")
{
    std::mt19937_64 rng{4};
    const auto x = uniform({6, 7}, rng);
    {
        Tape<D> t{Mode::evaluation};
        CHECK(dropout(t.constant(x), 0.5).value() == x);
    }
    {
        Tape<D> t{Mode::training, 11};
        CHECK(dropout(t.constant(x), 0.0).value() == x);
    }
    Tape<D> t{Mode::training, 12};
    auto y = dropout(t.constant(Tensor<D>::filled({100000}, 1.0)), 0.5);
    double mean = 0.0;
    for (double v : y.value().data) {
        CHECK((v == 0.0 || v == 2.0));
        mean += v / 1e5;
    }
    CHECK(std::abs(mean - 1.0) < 0.02);
}

TEST_CASE("cross_entropy")
{
    Tape<D> t;
    const std::vector<int> zero{0};
    auto uniform_logits = cross_entropy(t.constant(Tensor<D>{{1, 40}}), zero);
    CHECK(uniform_logits.value()[0] == doctest::Approx(std::log(40.0)).epsilon(1e-12));
    CHECK(uniform_logits.value()[0] == doctest::Approx(3.6889).epsilon(1e-4));

    auto saturated = cross_entropy(t.constant({{1, 3}, {1000, 0, 0}}), zero);
    CHECK(saturated.value()[0] < 1e-12);
    CHECK(std::isfinite(saturated.value()[0]));

    std::mt19937_64 rng{6};
    const std::vector<int> labels{0, 4, 2, 2, 1, 3};
    CHECK(check([&](Tape<D>&, const Var<D>& v) { return cross_entropy(v, std::span{labels}); },
                uniform({6, 5}, rng, -2.0, 2.0))
          < 1e-7);

    const std::vector<int> bad{5};
    CHECK_THROWS(cross_entropy(t.constant(Tensor<D>{{1, 5}}), bad));
}

TEST_CASE("backward basics")
{
    const auto g = run_grad(Tensor<D>{{2, 3, 2}}, [](const Var<D>& v) { return sum(v); });
    CHECK(g == std::vector<D>(12, 1.0));

    const auto z = run_grad({{3}, {1, -2, 4}},
                            [](const Var<D>& v) { return scale(sum(mul(v, v)), 0.0); });
    CHECK(z == std::vector<D>(3, 0.0));

    Tape<D> t;
    auto v = t.variable(Tensor<D>{{2}});
    CHECK_THROWS_AS(t.backward(v), DimensionError);
}

TEST_CASE("backward accumulates across calls and is reproducible")
{
    std::mt19937_64 rng{7};
    const auto x = uniform({4, 3}, rng);
    ParamSet<D> params;
    auto& w = params.add("w", uniform({3, 2}, rng));
    auto& unused = params.add("unused", uniform({2}, rng));
    params.zero_grad();
    auto pass = [&] {
        Tape<D> t{Mode::training, 3};
        auto y = dropout(linear(t.constant(x), t.param(w), t.constant(Tensor<D>{{2}})), 0.3);
        t.backward(weighted_sum(y));
    };
    pass();
    const auto once = w.grad;
    pass();
    for (std::size_t i = 0; i < once.size(); ++i) {
        CHECK(w.grad[i] == 2 * once[i]);
    }
    CHECK(unused.grad == std::vector<D>(2, 0.0));
    params.zero_grad();
    pass();
    CHECK(w.grad == once);
}

TEST_CASE("sgd with momentum")
{
    ParamSet<D> params;
    auto& p = params.add("p", Tensor<D>{{1}, {0.0}});
    p.grad = {1.0};
    sgd_momentum_step(params, 0.1, 0.9);
    CHECK(p.value[0] == doctest::Approx(-0.1));
    CHECK(p.momentum[0] == 1.0);
    sgd_momentum_step(params, 0.1, 0.9);
    CHECK(p.value[0] == doctest::Approx(-0.29));

    auto& q = params.add("q", Tensor<D>{{1}, {0.0}});
    q.momentum = {1.0};
    double expected = 0.0;
    for (int step = 1; step <= 5; ++step) {
        p.grad = {0.0};
        q.grad = {0.0};
        sgd_momentum_step(params, 0.1, 0.9);
        expected -= 0.1 * std::pow(0.9, step);
        CHECK(q.value[0] == doctest::Approx(expected).epsilon(1e-12));
    }

    const auto before = q.value;
    q.grad = {123.0};
    p.grad = {-7.0};
    sgd_momentum_step(params, 0.0, 0.9);
    CHECK(q.value == before);

    auto& r = params.add("r", Tensor<D>{{2}});
    (void)r;
    try {
        sgd_momentum_step(params, 0.1, 0.9);
        FAIL("expected a missing-gradient error");
    } catch (const ConfigError& e) {
        CHECK(std::string{e.what()}.find("r") != std::string::npos);
    }
}

TEST_CASE("finite-difference checker")
{
    const Tensor<D> x{{3}, {1, 2, 3}};
    auto sq = [](Tape<D>&, const Var<D>& v) { return sum(mul(v, v)); };
    CHECK(run_grad(x, [](const Var<D>& v) { return sum(mul(v, v)); }) == std::vector<D>{2, 4, 6});
    CHECK(check(sq, x) < 1e-9);

    auto constant = [](Tape<D>& t, const Var<D>&) { return t.constant({{1}, {4.0}}); };
    CHECK(check(constant, x) == 0.0);

    std::mt19937_64 rng{8};
    const auto w1 = uniform({3, 4}, rng);
    const auto w2 = uniform({4, 2}, rng);
    auto chain = [&](Tape<D>& t, const Var<D>& v) {
        auto h = linear(v, t.constant(w1), t.constant(Tensor<D>{{4}}));
        return weighted_sum(linear(h, t.constant(w2), t.constant(Tensor<D>{{2}})));
    };
    CHECK(check(chain, uniform({5, 3}, rng)) < 1e-8);

    int calls = 0;
    auto flaky = [&](Tape<D>& t, const Var<D>& v) {
        ++calls;
        return add(sum(v), t.constant({{1}, {static_cast<double>(calls)}}));
    };
    CHECK_THROWS_AS(check(flaky, x), NumericError);
}

TEST_CASE("gradient fidelity of the remaining ops")
{
    std::mt19937_64 rng{9};
    const auto x = uniform({2, 3, 4}, rng);
    CHECK(check([](Tape<D>&, const Var<D>& v) { return weighted_sum(reduce_sum(v, 1)); }, x) < 1e-6);
    CHECK(check([](Tape<D>&, const Var<D>& v) { return weighted_sum(reduce_mean(v, 2)); }, x) < 1e-6);
    CHECK(check([](Tape<D>&, const Var<D>& v) { return weighted_sum(scale(v, -0.3)); }, x) < 1e-6);
    CHECK(check([](Tape<D>&, const Var<D>& v) { return weighted_sum(norm_last(v)); }, x) < 1e-5);
    const auto m = uniform({2, 4, 2}, rng);
    CHECK(check([&](Tape<D>& t, const Var<D>& v) {
        return weighted_sum(batched_matmul(v, t.constant(m)));
    }, x) < 1e-6);
}

TEST_CASE("norm gradient at the origin is zero")
{
    const auto g = run_grad(Tensor<D>{{1, 3}}, [](const Var<D>& v) { return sum(norm_last(v)); });
    CHECK(g == std::vector<D>(3, 0.0));
}

TEST_CASE("non-finite values are reported")
{
    const std::vector<D> v{1.0, std::numeric_limits<D>::quiet_NaN()};
    CHECK_THROWS_AS(require_finite<D>(v, "test"), NumericError);
}
