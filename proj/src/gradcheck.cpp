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

#include "dfa/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace dfa {

namespace {

auto sample_coords(std::size_t n, std::size_t max_coords, std::uint64_t seed)
    -> std::vector<std::size_t>
{
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    if (max_coords == 0 || max_coords >= n) {
        return all;
    }
    std::mt19937_64 rng{seed};
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(max_coords);
    std::sort(all.begin(), all.end());
    return all;
}

void fold(GradcheckResult& r, std::size_t index, double analytic, double numeric, double floor)
{
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    const double err = std::abs(analytic - numeric) / denom;
    if (r.checked++ == 0 || err > r.max_rel_error) {
        r.max_rel_error = err;
        r.worst_index = index;
        r.analytic = analytic;
        r.numeric = numeric;
    }
}

template <typename T>
auto scalar_of(const Var<T>& v) -> double
{
    if (v.value().size() != 1) {
        throw DimensionError("gradient check: function must be scalar, got shape "
                             + to_string(v.shape()));
    }
    return static_cast<double>(v.value().data[0]);
}

} // namespace

template <typename T>
auto finite_difference_check(const TapeFunction<T>& fn, const Tensor<T>& x,
                             const GradcheckOptions& options) -> GradcheckResult
{
    auto evaluate = [&](const Tensor<T>& at) {
        Tape<T> tape{options.mode, options.seed, false};
        return scalar_of(fn(tape, tape.constant(at)));
    };

    Tape<T> tape{options.mode, options.seed};
    auto xv = tape.variable(x);
    auto out = fn(tape, xv);
    const double base = scalar_of(out);
    tape.backward(out);
    std::vector<T> analytic(xv.grad().begin(), xv.grad().end());
    analytic.resize(x.size(), T{0});

    if (evaluate(x) != base || evaluate(x) != base) {
        throw NumericError("gradient check: function is not deterministic");
    }

    double floor = options.floor;
    for (auto g : analytic) {
        floor = std::max(floor, options.relative_floor * std::abs(static_cast<double>(g)));
    }
    GradcheckResult result;
    Tensor<T> probe = x;
    for (auto i : sample_coords(x.size(), options.max_coords, options.seed)) {
        const T original = probe.data[i];
        probe.data[i] = original + static_cast<T>(options.step);
        const double plus = evaluate(probe);
        probe.data[i] = original - static_cast<T>(options.step);
        const double minus = evaluate(probe);
        probe.data[i] = original;
        const double numeric = (plus - minus) / (2.0 * options.step);
        fold(result, i, static_cast<double>(analytic[i]), numeric, floor);
    }
    return result;
}

template <typename T>
auto parameter_gradient_check(const std::function<Var<T>(Tape<T>&)>& loss, ParamSet<T>& params,
                              const GradcheckOptions& options)
    -> std::map<std::string, GradcheckResult>
{
    // Running statistics change on every training-mode pass; restore them
    // so each evaluation sees the same state.
    std::vector<std::pair<Parameter<T>*, Tensor<T>>> frozen;
    for (auto& p : params) {
        if (!p.trainable) {
            frozen.emplace_back(&p, p.value);
        }
    }
    auto restore = [&] {
        for (auto& [p, v] : frozen) {
            p->value = v;
        }
    };
    auto evaluate = [&] {
        Tape<T> tape{options.mode, options.seed, false};
        const double v = scalar_of(loss(tape));
        restore();
        return v;
    };

    params.zero_grad();
    {
        Tape<T> tape{options.mode, options.seed};
        auto out = loss(tape);
        tape.backward(out);
        restore();
    }
    const double base = evaluate();
    if (evaluate() != base) {
        throw NumericError("gradient check: loss is not deterministic");
    }

    double floor = options.floor;
    for (const auto& p : params) {
        if (p.trainable) {
            for (auto g : p.grad) {
                floor = std::max(floor, options.relative_floor * std::abs(static_cast<double>(g)));
            }
        }
    }
    std::map<std::string, GradcheckResult> results;
    std::uint64_t salt = 0;
    for (auto& p : params) {
        if (!p.trainable) {
            continue;
        }
        GradcheckResult r;
        for (auto i : sample_coords(p.value.size(), options.max_coords, options.seed + ++salt)) {
            const T original = p.value.data[i];
            p.value.data[i] = original + static_cast<T>(options.step);
            const double plus = evaluate();
            p.value.data[i] = original - static_cast<T>(options.step);
            const double minus = evaluate();
            p.value.data[i] = original;
            fold(r, i, static_cast<double>(p.grad[i]), (plus - minus) / (2.0 * options.step), floor);
        }
        results.emplace(p.name, r);
    }
    return results;
}

template auto finite_difference_check<float>(const TapeFunction<float>&, const Tensor<float>&,
                                             const GradcheckOptions&) -> GradcheckResult;
template auto finite_difference_check<double>(const TapeFunction<double>&, const Tensor<double>&,
                                              const GradcheckOptions&) -> GradcheckResult;
template auto parameter_gradient_check<float>(const std::function<Var<float>(Tape<float>&)>&,
                                              ParamSet<float>&, const GradcheckOptions&)
    -> std::map<std::string, GradcheckResult>;
template auto parameter_gradient_check<double>(const std::function<Var<double>(Tape<double>&)>&,
                                               ParamSet<double>&, const GradcheckOptions&)
    -> std::map<std::string, GradcheckResult>;

} // namespace dfa
