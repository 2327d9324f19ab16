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

#include "dfa/autodiff.hpp"

#include <functional>
#include <map>
#include <string>

namespace dfa {

struct GradcheckOptions
{
    double step = 1e-6;
    // Denominator floor: error = |a - n| / max(|a|, |n|, floor).
    double floor = 1e-7;
    // When positive, the floor is raised to relative_floor times the
    // largest analytic gradient magnitude of the whole check, so entries
    // that are exactly zero (a bias feeding batch norm) are compared on
    // the scale of the gradient rather than of rounding noise.
    double relative_floor = 0.0;
    // Coordinates sampled per tensor; 0 checks all of them.
    std::size_t max_coords = 0;
    std::uint64_t seed = 1234;
    // Tape mode used for every evaluation. Each evaluation gets a fresh
    // tape seeded with `seed`, so dropout masks repeat exactly.
    Mode mode = Mode::evaluation;
};

struct GradcheckResult
{
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t checked = 0;
};

// Scalar-valued function recorded on a tape.
template <typename T>
using TapeFunction = std::function<Var<T>(Tape<T>&, const Var<T>&)>;

// Compares the tape gradient of fn at x with central differences.
// Throws NumericError if fn is not deterministic (two evaluations at x
// differ) and DimensionError if fn is not scalar.
template <typename T>
auto finite_difference_check(const TapeFunction<T>& fn, const Tensor<T>& x,
                             const GradcheckOptions& options = {}) -> GradcheckResult;

// Same comparison for every trainable parameter of a model. `loss` builds
// the scalar loss on the tape it is given, binding parameters from
// `params` itself. Returns one result per parameter name.
template <typename T>
auto parameter_gradient_check(const std::function<Var<T>(Tape<T>&)>& loss, ParamSet<T>& params,
                              const GradcheckOptions& options = {})
    -> std::map<std::string, GradcheckResult>;

} // namespace dfa
