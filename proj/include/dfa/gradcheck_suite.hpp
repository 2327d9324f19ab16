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

// Finite-difference checks of every differentiable op, the DFA layer and
// small whole networks, all in double precision.

#pragma once

#include "dfa/gradcheck.hpp"

#include <string>
#include <vector>

namespace dfa {

inline constexpr double elementwise_tolerance = 1e-6;
inline constexpr double composite_tolerance = 1e-4;

struct GradcheckCase
{
    std::string name;
    double tolerance = composite_tolerance;
    GradcheckResult result;
    std::string detail; // worst parameter for whole-model checks

    [[nodiscard]] auto passed() const -> bool { return result.max_rel_error < tolerance; }
};

// `max_coords` limits the coordinates probed per parameter tensor in the
// whole-network cases (0 probes all of them).
auto run_gradcheck_suite(std::uint64_t seed = 7, std::size_t max_coords = 24)
    -> std::vector<GradcheckCase>;

} // namespace dfa
