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

// Model checkpoint container, version "dfa-ckpt-1":
//
//   dfa-ckpt-1\n
//   config <bytes>\n<canonical ModelConfig text>
//   rng <bytes>\n<RNG state text>
//   params <count>\n
//   then per tensor:  <name> <f32|f64> <rank> <d0> ... <dn-1>\n<payload>
//   end\n
//
// Payloads are little-endian IEEE floats, row-major. Every parameter of
// the model is stored, including batch-norm running statistics.

#pragma once

#include "dfa/model.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace dfa {

inline constexpr const char* checkpoint_version = "dfa-ckpt-1";

struct StoredTensor
{
    std::string name;
    bool is_double = false;
    Shape shape;
    std::vector<double> values; // exact for both f32 and f64 payloads
};

struct Checkpoint
{
    ModelConfig config;
    std::string rng_state;
    std::vector<StoredTensor> tensors;
};

template <typename T>
auto make_checkpoint(const DfaNetwork<T>& model, std::string rng_state = {}) -> Checkpoint;

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
auto read_checkpoint(std::istream& in) -> Checkpoint;

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
auto load_checkpoint(const std::string& path) -> Checkpoint;

// Copies stored tensors into the model's parameters (converting precision
// if needed). Throws ConfigError on a missing name or shape mismatch.
template <typename T>
void restore_parameters(DfaNetwork<T>& model, const Checkpoint& ckpt);

} // namespace dfa
