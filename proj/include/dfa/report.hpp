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

#include "dfa/train.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace dfa {

inline constexpr const char* epoch_csv_header = "epoch,lr,train_loss,train_acc,val_metric,wall_clock_s";

// Header plus one row per epoch. Reals use shortest round-trip form, so
// everything but the last column is reproducible byte for byte.
void write_epoch_csv(std::ostream& out, const std::vector<EpochRecord>& epochs);
auto read_epoch_csv(std::istream& in) -> std::vector<EpochRecord>;

// Two stacked line charts (training loss; training accuracy and
// validation metric) with a fixed 640x480 layout.
auto render_svg(const std::vector<EpochRecord>& epochs, const std::string& title) -> std::string;

void write_text_file(const std::string& path, const std::string& content);
auto read_text_file(const std::string& path) -> std::string;

auto format_real(double v) -> std::string;

} // namespace dfa
