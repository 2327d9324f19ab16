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

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dfa {

class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

// Shape or width mismatch between operands.
class DimensionError : public Error
{
public:
    using Error::Error;
};

// Invalid argument value (k > N, p outside [0,1), unknown enum name...).
class ConfigError : public Error
{
public:
    using Error::Error;
};

// NaN or Inf where finite numbers are required.
class NumericError : public Error
{
public:
    using Error::Error;
};

// Loss became non-finite during training.
class DivergenceError : public NumericError
{
public:
    DivergenceError(std::size_t epoch, std::size_t batch, const std::string& what)
        : NumericError(what), epoch_{epoch}, batch_{batch}
    {}
    [[nodiscard]] auto epoch() const -> std::size_t { return epoch_; }
    [[nodiscard]] auto batch() const -> std::size_t { return batch_; }

private:
    std::size_t epoch_;
    std::size_t batch_;
};

// Malformed input file. `position` is a 1-based line number for text
// formats and a byte offset for binary formats.
class FormatError : public Error
{
public:
    FormatError(const std::string& what, std::size_t position)
        : Error(what), position_{position}
    {}
    [[nodiscard]] auto position() const -> std::size_t { return position_; }

private:
    std::size_t position_;
};

// Dataset content unusable for the requested operation (empty set,
// missing labels, degenerate mesh...).
class DataError : public Error
{
public:
    using Error::Error;
};

// Raised by OFF parsing; position is the line number.
class ParseError : public FormatError
{
public:
    using FormatError::FormatError;
};

} // namespace dfa
