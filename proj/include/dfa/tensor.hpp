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

#include "dfa/error.hpp"

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace dfa {

using Shape = std::vector<std::size_t>;

inline auto numel(const Shape& shape) -> std::size_t
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>{});
}

inline auto to_string(const Shape& shape) -> std::string
{
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i != 0) {
            out += ", ";
        }
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

// Dense row-major array. Plain value type; gradients live on the tape.
template <typename T>
struct Tensor
{
    Shape shape;
    std::vector<T> data;

    Tensor() = default;

    explicit Tensor(Shape s) : shape{std::move(s)}, data(numel(shape), T{0}) {}

    Tensor(Shape s, std::vector<T> values) : shape{std::move(s)}, data{std::move(values)}
    {
        if (numel(shape) != data.size()) {
            throw DimensionError("tensor of shape " + to_string(shape) + " needs "
                                 + std::to_string(numel(shape)) + " values, got "
                                 + std::to_string(data.size()));
        }
    }

    static auto filled(Shape s, T value) -> Tensor
    {
        Tensor t{std::move(s)};
        std::fill(t.data.begin(), t.data.end(), value);
        return t;
    }

    [[nodiscard]] auto size() const -> std::size_t { return data.size(); }
    [[nodiscard]] auto rank() const -> std::size_t { return shape.size(); }
    [[nodiscard]] auto dim(std::size_t axis) const -> std::size_t { return shape.at(axis); }
    [[nodiscard]] auto span() -> std::span<T> { return data; }
    [[nodiscard]] auto span() const -> std::span<const T> { return data; }

    auto operator[](std::size_t i) -> T& { return data[i]; }
    auto operator[](std::size_t i) const -> const T& { return data[i]; }

    // Number of rows when the last axis is treated as the feature axis.
    [[nodiscard]] auto rows() const -> std::size_t
    {
        return shape.empty() ? 1 : data.size() / shape.back();
    }
    [[nodiscard]] auto cols() const -> std::size_t { return shape.empty() ? 1 : shape.back(); }

    auto operator==(const Tensor&) const -> bool = default;
};

} // namespace dfa
