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

#include "dfa/tensor.hpp"

#include <deque>
#include <map>
#include <string>
#include <vector>

namespace dfa {

// A named persistent tensor. Trainable parameters carry a momentum
// buffer; non-trainable ones (batch-norm running statistics) do not.
// `grad` is empty until the first zero_grad() or backward pass reaches it.
template <typename T>
struct Parameter
{
    std::string name;
    Tensor<T> value;
    std::vector<T> grad;
    std::vector<T> momentum;
    bool trainable = true;
};

template <typename T>
class ParamSet
{
public:
    using container = std::deque<Parameter<T>>;

    // References stay valid for the lifetime of the set.
    auto add(const std::string& name, Tensor<T> value, bool trainable = true) -> Parameter<T>&;

    [[nodiscard]] auto contains(const std::string& name) const -> bool
    {
        return index_.contains(name);
    }
    auto get(const std::string& name) -> Parameter<T>&;
    auto get(const std::string& name) const -> const Parameter<T>&;

    // Sets every trainable gradient to zeros of the right shape.
    void zero_grad();

    // Scalar count of trainable entries (weights, biases, BN affine).
    [[nodiscard]] auto trainable_scalars() const -> std::size_t;

    [[nodiscard]] auto size() const -> std::size_t { return params_.size(); }
    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    [[nodiscard]] auto begin() const { return params_.begin(); }
    [[nodiscard]] auto end() const { return params_.end(); }

private:
    container params_;
    std::map<std::string, std::size_t> index_;
};

// Heavy-ball SGD: v <- momentum * v + g;  p <- p - lr * v.
// Throws ConfigError naming every trainable parameter without a gradient.
template <typename T>
void sgd_momentum_step(ParamSet<T>& params, T lr, T momentum);

extern template class ParamSet<float>;
extern template class ParamSet<double>;

} // namespace dfa
