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

#include <random>
#include <string>

namespace dfa {

inline constexpr double leaky_slope = 0.2;

// Fully connected map over the last axis. Weights and bias are drawn from
// U(-1/sqrt(in), 1/sqrt(in)).
template <typename T>
class LinearLayer
{
public:
    LinearLayer() = default;
    LinearLayer(ParamSet<T>& params, const std::string& name, std::size_t in, std::size_t out,
                std::mt19937_64& rng);

    auto forward(Tape<T>& tape, const Var<T>& x) const -> Var<T>;

    [[nodiscard]] auto in() const -> std::size_t { return in_; }
    [[nodiscard]] auto out() const -> std::size_t { return out_; }
    [[nodiscard]] auto weight() const -> Parameter<T>& { return *weight_; }
    [[nodiscard]] auto bias() const -> Parameter<T>& { return *bias_; }

private:
    std::size_t in_ = 0;
    std::size_t out_ = 0;
    Parameter<T>* weight_ = nullptr;
    Parameter<T>* bias_ = nullptr;
};

// linear -> batch norm -> LeakyReLU(0.2), applied row-wise.
template <typename T>
class MlpBlock
{
public:
    MlpBlock() = default;
    MlpBlock(ParamSet<T>& params, const std::string& name, std::size_t in, std::size_t out,
             std::mt19937_64& rng);

    auto forward(Tape<T>& tape, const Var<T>& x) const -> Var<T>;

    [[nodiscard]] auto in() const -> std::size_t { return linear_.in(); }
    [[nodiscard]] auto out() const -> std::size_t { return linear_.out(); }
    [[nodiscard]] auto linear() const -> const LinearLayer<T>& { return linear_; }

private:
    LinearLayer<T> linear_;
    Parameter<T>* gamma_ = nullptr;
    Parameter<T>* beta_ = nullptr;
    BatchNormStats<T> stats_;
};

// Trainable scalars in an MlpBlock / LinearLayer of the given widths.
constexpr auto linear_param_count(std::size_t in, std::size_t out) -> std::size_t
{
    return in * out + out;
}
constexpr auto mlp_block_param_count(std::size_t in, std::size_t out) -> std::size_t
{
    return linear_param_count(in, out) + 2 * out;
}

extern template class LinearLayer<float>;
extern template class LinearLayer<double>;
extern template class MlpBlock<float>;
extern template class MlpBlock<double>;

} // namespace dfa
