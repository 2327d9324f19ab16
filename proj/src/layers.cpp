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

#include "dfa/layers.hpp"

#include <cmath>

namespace dfa {

template <typename T>
LinearLayer<T>::LinearLayer(ParamSet<T>& params, const std::string& name, std::size_t in,
                            std::size_t out, std::mt19937_64& rng)
    : in_{in}, out_{out}
{
    if (in == 0 || out == 0) {
        throw ConfigError("linear layer '" + name + "' needs non-zero widths");
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> uniform(-bound, bound);
    Tensor<T> w{{in, out}};
    for (auto& v : w.data) {
        v = static_cast<T>(uniform(rng));
    }
    Tensor<T> b{{out}};
    for (auto& v : b.data) {
        v = static_cast<T>(uniform(rng));
    }
    weight_ = &params.add(name + ".weight", std::move(w));
    bias_ = &params.add(name + ".bias", std::move(b));
}

template <typename T>
auto LinearLayer<T>::forward(Tape<T>& tape, const Var<T>& x) const -> Var<T>
{
    return dfa::linear(x, tape.param(*weight_), tape.param(*bias_));
}

template <typename T>
MlpBlock<T>::MlpBlock(ParamSet<T>& params, const std::string& name, std::size_t in,
                      std::size_t out, std::mt19937_64& rng)
    : linear_{params, name, in, out, rng}
{
    gamma_ = &params.add(name + ".bn.gamma", Tensor<T>::filled({out}, T{1}));
    beta_ = &params.add(name + ".bn.beta", Tensor<T>{{out}});
    stats_.running_mean = &params.add(name + ".bn.running_mean", Tensor<T>{{out}}, false);
    stats_.running_var =
        &params.add(name + ".bn.running_var", Tensor<T>::filled({out}, T{1}), false);
}

template <typename T>
auto MlpBlock<T>::forward(Tape<T>& tape, const Var<T>& x) const -> Var<T>
{
    auto h = linear_.forward(tape, x);
    h = batch_norm(h, tape.param(*gamma_), tape.param(*beta_), stats_);
    return leaky_relu(h, static_cast<T>(leaky_slope));
}

template class LinearLayer<float>;
template class LinearLayer<double>;
template class MlpBlock<float>;
template class MlpBlock<double>;

} // namespace dfa
