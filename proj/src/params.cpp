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

#include "dfa/params.hpp"

namespace dfa {

template <typename T>
auto ParamSet<T>::add(const std::string& name, Tensor<T> value, bool trainable)
    -> Parameter<T>&
{
    if (index_.contains(name)) {
        throw ConfigError("duplicate parameter name '" + name + "'");
    }
    Parameter<T> p;
    p.name = name;
    p.trainable = trainable;
    if (trainable) {
        p.momentum.assign(value.size(), T{0});
    }
    p.value = std::move(value);
    index_.emplace(name, params_.size());
    params_.push_back(std::move(p));
    return params_.back();
}

template <typename T>
auto ParamSet<T>::get(const std::string& name) -> Parameter<T>&
{
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw ConfigError("unknown parameter '" + name + "'");
    }
    return params_[it->second];
}

template <typename T>
auto ParamSet<T>::get(const std::string& name) const -> const Parameter<T>&
{
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw ConfigError("unknown parameter '" + name + "'");
    }
    return params_[it->second];
}

template <typename T>
void ParamSet<T>::zero_grad()
{
    for (auto& p : params_) {
        if (p.trainable) {
            p.grad.assign(p.value.size(), T{0});
        }
    }
}

template <typename T>
auto ParamSet<T>::trainable_scalars() const -> std::size_t
{
    std::size_t n = 0;
    for (const auto& p : params_) {
        if (p.trainable) {
            n += p.value.size();
        }
    }
    return n;
}

template <typename T>
void sgd_momentum_step(ParamSet<T>& params, T lr, T momentum)
{
    std::string missing;
    for (const auto& p : params) {
        if (p.trainable && p.grad.size() != p.value.size()) {
            missing += (missing.empty() ? "" : ", ") + p.name;
        }
    }
    if (!missing.empty()) {
        throw ConfigError("sgd step: missing gradients for " + missing);
    }
    for (auto& p : params) {
        if (!p.trainable) {
            continue;
        }
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            p.momentum[i] = momentum * p.momentum[i] + p.grad[i];
            p.value.data[i] -= lr * p.momentum[i];
        }
    }
}

template class ParamSet<float>;
template class ParamSet<double>;
template void sgd_momentum_step<float>(ParamSet<float>&, float, float);
template void sgd_momentum_step<double>(ParamSet<double>&, double, double);

} // namespace dfa
