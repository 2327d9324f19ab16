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

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records every operation applied to its Vars in execution order.
// Vars are cheap handles (tape pointer + node id); the tape owns values,
// gradients and the backward closures. Parameters from a ParamSet are
// bound onto a tape per forward pass, and backward() accumulates their
// gradients into Parameter::grad.
//
// Only the operations needed by the point-cloud networks are provided.
// "Rows" below means all leading axes flattened, with the last axis as
// the feature/channel axis.

#pragma once

#include "dfa/params.hpp"
#include "dfa/tensor.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

namespace dfa {

enum class Mode { training, evaluation };

template <typename T>
class Tape;

template <typename T>
class Var
{
public:
    Var() = default;
    Var(Tape<T>* tape, std::size_t id) : tape_{tape}, id_{id} {}

    [[nodiscard]] auto tape() const -> Tape<T>& { return *tape_; }
    [[nodiscard]] auto id() const -> std::size_t { return id_; }
    [[nodiscard]] auto value() const -> const Tensor<T>&;
    [[nodiscard]] auto shape() const -> const Shape& { return value().shape; }
    // Gradient after backward(); empty if the node was not reached.
    [[nodiscard]] auto grad() const -> std::span<const T>;
    [[nodiscard]] auto valid() const -> bool { return tape_ != nullptr; }

private:
    Tape<T>* tape_ = nullptr;
    std::size_t id_ = 0;
};

template <typename T>
class Tape
{
public:
    // Backward closure: reads the node's output gradient from the tape and
    // adds into its inputs' gradients.
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    explicit Tape(Mode mode = Mode::training, std::uint64_t seed = 0, bool record = true)
        : mode_{mode}, record_{record}, rng_{seed}
    {}

    Tape(const Tape&) = delete;
    auto operator=(const Tape&) -> Tape& = delete;

    [[nodiscard]] auto mode() const -> Mode { return mode_; }
    [[nodiscard]] auto training() const -> bool { return mode_ == Mode::training; }
    [[nodiscard]] auto recording() const -> bool { return record_; }
    auto rng() -> std::mt19937_64& { return rng_; }
    [[nodiscard]] auto size() const -> std::size_t { return nodes_.size(); }

    // Leaf that never receives a gradient.
    auto constant(Tensor<T> value) -> Var<T>;
    // Leaf whose gradient accumulates across backward() calls.
    auto variable(Tensor<T> value) -> Var<T>;
    // Leaf mirroring a parameter; backward() adds into param.grad.
    auto param(Parameter<T>& param) -> Var<T>;

    // Loss must hold exactly one element.
    void backward(const Var<T>& loss);

    [[nodiscard]] auto value(std::size_t id) const -> const Tensor<T>& { return nodes_[id].value; }
    [[nodiscard]] auto grad(std::size_t id) const -> std::span<const T> { return nodes_[id].grad; }

    [[nodiscard]] auto requires_grad(std::size_t id) const -> bool
    {
        return nodes_[id].requires_grad;
    }

    // Records an op node. The backward closure is dropped when no input
    // requires a gradient or recording is disabled.
    auto record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) -> Var<T>;
    auto record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn fn) -> Var<T>;

    // Used inside backward closures.
    [[nodiscard]] auto out_grad(std::size_t id) const -> const std::vector<T>& { return nodes_[id].grad; }
    // Gradient buffer of an input, zero-allocated on first use. Returns
    // nullptr when that input does not need a gradient.
    auto in_grad(std::size_t id) -> T*;

private:
    struct Node
    {
        Tensor<T> value;
        std::vector<T> grad;
        BackwardFn backward;
        Parameter<T>* param = nullptr;
        bool requires_grad = false;
        bool accumulates = false; // variable leaves keep grads across passes
    };

    Mode mode_;
    bool record_;
    std::mt19937_64 rng_;
    std::deque<Node> nodes_; // stable references while recording
};

template <typename T>
auto Var<T>::value() const -> const Tensor<T>&
{
    return tape_->value(id_);
}

template <typename T>
auto Var<T>::grad() const -> std::span<const T>
{
    return tape_->grad(id_);
}

// Running statistics owned by a ParamSet as non-trainable entries.
template <typename T>
struct BatchNormStats
{
    Parameter<T>* running_mean = nullptr;
    Parameter<T>* running_var = nullptr;
};

struct BatchNormOptions
{
    double eps = 1e-5;
    double momentum = 0.1;
};

// out[..., j] = sum_i x[..., i] * weight[i, j] + bias[j]
template <typename T>
auto linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) -> Var<T>;

template <typename T>
auto add(const Var<T>& a, const Var<T>& b) -> Var<T>;
template <typename T>
auto sub(const Var<T>& a, const Var<T>& b) -> Var<T>;
template <typename T>
auto mul(const Var<T>& a, const Var<T>& b) -> Var<T>;
template <typename T>
auto scale(const Var<T>& a, T factor) -> Var<T>;

// Sum of all elements, shape [1].
template <typename T>
auto sum(const Var<T>& x) -> Var<T>;

// Gradient at exactly zero is `slope`.
template <typename T>
auto leaky_relu(const Var<T>& x, T slope) -> Var<T>;

// Per-channel normalisation over all rows. Training mode uses batch
// statistics (biased variance) and updates the running statistics with
// unbiased variance; evaluation mode uses the running statistics.
template <typename T>
auto batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                const BatchNormStats<T>& stats, BatchNormOptions options = {}) -> Var<T>;

// Reductions remove `axis`. Max routes the gradient to the first argmax.
template <typename T>
auto reduce_max(const Var<T>& x, std::size_t axis) -> Var<T>;
template <typename T>
auto reduce_sum(const Var<T>& x, std::size_t axis) -> Var<T>;
template <typename T>
auto reduce_mean(const Var<T>& x, std::size_t axis) -> Var<T>;

template <typename T>
auto softmax(const Var<T>& x, std::size_t axis) -> Var<T>;

// Inverted dropout; identity in evaluation mode or for p == 0.
template <typename T>
auto dropout(const Var<T>& x, T p) -> Var<T>;

// Mean over rows of -log softmax(logits)[label]. logits: [B, C].
template <typename T>
auto cross_entropy(const Var<T>& logits, std::span<const int> labels) -> Var<T>;

template <typename T>
auto reshape(const Var<T>& x, Shape shape) -> Var<T>;

// out row r = x row indices[r]; out has shape `out_shape`, whose last
// axis must equal x's last axis.
template <typename T>
auto gather_rows(const Var<T>& x, std::span<const std::size_t> indices, Shape out_shape) -> Var<T>;

// Concatenation along the last axis; leading axes must agree.
template <typename T>
auto concat_last(const std::vector<Var<T>>& parts) -> Var<T>;

// Columns [begin, end) of the last axis.
template <typename T>
auto slice_last(const Var<T>& x, std::size_t begin, std::size_t end) -> Var<T>;

// [B, C] -> [B, n, C], replicating each row n times.
template <typename T>
auto broadcast_rows(const Var<T>& x, std::size_t n) -> Var<T>;

// Euclidean norm over the last axis, keeping it with extent 1. The
// gradient at a zero vector is zero.
template <typename T>
auto norm_last(const Var<T>& x) -> Var<T>;

// x: [..., M], w: [..., 1] -> x * w broadcast over the last axis.
template <typename T>
auto mul_broadcast_last(const Var<T>& x, const Var<T>& w) -> Var<T>;

// [B, N, a] x [B, a, b] -> [B, N, b]
template <typename T>
auto batched_matmul(const Var<T>& x, const Var<T>& m) -> Var<T>;

// Throws NumericError naming the first non-finite element.
template <typename T>
void require_finite(std::span<const T> values, const char* what);

extern template class Tape<float>;
extern template class Tape<double>;

} // namespace dfa
