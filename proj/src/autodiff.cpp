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

#include "dfa/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

namespace dfa {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMatrix<T>>;

template <typename T>
void check_same_tape(const Var<T>& a, const Var<T>& b)
{
    if (&a.tape() != &b.tape()) {
        throw ConfigError("operands recorded on different tapes");
    }
}

template <typename T>
void check_same_shape(const char* op, const Var<T>& a, const Var<T>& b)
{
    check_same_tape(a, b);
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string{op} + ": shape mismatch " + to_string(a.shape())
                             + " vs " + to_string(b.shape()));
    }
}

// Splits a shape around `axis` into (outer, extent, inner).
struct AxisSplit
{
    std::size_t outer = 1;
    std::size_t extent = 1;
    std::size_t inner = 1;
};

auto split_axis(const char* op, const Shape& shape, std::size_t axis) -> AxisSplit
{
    if (axis >= shape.size()) {
        throw DimensionError(std::string{op} + ": axis " + std::to_string(axis)
                             + " out of range for shape " + to_string(shape));
    }
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) {
        s.outer *= shape[i];
    }
    s.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) {
        s.inner *= shape[i];
    }
    return s;
}

auto without_axis(Shape shape, std::size_t axis) -> Shape
{
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
    return shape;
}

} // namespace

template <typename T>
void require_finite(std::span<const T> values, const char* what)
{
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            throw NumericError(std::string{what} + ": non-finite value at index "
                               + std::to_string(i));
        }
    }
}

// ---------------------------------------------------------------------------
// Tape

template <typename T>
auto Tape<T>::constant(Tensor<T> value) -> Var<T>
{
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

template <typename T>
auto Tape<T>::variable(Tensor<T> value) -> Var<T>
{
    Node n;
    n.value = std::move(value);
    n.requires_grad = record_;
    n.accumulates = true;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

template <typename T>
auto Tape<T>::param(Parameter<T>& param) -> Var<T>
{
    Node n;
    n.value = param.value;
    n.requires_grad = record_ && param.trainable;
    n.param = n.requires_grad ? &param : nullptr;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

template <typename T>
auto Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn)
    -> Var<T>
{
    return record(std::move(value), std::vector<Var<T>>(inputs), std::move(fn));
}

template <typename T>
auto Tape<T>::record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn fn)
    -> Var<T>
{
    bool needs = false;
    for (const auto& in : inputs) {
        if (&in.tape() != this) {
            throw ConfigError("operands recorded on different tapes");
        }
        needs = needs || nodes_[in.id()].requires_grad;
    }
    Node n;
    n.value = std::move(value);
    if (record_ && needs) {
        n.requires_grad = true;
        n.backward = std::move(fn);
    }
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

template <typename T>
auto Tape<T>::in_grad(std::size_t id) -> T*
{
    auto& n = nodes_[id];
    if (!n.requires_grad) {
        return nullptr;
    }
    if (n.grad.size() != n.value.size()) {
        n.grad.assign(n.value.size(), T{0});
    }
    return n.grad.data();
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss)
{
    if (&loss.tape() != this) {
        throw ConfigError("backward: loss belongs to a different tape");
    }
    if (loss.value().size() != 1) {
        throw DimensionError("backward: loss must be scalar, got shape "
                             + to_string(loss.shape()));
    }
    for (auto& n : nodes_) {
        if (!n.accumulates) {
            n.grad.clear();
        }
    }
    if (T* g = in_grad(loss.id())) {
        g[0] += T{1};
    }
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
        auto& n = nodes_[id];
        if (n.backward && !n.grad.empty()) {
            n.backward(*this, id);
        }
    }
    for (auto& n : nodes_) {
        if (n.param == nullptr) {
            continue;
        }
        auto& pg = n.param->grad;
        if (pg.size() != n.value.size()) {
            pg.assign(n.value.size(), T{0});
        }
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            pg[i] += n.grad[i];
        }
    }
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
auto linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) -> Var<T>
{
    check_same_tape(x, weight);
    check_same_tape(x, bias);
    const auto& xv = x.value();
    const auto& wv = weight.value();
    const auto& bv = bias.value();
    if (xv.rank() == 0 || wv.rank() != 2 || wv.dim(0) != xv.cols() || bv.size() != wv.dim(1)) {
        throw DimensionError("linear: input " + to_string(xv.shape) + " incompatible with weight "
                             + to_string(wv.shape) + " and bias " + to_string(bv.shape));
    }
    const auto rows = static_cast<Eigen::Index>(xv.rows());
    const auto din = static_cast<Eigen::Index>(wv.dim(0));
    const auto dout = static_cast<Eigen::Index>(wv.dim(1));

    Shape out_shape = xv.shape;
    out_shape.back() = wv.dim(1);
    Tensor<T> out{out_shape};
    {
        ConstMap<T> X(xv.data.data(), rows, din);
        ConstMap<T> W(wv.data.data(), din, dout);
        Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bv.data.data(), dout);
        MutMap<T> Y(out.data.data(), rows, dout);
        Y.noalias() = X * W;
        Y.rowwise() += b;
    }

    const auto xi = x.id();
    const auto wi = weight.id();
    const auto bi = bias.id();
    return x.tape().record(std::move(out), {x, weight, bias},
                           [xi, wi, bi, rows, din, dout](Tape<T>& t, std::size_t self) {
                               ConstMap<T> G(t.out_grad(self).data(), rows, dout);
                               if (T* gx = t.in_grad(xi)) {
                                   ConstMap<T> W(t.value(wi).data.data(), din, dout);
                                   MutMap<T>(gx, rows, din).noalias() += G * W.transpose();
                               }
                               if (T* gw = t.in_grad(wi)) {
                                   ConstMap<T> X(t.value(xi).data.data(), rows, din);
                                   MutMap<T>(gw, din, dout).noalias() += X.transpose() * G;
                               }
                               if (T* gb = t.in_grad(bi)) {
                                   Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb, dout) +=
                                       G.colwise().sum();
                               }
                           });
}

template <typename T>
auto batched_matmul(const Var<T>& x, const Var<T>& m) -> Var<T>
{
    check_same_tape(x, m);
    const auto& xv = x.value();
    const auto& mv = m.value();
    if (xv.rank() != 3 || mv.rank() != 3 || xv.dim(0) != mv.dim(0) || xv.dim(2) != mv.dim(1)) {
        throw DimensionError("batched_matmul: " + to_string(xv.shape) + " x "
                             + to_string(mv.shape));
    }
    const auto batch = xv.dim(0);
    const auto n = static_cast<Eigen::Index>(xv.dim(1));
    const auto a = static_cast<Eigen::Index>(xv.dim(2));
    const auto b = static_cast<Eigen::Index>(mv.dim(2));
    Tensor<T> out{{batch, xv.dim(1), mv.dim(2)}};
    for (std::size_t i = 0; i < batch; ++i) {
        ConstMap<T> X(xv.data.data() + i * n * a, n, a);
        ConstMap<T> M(mv.data.data() + i * a * b, a, b);
        MutMap<T>(out.data.data() + i * n * b, n, b).noalias() = X * M;
    }
    const auto xi = x.id();
    const auto mi = m.id();
    return x.tape().record(std::move(out), {x, m},
                           [xi, mi, batch, n, a, b](Tape<T>& t, std::size_t self) {
                               const T* g = t.out_grad(self).data();
                               T* gx = t.in_grad(xi);
                               T* gm = t.in_grad(mi);
                               const T* xd = t.value(xi).data.data();
                               const T* md = t.value(mi).data.data();
                               for (std::size_t i = 0; i < batch; ++i) {
                                   ConstMap<T> G(g + i * n * b, n, b);
                                   if (gx != nullptr) {
                                       ConstMap<T> M(md + i * a * b, a, b);
                                       MutMap<T>(gx + i * n * a, n, a).noalias() += G * M.transpose();
                                   }
                                   if (gm != nullptr) {
                                       ConstMap<T> X(xd + i * n * a, n, a);
                                       MutMap<T>(gm + i * a * b, a, b).noalias() += X.transpose() * G;
                                   }
                               }
                           });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
auto add(const Var<T>& a, const Var<T>& b) -> Var<T>
{
    check_same_shape("add", a, b);
    Tensor<T> out = a.value();
    const auto& bv = b.value().data;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data[i] += bv[i];
    }
    const auto ai = a.id();
    const auto bi = b.id();
    return a.tape().record(std::move(out), {a, b}, [ai, bi](Tape<T>& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        for (auto id : {ai, bi}) {
            if (T* gi = t.in_grad(id)) {
                for (std::size_t i = 0; i < g.size(); ++i) {
                    gi[i] += g[i];
                }
            }
        }
    });
}

template <typename T>
auto sub(const Var<T>& a, const Var<T>& b) -> Var<T>
{
    check_same_shape("sub", a, b);
    Tensor<T> out = a.value();
    const auto& bv = b.value().data;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data[i] -= bv[i];
    }
    const auto ai = a.id();
    const auto bi = b.id();
    return a.tape().record(std::move(out), {a, b}, [ai, bi](Tape<T>& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        if (T* ga = t.in_grad(ai)) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i];
            }
        }
        if (T* gb = t.in_grad(bi)) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                gb[i] -= g[i];
            }
        }
    });
}

template <typename T>
auto mul(const Var<T>& a, const Var<T>& b) -> Var<T>
{
    check_same_shape("mul", a, b);
    Tensor<T> out = a.value();
    const auto& bv = b.value().data;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data[i] *= bv[i];
    }
    const auto ai = a.id();
    const auto bi = b.id();
    return a.tape().record(std::move(out), {a, b}, [ai, bi](Tape<T>& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        if (T* ga = t.in_grad(ai)) {
            const auto& bv = t.value(bi).data;
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i] * bv[i];
            }
        }
        if (T* gb = t.in_grad(bi)) {
            const auto& av = t.value(ai).data;
            for (std::size_t i = 0; i < g.size(); ++i) {
                gb[i] += g[i] * av[i];
            }
        }
    });
}

template <typename T>
auto scale(const Var<T>& a, T factor) -> Var<T>
{
    Tensor<T> out = a.value();
    for (auto& v : out.data) {
        v *= factor;
    }
    const auto ai = a.id();
    return a.tape().record(std::move(out), {a}, [ai, factor](Tape<T>& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        if (T* ga = t.in_grad(ai)) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i] * factor;
            }
        }
    });
}

template <typename T>
auto sum(const Var<T>& x) -> Var<T>
{
    T total{0};
    for (auto v : x.value().data) {
        total += v;
    }
    const auto xi = x.id();
    return x.tape().record(Tensor<T>{{1}, {total}}, {x}, [xi](Tape<T>& t, std::size_t self) {
        const T g = t.out_grad(self)[0];
        if (T* gx = t.in_grad(xi)) {
            const auto n = t.value(xi).size();
            for (std::size_t i = 0; i < n; ++i) {
                gx[i] += g;
            }
        }
    });
}

template <typename T>
auto leaky_relu(const Var<T>& x, T slope) -> Var<T>
{
    if (!(slope > T{0} && slope < T{1})) {
        throw ConfigError("leaky_relu: slope must lie in (0, 1)");
    }
    Tensor<T> out = x.value();
    for (auto& v : out.data) {
        if (!(v > T{0})) {
            v *= slope;
        }
    }
    const auto xi = x.id();
    return x.tape().record(std::move(out), {x}, [xi, slope](Tape<T>& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        if (T* gx = t.in_grad(xi)) {
            const auto& xv = t.value(xi).data;
            for (std::size_t i = 0; i < g.size(); ++i) {
                gx[i] += xv[i] > T{0} ? g[i] : slope * g[i];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Batch normalisation

template <typename T>
auto batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                const BatchNormStats<T>& stats, BatchNormOptions options) -> Var<T>
{
    check_same_tape(x, gamma);
    check_same_tape(x, beta);
    const auto& xv = x.value();
    const std::size_t rows = xv.rows();
    const std::size_t channels = xv.cols();
    if (xv.rank() < 2 || gamma.value().size() != channels || beta.value().size() != channels) {
        throw DimensionError("batch_norm: input " + to_string(xv.shape) + " vs gamma "
                             + to_string(gamma.value().shape) + " / beta "
                             + to_string(beta.value().shape));
    }
    if (stats.running_mean == nullptr || stats.running_var == nullptr
        || stats.running_mean->value.size() != channels
        || stats.running_var->value.size() != channels) {
        throw DimensionError("batch_norm: running statistics missing or of wrong width");
    }
    Tape<T>& tape = x.tape();
    const bool training = tape.training();
    if (training && rows < 2) {
        throw ConfigError("batch_norm: training-mode statistics are unusable with a batch of "
                          + std::to_string(rows) + " (need at least 2 positions per channel)");
    }

    std::vector<T> mean(channels);
    std::vector<T> inv_std(channels);
    if (training) {
        std::vector<double> acc(channels, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* row = xv.data.data() + r * channels;
            for (std::size_t c = 0; c < channels; ++c) {
                acc[c] += static_cast<double>(row[c]);
            }
        }
        std::vector<double> mu(channels);
        for (std::size_t c = 0; c < channels; ++c) {
            mu[c] = acc[c] / static_cast<double>(rows);
            acc[c] = 0.0;
        }
        for (std::size_t r = 0; r < rows; ++r) {
            const T* row = xv.data.data() + r * channels;
            for (std::size_t c = 0; c < channels; ++c) {
                const double d = static_cast<double>(row[c]) - mu[c];
                acc[c] += d * d;
            }
        }
        auto& rm = stats.running_mean->value.data;
        auto& rv = stats.running_var->value.data;
        const double m = options.momentum;
        const double n = static_cast<double>(rows);
        for (std::size_t c = 0; c < channels; ++c) {
            const double var = acc[c] / n;
            mean[c] = static_cast<T>(mu[c]);
            inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + options.eps));
            rm[c] = static_cast<T>((1.0 - m) * static_cast<double>(rm[c]) + m * mu[c]);
            rv[c] = static_cast<T>((1.0 - m) * static_cast<double>(rv[c])
                                   + m * var * n / (n - 1.0));
        }
    } else {
        const auto& rm = stats.running_mean->value.data;
        const auto& rv = stats.running_var->value.data;
        for (std::size_t c = 0; c < channels; ++c) {
            mean[c] = rm[c];
            inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(rv[c]) + options.eps));
        }
    }

    const auto& gv = gamma.value().data;
    const auto& bv = beta.value().data;
    Tensor<T> out{xv.shape};
    std::vector<T> xhat(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t i = r * channels + c;
            xhat[i] = (xv.data[i] - mean[c]) * inv_std[c];
            out.data[i] = gv[c] * xhat[i] + bv[c];
        }
    }

    const auto xi = x.id();
    const auto gi = gamma.id();
    const auto bi = beta.id();
    return tape.record(
        std::move(out), {x, gamma, beta},
        [xi, gi, bi, rows, channels, training, xhat = std::move(xhat),
         inv_std = std::move(inv_std)](Tape<T>& t, std::size_t self) {
            const auto& g = t.out_grad(self);
            std::vector<T> dgamma(channels, T{0});
            std::vector<T> dbeta(channels, T{0});
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < channels; ++c) {
                    const std::size_t i = r * channels + c;
                    dgamma[c] += g[i] * xhat[i];
                    dbeta[c] += g[i];
                }
            }
            if (T* gx = t.in_grad(xi)) {
                const auto& gv = t.value(gi).data;
                const T n = static_cast<T>(rows);
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < channels; ++c) {
                        const std::size_t i = r * channels + c;
                        if (training) {
                            // d xhat summed terms are dbeta*gamma and dgamma*gamma.
                            gx[i] += gv[c] * inv_std[c] / n
                                     * (n * g[i] - dbeta[c] - xhat[i] * dgamma[c]);
                        } else {
                            gx[i] += gv[c] * inv_std[c] * g[i];
                        }
                    }
                }
            }
            if (T* gg = t.in_grad(gi)) {
                for (std::size_t c = 0; c < channels; ++c) {
                    gg[c] += dgamma[c];
                }
            }
            if (T* gb = t.in_grad(bi)) {
                for (std::size_t c = 0; c < channels; ++c) {
                    gb[c] += dbeta[c];
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
auto reduce_max(const Var<T>& x, std::size_t axis) -> Var<T>
{
    const auto& xv = x.value();
    const auto s = split_axis("reduce_max", xv.shape, axis);
    if (s.extent == 0) {
        throw DimensionError("reduce_max: empty axis " + std::to_string(axis));
    }
    Tensor<T> out{without_axis(xv.shape, axis)};
    std::vector<std::uint32_t> argmax(out.size());
    for (std::size_t o = 0; o < s.outer; ++o) {
        const T* base = xv.data.data() + o * s.extent * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) {
            std::uint32_t best = 0;
            T best_v = base[i];
            for (std::size_t e = 1; e < s.extent; ++e) {
                const T v = base[e * s.inner + i];
                if (v > best_v) {
                    best_v = v;
                    best = static_cast<std::uint32_t>(e);
                }
            }
            out.data[o * s.inner + i] = best_v;
            argmax[o * s.inner + i] = best;
        }
    }
    const auto xi = x.id();
    return x.tape().record(std::move(out), {x},
                           [xi, s, argmax = std::move(argmax)](Tape<T>& t, std::size_t self) {
                               const auto& g = t.out_grad(self);
                               T* gx = t.in_grad(xi);
                               if (gx == nullptr) {
                                   return;
                               }
                               for (std::size_t o = 0; o < s.outer; ++o) {
                                   for (std::size_t i = 0; i < s.inner; ++i) {
                                       const std::size_t k = o * s.inner + i;
                                       gx[(o * s.extent + argmax[k]) * s.inner + i] += g[k];
                                   }
                               }
                           });
}

template <typename T>
auto reduce_sum(const Var<T>& x, std::size_t axis) -> Var<T>
{
    const auto& xv = x.value();
    const auto s = split_axis("reduce_sum", xv.shape, axis);
    Tensor<T> out{without_axis(xv.shape, axis)};
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t e = 0; e < s.extent; ++e) {
            const T* src = xv.data.data() + (o * s.extent + e) * s.inner;
            T* dst = out.data.data() + o * s.inner;
            for (std::size_t i = 0; i < s.inner; ++i) {
                dst[i] += src[i];
            }
        }
    }
    const auto xi = x.id();
    return x.tape().record(std::move(out), {x}, [xi, s](Tape<T>& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        T* gx = t.in_grad(xi);
        if (gx == nullptr) {
            return;
        }
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t e = 0; e < s.extent; ++e) {
                T* dst = gx + (o * s.extent + e) * s.inner;
                const T* src = g.data() + o * s.inner;
                for (std::size_t i = 0; i < s.inner; ++i) {
                    dst[i] += src[i];
                }
            }
        }
    });
}

template <typename T>
auto reduce_mean(const Var<T>& x, std::size_t axis) -> Var<T>
{
    const auto s = split_axis("reduce_mean", x.shape(), axis);
    if (s.extent == 0) {
        throw DimensionError("reduce_mean: empty axis " + std::to_string(axis));
    }
    return scale(reduce_sum(x, axis), T{1} / static_cast<T>(s.extent));
}

template <typename T>
auto softmax(const Var<T>& x, std::size_t axis) -> Var<T>
{
    const auto& xv = x.value();
    const auto s = split_axis("softmax", xv.shape, axis);
    Tensor<T> out{xv.shape};
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.extent * s.inner + i;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t e = 0; e < s.extent; ++e) {
                mx = std::max(mx, xv.data[base + e * s.inner]);
            }
            T total{0};
            for (std::size_t e = 0; e < s.extent; ++e) {
                const T v = std::exp(xv.data[base + e * s.inner] - mx);
                out.data[base + e * s.inner] = v;
                total += v;
            }
            for (std::size_t e = 0; e < s.extent; ++e) {
                out.data[base + e * s.inner] /= total;
            }
        }
    }
    const auto xi = x.id();
    return x.tape().record(std::move(out), {x}, [xi, s](Tape<T>& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        T* gx = t.in_grad(xi);
        if (gx == nullptr) {
            return;
        }
        const auto& y = t.value(self).data;
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t i = 0; i < s.inner; ++i) {
                const std::size_t base = o * s.extent * s.inner + i;
                T dot{0};
                for (std::size_t e = 0; e < s.extent; ++e) {
                    dot += g[base + e * s.inner] * y[base + e * s.inner];
                }
                for (std::size_t e = 0; e < s.extent; ++e) {
                    const std::size_t k = base + e * s.inner;
                    gx[k] += y[k] * (g[k] - dot);
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Regularisation and loss

template <typename T>
auto dropout(const Var<T>& x, T p) -> Var<T>
{
    if (!(p >= T{0} && p < T{1})) {
        throw ConfigError("dropout: p must lie in [0, 1)");
    }
    Tape<T>& tape = x.tape();
    if (!tape.training() || p == T{0}) {
        return x;
    }
    const T keep_scale = T{1} / (T{1} - p);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::vector<T> mask(x.value().size());
    for (auto& m : mask) {
        m = uniform(tape.rng()) < static_cast<double>(p) ? T{0} : keep_scale;
    }
    Tensor<T> out = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data[i] *= mask[i];
    }
    const auto xi = x.id();
    return tape.record(std::move(out), {x},
                       [xi, mask = std::move(mask)](Tape<T>& t, std::size_t self) {
                           const auto& g = t.out_grad(self);
                           if (T* gx = t.in_grad(xi)) {
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                   gx[i] += g[i] * mask[i];
                               }
                           }
                       });
}

template <typename T>
auto cross_entropy(const Var<T>& logits, std::span<const int> labels) -> Var<T>
{
    const auto& lv = logits.value();
    if (lv.rank() != 2 || lv.dim(0) != labels.size() || lv.dim(0) == 0) {
        throw DimensionError("cross_entropy: logits " + to_string(lv.shape) + " vs "
                             + std::to_string(labels.size()) + " labels");
    }
    const std::size_t batch = lv.dim(0);
    const std::size_t classes = lv.dim(1);
    std::vector<T> probs(lv.size());
    std::vector<int> lab(labels.begin(), labels.end());
    double loss = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        if (lab[b] < 0 || static_cast<std::size_t>(lab[b]) >= classes) {
            throw ConfigError("cross_entropy: label " + std::to_string(lab[b]) + " at row "
                              + std::to_string(b) + " outside [0, " + std::to_string(classes)
                              + ")");
        }
        const T* row = lv.data.data() + b * classes;
        const T mx = *std::max_element(row, row + classes);
        T total{0};
        for (std::size_t c = 0; c < classes; ++c) {
            probs[b * classes + c] = std::exp(row[c] - mx);
            total += probs[b * classes + c];
        }
        for (std::size_t c = 0; c < classes; ++c) {
            probs[b * classes + c] /= total;
        }
        const T log_z = mx + std::log(total);
        loss += static_cast<double>(log_z - row[lab[b]]);
    }
    loss /= static_cast<double>(batch);

    const auto li = logits.id();
    return logits.tape().record(
        Tensor<T>{{1}, {static_cast<T>(loss)}}, {logits},
        [li, batch, classes, probs = std::move(probs), lab = std::move(lab)](Tape<T>& t,
                                                                             std::size_t self) {
            T* gl = t.in_grad(li);
            if (gl == nullptr) {
                return;
            }
            const T g = t.out_grad(self)[0] / static_cast<T>(batch);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t c = 0; c < classes; ++c) {
                    const T onehot = static_cast<int>(c) == lab[b] ? T{1} : T{0};
                    gl[b * classes + c] += g * (probs[b * classes + c] - onehot);
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Data movement

template <typename T>
auto reshape(const Var<T>& x, Shape shape) -> Var<T>
{
    if (numel(shape) != x.value().size()) {
        throw DimensionError("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
    }
    Tensor<T> out{std::move(shape), x.value().data};
    const auto xi = x.id();
    return x.tape().record(std::move(out), {x}, [xi](Tape<T>& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        if (T* gx = t.in_grad(xi)) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                gx[i] += g[i];
            }
        }
    });
}

template <typename T>
auto gather_rows(const Var<T>& x, std::span<const std::size_t> indices, Shape out_shape) -> Var<T>
{
    const auto& xv = x.value();
    const std::size_t width = xv.cols();
    const std::size_t rows = xv.rows();
    if (out_shape.empty() || out_shape.back() != width
        || numel(out_shape) != indices.size() * width) {
        throw DimensionError("gather_rows: " + std::to_string(indices.size())
                             + " rows of width " + std::to_string(width) + " cannot form "
                             + to_string(out_shape));
    }
    Tensor<T> out{std::move(out_shape)};
    for (std::size_t r = 0; r < indices.size(); ++r) {
        if (indices[r] >= rows) {
            throw ConfigError("gather_rows: index " + std::to_string(indices[r])
                              + " out of range for " + std::to_string(rows) + " rows");
        }
        std::copy_n(xv.data.data() + indices[r] * width, width, out.data.data() + r * width);
    }
    const auto xi = x.id();
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    return x.tape().record(std::move(out), {x},
                           [xi, width, idx = std::move(idx)](Tape<T>& t, std::size_t self) {
                               const auto& g = t.out_grad(self);
                               T* gx = t.in_grad(xi);
                               if (gx == nullptr) {
                                   return;
                               }
                               for (std::size_t r = 0; r < idx.size(); ++r) {
                                   T* dst = gx + idx[r] * width;
                                   const T* src = g.data() + r * width;
                                   for (std::size_t c = 0; c < width; ++c) {
                                       dst[c] += src[c];
                                   }
                               }
                           });
}

template <typename T>
auto concat_last(const std::vector<Var<T>>& parts) -> Var<T>
{
    if (parts.empty()) {
        throw DimensionError("concat_last: no inputs");
    }
    const auto& first = parts.front().value();
    const Shape lead(first.shape.begin(), first.shape.end() - 1);
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        check_same_tape(parts.front(), p);
        const auto& s = p.shape();
        if (s.size() != first.rank() || !std::equal(lead.begin(), lead.end(), s.begin())) {
            throw DimensionError("concat_last: " + to_string(first.shape) + " vs "
                                 + to_string(s));
        }
        widths.push_back(s.back());
        total += s.back();
    }
    const std::size_t rows = first.rows();
    Shape out_shape = first.shape;
    out_shape.back() = total;
    Tensor<T> out{out_shape};
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& pv = parts[k].value().data;
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(pv.data() + r * widths[k], widths[k], out.data.data() + r * total + offset);
        }
        offset += widths[k];
    }
    std::vector<std::size_t> ids;
    for (const auto& p : parts) {
        ids.push_back(p.id());
    }
    return parts.front().tape().record(
        std::move(out), parts,
        [ids = std::move(ids), widths = std::move(widths), rows, total](Tape<T>& t,
                                                                        std::size_t self) {
            const auto& g = t.out_grad(self);
            std::size_t off = 0;
            for (std::size_t k = 0; k < ids.size(); ++k) {
                if (T* gp = t.in_grad(ids[k])) {
                    for (std::size_t r = 0; r < rows; ++r) {
                        const T* src = g.data() + r * total + off;
                        T* dst = gp + r * widths[k];
                        for (std::size_t c = 0; c < widths[k]; ++c) {
                            dst[c] += src[c];
                        }
                    }
                }
                off += widths[k];
            }
        });
}

template <typename T>
auto slice_last(const Var<T>& x, std::size_t begin, std::size_t end) -> Var<T>
{
    const auto& xv = x.value();
    const std::size_t width = xv.cols();
    if (xv.rank() == 0 || begin >= end || end > width) {
        throw DimensionError("slice_last: [" + std::to_string(begin) + ", " + std::to_string(end)
                             + ") of " + to_string(xv.shape));
    }
    const std::size_t rows = xv.rows();
    const std::size_t w = end - begin;
    Shape shape = xv.shape;
    shape.back() = w;
    Tensor<T> out{shape};
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(xv.data.data() + r * width + begin, w, out.data.data() + r * w);
    }
    const auto xi = x.id();
    return x.tape().record(std::move(out), {x},
                           [xi, rows, width, begin, w](Tape<T>& t, std::size_t self) {
                               const auto& g = t.out_grad(self);
                               if (T* gx = t.in_grad(xi)) {
                                   for (std::size_t r = 0; r < rows; ++r) {
                                       for (std::size_t c = 0; c < w; ++c) {
                                           gx[r * width + begin + c] += g[r * w + c];
                                       }
                                   }
                               }
                           });
}

template <typename T>
auto broadcast_rows(const Var<T>& x, std::size_t n) -> Var<T>
{
    const auto& xv = x.value();
    if (xv.rank() != 2) {
        throw DimensionError("broadcast_rows: expected [B, C], got " + to_string(xv.shape));
    }
    const std::size_t batch = xv.dim(0);
    const std::size_t width = xv.dim(1);
    Tensor<T> out{{batch, n, width}};
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < n; ++i) {
            std::copy_n(xv.data.data() + b * width, width,
                        out.data.data() + (b * n + i) * width);
        }
    }
    const auto xi = x.id();
    return x.tape().record(std::move(out), {x},
                           [xi, batch, n, width](Tape<T>& t, std::size_t self) {
                               const auto& g = t.out_grad(self);
                               T* gx = t.in_grad(xi);
                               if (gx == nullptr) {
                                   return;
                               }
                               for (std::size_t b = 0; b < batch; ++b) {
                                   for (std::size_t i = 0; i < n; ++i) {
                                       for (std::size_t c = 0; c < width; ++c) {
                                           gx[b * width + c] += g[(b * n + i) * width + c];
                                       }
                                   }
                               }
                           });
}

template <typename T>
auto norm_last(const Var<T>& x) -> Var<T>
{
    const auto& xv = x.value();
    const std::size_t rows = xv.rows();
    const std::size_t width = xv.cols();
    Shape shape = xv.shape;
    shape.back() = 1;
    Tensor<T> out{shape};
    for (std::size_t r = 0; r < rows; ++r) {
        T acc{0};
        for (std::size_t c = 0; c < width; ++c) {
            const T v = xv.data[r * width + c];
            acc += v * v;
        }
        out.data[r] = std::sqrt(acc);
    }
    const auto xi = x.id();
    return x.tape().record(std::move(out), {x}, [xi, rows, width](Tape<T>& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        T* gx = t.in_grad(xi);
        if (gx == nullptr) {
            return;
        }
        const auto& xv = t.value(xi).data;
        const auto& norms = t.value(self).data;
        for (std::size_t r = 0; r < rows; ++r) {
            if (norms[r] == T{0}) {
                continue;
            }
            const T s = g[r] / norms[r];
            for (std::size_t c = 0; c < width; ++c) {
                gx[r * width + c] += s * xv[r * width + c];
            }
        }
    });
}

template <typename T>
auto mul_broadcast_last(const Var<T>& x, const Var<T>& w) -> Var<T>
{
    check_same_tape(x, w);
    const auto& xv = x.value();
    const auto& wv = w.value();
    const Shape lead(xv.shape.begin(), xv.shape.end() - 1);
    if (wv.rank() != xv.rank() || wv.cols() != 1
        || !std::equal(lead.begin(), lead.end(), wv.shape.begin())) {
        throw DimensionError("mul_broadcast_last: " + to_string(xv.shape) + " vs "
                             + to_string(wv.shape));
    }
    const std::size_t rows = xv.rows();
    const std::size_t width = xv.cols();
    Tensor<T> out = xv;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < width; ++c) {
            out.data[r * width + c] *= wv.data[r];
        }
    }
    const auto xi = x.id();
    const auto wi = w.id();
    return x.tape().record(std::move(out), {x, w},
                           [xi, wi, rows, width](Tape<T>& t, std::size_t self) {
                               const auto& g = t.out_grad(self);
                               if (T* gx = t.in_grad(xi)) {
                                   const auto& wv = t.value(wi).data;
                                   for (std::size_t r = 0; r < rows; ++r) {
                                       for (std::size_t c = 0; c < width; ++c) {
                                           gx[r * width + c] += g[r * width + c] * wv[r];
                                       }
                                   }
                               }
                               if (T* gw = t.in_grad(wi)) {
                                   const auto& xv = t.value(xi).data;
                                   for (std::size_t r = 0; r < rows; ++r) {
                                       T acc{0};
                                       for (std::size_t c = 0; c < width; ++c) {
                                           acc += g[r * width + c] * xv[r * width + c];
                                       }
                                       gw[r] += acc;
                                   }
                               }
                           });
}

// ---------------------------------------------------------------------------

#define DFA_INSTANTIATE(T)                                                                       \
    template class Tape<T>;                                                                      \
    template void require_finite<T>(std::span<const T>, const char*);                           \
    template auto linear<T>(const Var<T>&, const Var<T>&, const Var<T>&) -> Var<T>;              \
    template auto batched_matmul<T>(const Var<T>&, const Var<T>&) -> Var<T>;                     \
    template auto add<T>(const Var<T>&, const Var<T>&) -> Var<T>;                                \
    template auto sub<T>(const Var<T>&, const Var<T>&) -> Var<T>;                                \
    template auto mul<T>(const Var<T>&, const Var<T>&) -> Var<T>;                                \
    template auto scale<T>(const Var<T>&, T) -> Var<T>;                                          \
    template auto sum<T>(const Var<T>&) -> Var<T>;                                               \
    template auto leaky_relu<T>(const Var<T>&, T) -> Var<T>;                                     \
    template auto batch_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&,                     \
                                const BatchNormStats<T>&, BatchNormOptions) -> Var<T>;           \
    template auto reduce_max<T>(const Var<T>&, std::size_t) -> Var<T>;                           \
    template auto reduce_sum<T>(const Var<T>&, std::size_t) -> Var<T>;                           \
    template auto reduce_mean<T>(const Var<T>&, std::size_t) -> Var<T>;                          \
    template auto softmax<T>(const Var<T>&, std::size_t) -> Var<T>;                              \
    template auto dropout<T>(const Var<T>&, T) -> Var<T>;                                        \
    template auto cross_entropy<T>(const Var<T>&, std::span<const int>) -> Var<T>;               \
    template auto reshape<T>(const Var<T>&, Shape) -> Var<T>;                                    \
    template auto gather_rows<T>(const Var<T>&, std::span<const std::size_t>, Shape) -> Var<T>;  \
    template auto concat_last<T>(const std::vector<Var<T>>&) -> Var<T>;                          \
    template auto slice_last<T>(const Var<T>&, std::size_t, std::size_t) -> Var<T>;              \
    template auto broadcast_rows<T>(const Var<T>&, std::size_t) -> Var<T>;                       \
    template auto norm_last<T>(const Var<T>&) -> Var<T>;                                         \
    template auto mul_broadcast_last<T>(const Var<T>&, const Var<T>&) -> Var<T>;

DFA_INSTANTIATE(float)
DFA_INSTANTIATE(double)

#undef DFA_INSTANTIATE

} // namespace dfa
