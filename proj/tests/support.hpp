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

// Helpers shared by the test programs.

#pragma once

#include "dfa/knn.hpp"
#include "dfa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

namespace dfa::test {

template <typename T = double>
auto uniform(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) -> Tensor<T>
{
    Tensor<T> t{std::move(shape)};
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : t.data) {
        v = static_cast<T>(u(rng));
    }
    return t;
}

template <typename T>
auto cast(const Tensor<double>& t) -> Tensor<T>
{
    Tensor<T> out{t.shape};
    std::transform(t.data.begin(), t.data.end(), out.data.begin(),
                   [](double v) { return static_cast<T>(v); });
    return out;
}

inline auto max_abs_diff(std::span<const double> a, std::span<const double> b) -> double
{
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

// Reference kNN: sort every other point by (squared distance, index) and
// keep the self-loop first. Independent of the library's selection code.
inline auto naive_knn(const std::vector<std::vector<double>>& f, std::size_t k)
    -> std::vector<std::vector<std::size_t>>
{
    const std::size_t n = f.size();
    std::vector<std::vector<std::size_t>> rows(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::pair<double, std::size_t>> cand;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) {
                continue;
            }
            double d = 0.0;
            for (std::size_t c = 0; c < f[i].size(); ++c) {
                d += (f[i][c] - f[j][c]) * (f[i][c] - f[j][c]);
            }
            cand.emplace_back(d, j);
        }
        std::sort(cand.begin(), cand.end());
        rows[i].push_back(i);
        for (std::size_t m = 0; m + 1 < k; ++m) {
            rows[i].push_back(cand[m].second);
        }
    }
    return rows;
}

inline auto rows_of(const Tensor<double>& t) -> std::vector<std::vector<double>>
{
    std::vector<std::vector<double>> rows(t.rows());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        rows[r].assign(t.data.begin() + static_cast<std::ptrdiff_t>(r * t.cols()),
                       t.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * t.cols()));
    }
    return rows;
}

// True when every pair of rows is a distinct distance apart (and apart
// by more than `gap` from every other pair distance).
inline auto distinct_distances(const Tensor<double>& pts, double gap) -> bool
{
    const auto rows = rows_of(pts);
    std::vector<double> d;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = i + 1; j < rows.size(); ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < rows[i].size(); ++c) {
                s += (rows[i][c] - rows[j][c]) * (rows[i][c] - rows[j][c]);
            }
            d.push_back(s);
        }
    }
    std::sort(d.begin(), d.end());
    for (std::size_t i = 1; i < d.size(); ++i) {
        if (d[i] - d[i - 1] < gap) {
            return false;
        }
    }
    return true;
}

// Applies a point permutation to a [N, C] (or [B=1, N, C]) tensor:
// out row p = in row perm[p].
template <typename T>
auto permute_rows(const Tensor<T>& t, const std::vector<std::size_t>& perm) -> Tensor<T>
{
    Tensor<T> out{t.shape};
    const std::size_t c = t.cols();
    for (std::size_t p = 0; p < perm.size(); ++p) {
        std::copy_n(t.data.begin() + static_cast<std::ptrdiff_t>(perm[p] * c), c,
                    out.data.begin() + static_cast<std::ptrdiff_t>(p * c));
    }
    return out;
}

inline auto random_permutation(std::size_t n, std::mt19937_64& rng) -> std::vector<std::size_t>
{
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    std::shuffle(p.begin(), p.end(), rng);
    return p;
}

} // namespace dfa::test
