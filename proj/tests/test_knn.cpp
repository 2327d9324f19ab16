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

#include "dfa/knn.hpp"

#include "support.hpp"

#include "doctest.h"

#include <limits>
#include <set>

using namespace dfa;
using dfa::test::uniform;
using D = double;

namespace {

auto graph_rows(const NeighborGraph& g) -> std::vector<std::vector<std::size_t>>
{
    std::vector<std::vector<std::size_t>> rows;
    for (std::size_t i = 0; i < g.points; ++i) {
        rows.emplace_back(g.row(i).begin(), g.row(i).end());
    }
    return rows;
}

auto knn(const Tensor<D>& f, std::size_t k) -> NeighborGraph
{
    return knn_select(pairwise_sq_dist(f), k);
}

} // namespace

TEST_CASE("pairwise squared distances")
{
    const auto d = pairwise_sq_dist(Tensor<D>{{2, 1}, {0, 3}});
    CHECK(d.data == std::vector<D>{0, 9, 9, 0});

    std::mt19937_64 rng{1};
    const auto f = uniform({32, 8}, rng, -3.0, 3.0);
    const auto dist = pairwise_sq_dist(f);
    const auto rows = test::rows_of(f);
    for (std::size_t i = 0; i < 32; ++i) {
        CHECK(dist[i * 32 + i] == 0.0);
        for (std::size_t j = 0; j < 32; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < 8; ++c) {
                s += (rows[i][c] - rows[j][c]) * (rows[i][c] - rows[j][c]);
            }
            CHECK(dist[i * 32 + j] == doctest::Approx(s).epsilon(1e-9));
            CHECK(dist[i * 32 + j] == dist[j * 32 + i]);
        }
    }
}

TEST_CASE("non-finite features are rejected with their position")
{
    Tensor<D> f{{3, 2}};
    f[5] = std::numeric_limits<D>::infinity();
    try {
        (void)pairwise_sq_dist(f);
        FAIL("expected a numeric error");
    } catch (const NumericError& e) {
        CHECK(std::string{e.what()}.find("point 2") != std::string::npos);
    }
}

TEST_CASE("knn_select examples")
{
    const auto g = knn(Tensor<D>{{3, 1}, {0, 1, 10}}, 2);
    CHECK(graph_rows(g) == std::vector<std::vector<std::size_t>>{{0, 1}, {1, 0}, {2, 1}});
    CHECK(graph_rows(g) == test::naive_knn({{0}, {1}, {10}}, 2));

    std::mt19937_64 rng{2};
    const auto any = knn(uniform({7, 3}, rng), 1);
    for (std::size_t i = 0; i < 7; ++i) {
        CHECK(graph_rows(any)[i] == std::vector<std::size_t>{i});
    }

    // A and A' coincide; each picks the other, the far point picks the
    // lower index of the tied pair.
    const Tensor<D> dup{{3, 2}, {0.5, 0.5, 0.5, 0.5, 4, 4}};
    const auto tied = knn(dup, 2);
    CHECK(graph_rows(tied) == std::vector<std::vector<std::size_t>>{{0, 1}, {1, 0}, {2, 0}});
    CHECK(knn(dup, 2) == tied);
}

TEST_CASE("k outside [1, N] is a configuration error carrying both values")
{
    const auto d = pairwise_sq_dist(Tensor<D>{{3, 1}, {0, 1, 2}});
    try {
        (void)knn_select(d, 4);
        FAIL("expected a configuration error");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find('4') != std::string::npos);
        CHECK(msg.find('3') != std::string::npos);
    }
    CHECK_THROWS_AS(knn_select(d, 0), ConfigError);
}

TEST_CASE("graph invariants on random inputs")
{
    std::mt19937_64 rng{3};
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 5 + static_cast<std::size_t>(trial);
        const std::size_t k = 1 + static_cast<std::size_t>(trial) % n;
        auto f = uniform({n, 4}, rng);
        // Force ties by duplicating a few rows.
        std::copy_n(f.data.begin(), 4, f.data.begin() + 8);
        const auto dist = pairwise_sq_dist(f);
        const auto g = knn_select(dist, k);
        for (std::size_t i = 0; i < n; ++i) {
            const auto row = g.row(i);
            CHECK(row[0] == i);
            const std::set<std::size_t> chosen(row.begin(), row.end());
            CHECK(chosen.size() == k);
            for (std::size_t m = 1; m < k; ++m) {
                const std::size_t j = row[m];
                CHECK(j < n);
                for (std::size_t u = 0; u < n; ++u) {
                    if (chosen.contains(u)) {
                        continue;
                    }
                    const bool before = dist[i * n + j] < dist[i * n + u]
                                        || (dist[i * n + j] == dist[i * n + u] && j < u);
                    CHECK(before);
                }
            }
        }
        CHECK(graph_rows(g) == test::naive_knn(test::rows_of(f), k));
        CHECK(knn_select(pairwise_sq_dist(f), k) == g);
    }
}

TEST_CASE("permuting the points relabels the graph")
{
    std::mt19937_64 rng{4};
    Tensor<D> f;
    do {
        f = uniform({12, 3}, rng);
    } while (!test::distinct_distances(f, 1e-9));
    const auto perm = test::random_permutation(12, rng);
    const auto g = knn(f, 4);
    const auto gp = knn(test::permute_rows(f, perm), 4);
    std::vector<std::size_t> inverse(12);
    for (std::size_t p = 0; p < 12; ++p) {
        inverse[perm[p]] = p;
    }
    for (std::size_t p = 0; p < 12; ++p) {
        for (std::size_t m = 0; m < 4; ++m) {
            CHECK(gp.row(p)[m] == inverse[g.row(perm[p])[m]]);
        }
    }
}

TEST_CASE("feature graph equals spatial graph on coordinates")
{
    std::mt19937_64 rng{5};
    const auto x = uniform({2, 16, 3}, rng);
    const auto feat = build_graphs(x, 6, GraphDomain::feature);
    const auto spat = build_graphs(x, 6, GraphDomain::spatial);
    REQUIRE(feat.size() == 2);
    for (std::size_t b = 0; b < 2; ++b) {
        CHECK(feat[b].indices == spat[b].indices);
    }
}

TEST_CASE("graphs follow the features of each layer")
{
    // Coordinates on a line: 0, 1, 3. As coordinates, point 0's nearest
    // other point is 1. A second-layer feature map that moves point 2
    // next to point 0 must change that row.
    const Tensor<D> layer1{{3, 1}, {0, 1, 3}};
    const Tensor<D> layer2{{3, 2}, {0, 0, 5, 5, 0.1, 0}};
    CHECK(knn(layer1, 2).row(0)[1] == 1);
    CHECK(knn(layer2, 2).row(0)[1] == 2);
}

TEST_CASE("gather_neighbors")
{
    std::mt19937_64 rng{6};
    const auto f = uniform({1, 6, 4}, rng);
    const auto self = build_graphs(f, 1);
    Tape<D> t;
    auto out = gather_neighbors(t.constant(f), self);
    CHECK(out.shape() == Shape{1, 6, 1, 4});
    CHECK(out.value().data == f.data);

    const auto graphs = build_graphs(f, 3);
    auto v = t.variable(f);
    auto g = gather_neighbors(v, graphs);
    // Subtracting the centre reproduces f_j - f_i with a zero self row.
    for (std::size_t i = 0; i < 6; ++i) {
        for (std::size_t m = 0; m < 3; ++m) {
            const std::size_t j = graphs[0].row(i)[m];
            for (std::size_t c = 0; c < 4; ++c) {
                const double diff = g.value()[(i * 3 + m) * 4 + c] - f[i * 4 + c];
                CHECK(diff == f[j * 4 + c] - f[i * 4 + c]);
                if (m == 0) {
                    CHECK(diff == 0.0);
                }
            }
        }
    }
    t.backward(sum(g));
    std::vector<double> in_degree(6, 0.0);
    for (std::size_t idx : graphs[0].indices) {
        in_degree[idx] += 1.0;
    }
    for (std::size_t j = 0; j < 6; ++j) {
        for (std::size_t c = 0; c < 4; ++c) {
            CHECK(v.grad()[j * 4 + c] == in_degree[j]);
        }
    }
}

TEST_CASE("gather_neighbors rejects a graph that does not fit")
{
    Tape<D> t;
    NeighborGraph bad{3, 1, GraphDomain::feature, {0, 1, 7}};
    CHECK_THROWS(gather_neighbors(t.constant(Tensor<D>{{1, 3, 2}}), {bad}));
}
