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

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dfa {

struct PointCloud
{
    std::vector<double> coords; // N x 3, row-major
    std::vector<double> extra;  // N x extra_dims
    std::size_t extra_dims = 0;
    std::optional<int> class_label;
    std::vector<int> part_labels; // empty or N

    [[nodiscard]] auto size() const -> std::size_t { return coords.size() / 3; }
    [[nodiscard]] auto dims() const -> std::size_t { return 3 + extra_dims; }
    auto operator==(const PointCloud&) const -> bool = default;
};

using Dataset = std::vector<PointCloud>;

struct Mesh
{
    std::vector<std::array<double, 3>> vertices;
    std::vector<std::array<std::size_t, 3>> faces;
    auto operator==(const Mesh&) const -> bool = default;
};

class OffParseError : public ParseError
{
public:
    enum class Kind { missing_header, bad_counts, bad_vertex, bad_face, index_out_of_range, truncated };

    OffParseError(Kind kind, const std::string& what, std::size_t line)
        : ParseError(what, line), kind_{kind}
    {}
    [[nodiscard]] auto kind() const -> Kind { return kind_; }

private:
    Kind kind_;
};

// Faces with more than three vertices are fan-triangulated.
auto parse_off(std::string_view text) -> Mesh;
auto read_off(const std::string& path) -> Mesh;
auto serialize_off(const Mesh& mesh) -> std::string;

auto triangle_area(const Mesh& mesh, std::size_t face) -> double;

// Centroid to the origin, then scale so the farthest point has norm 1.
// A cloud whose points all coincide collapses to the origin.
void normalize(PointCloud& cloud);

// Area-weighted triangle choice, square-root barycentric point placement.
// Throws DataError when every triangle is degenerate.
auto sample_surface_uniform(const Mesh& mesh, std::size_t n, std::mt19937_64& rng,
                            bool normalized = true) -> PointCloud;

inline const std::vector<std::string> synthetic_classes{"sphere", "cube", "torus", "plane",
                                                        "lollipop"};

struct SyntheticSpec
{
    std::vector<std::string> classes{"sphere", "cube", "torus", "plane"};
    std::size_t per_class = 16;
    std::size_t points = 256;
    double noise = 0.01;
    std::uint64_t seed = 1;

    void validate() const;
    // Flat key=value lines: classes=a,b,c per_class= points= noise= seed=.
    // Blank lines and '#' comments are ignored.
    static auto parse(const std::string& text) -> SyntheticSpec;
    [[nodiscard]] auto to_text() const -> std::string;
};

// Clouds are emitted class by class; class_label is the index into
// spec.classes. Lollipops also carry part labels (0 head, 1 stick).
// Coordinates are normalized and then rounded to float precision.
auto generate_synthetic_set(const SyntheticSpec& spec, std::mt19937_64& rng) -> Dataset;
auto generate_synthetic_set(const SyntheticSpec& spec) -> Dataset;

struct AugmentPolicy
{
    double scale_low = 2.0 / 3.0;
    double scale_high = 1.5;
    std::array<double, 3> shift_low{-0.2, -0.2, -0.2};
    std::array<double, 3> shift_high{0.2, 0.2, 0.2};
    double jitter_sigma = 0.01;
    double jitter_clip = 0.05;

    static auto identity() -> AugmentPolicy;
    void validate() const;
};

// Per-axis scale, then per-axis shift, then clipped per-coordinate jitter.
// A range whose ends coincide uses that value without drawing.
auto augment(const PointCloud& cloud, std::mt19937_64& rng, const AugmentPolicy& policy)
    -> PointCloud;

enum class LabelKind { none, cls, point, cls_point };

auto to_string(LabelKind kind) -> std::string;
// Throws DataError for an inhomogeneous batch.
auto label_kind(std::span<const PointCloud> batch) -> LabelKind;

// PCB container. Header line:
//   PCB1 count=<c> points=<n> dims=<d> labels=<none|class|point|class+point>
// then c*n*d float32 values, then int32 class labels (c) and/or point
// labels (c*n), all little-endian. Coordinates are rounded to float.
void write_pcb(std::ostream& out, std::span<const PointCloud> batch);
auto read_pcb(std::istream& in) -> Dataset;
void write_pcb(const std::string& path, std::span<const PointCloud> batch);
auto read_pcb(const std::string& path) -> Dataset;

// Random subset of n points (without replacement, original order kept),
// with extra channels and part labels carried along. Throws DataError if
// the cloud has fewer than n points.
auto select_points(const PointCloud& cloud, std::size_t n, std::mt19937_64& rng) -> PointCloud;

// Seeded split into (train, validation) with round(fraction * size)
// validation clouds.
auto split_validation(const Dataset& data, double fraction, std::uint64_t seed)
    -> std::pair<Dataset, Dataset>;

} // namespace dfa
