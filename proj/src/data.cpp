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

#include "dfa/data.hpp"

#include "dfa/binary_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

namespace dfa {

namespace {

auto split_ws(std::string_view s) -> std::vector<std::string_view>
{
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) {
            ++i;
        }
        std::size_t j = i;
        while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) {
            ++j;
        }
        if (j > i) {
            out.push_back(s.substr(i, j - i));
        }
        i = j;
    }
    return out;
}

template <typename N>
auto parse_number(std::string_view tok, N& out) -> bool
{
    const auto* end = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(tok.data(), end, out);
    return ec == std::errc{} && ptr == end;
}

// Content lines of an OFF file with comments stripped and blanks skipped.
class OffLines
{
public:
    explicit OffLines(std::string_view text) : text_{text} {}

    // False at end of input; `line` receives the 1-based line number.
    auto next(std::string_view& content, std::size_t& line) -> bool
    {
        while (pos_ < text_.size()) {
            auto nl = text_.find('\n', pos_);
            if (nl == std::string_view::npos) {
                nl = text_.size();
            }
            auto s = text_.substr(pos_, nl - pos_);
            pos_ = nl + 1;
            ++line_;
            if (auto hash = s.find('#'); hash != std::string_view::npos) {
                s = s.substr(0, hash);
            }
            if (!split_ws(s).empty()) {
                content = s;
                line = line_;
                return true;
            }
        }
        line = line_ + 1;
        return false;
    }

private:
    std::string_view text_;
    std::size_t pos_ = 0;
    std::size_t line_ = 0;
};

using Kind = OffParseError::Kind;

[[noreturn]] void off_fail(Kind kind, const std::string& what, std::size_t line)
{
    throw OffParseError(kind, "OFF line " + std::to_string(line) + ": " + what, line);
}

auto format_double(double v) -> std::string
{
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return {buf, ptr};
}

void add_noise(std::array<double, 3>& p, double sigma, std::mt19937_64& rng)
{
    if (sigma == 0) {
        return;
    }
    std::normal_distribution<double> gauss(0.0, sigma);
    std::array<double, 3> e{gauss(rng), gauss(rng), gauss(rng)};
    const double len = std::sqrt(e[0] * e[0] + e[1] * e[1] + e[2] * e[2]);
    const double cap = 3 * sigma;
    const double f = len > cap ? cap / len : 1.0;
    for (int a = 0; a < 3; ++a) {
        p[a] += e[a] * f;
    }
}

auto unit_direction(std::mt19937_64& rng) -> std::array<double, 3>
{
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (;;) {
        std::array<double, 3> d{gauss(rng), gauss(rng), gauss(rng)};
        const double n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
        if (n > 1e-12) {
            return {d[0] / n, d[1] / n, d[2] / n};
        }
    }
}

struct ShapePoint
{
    std::array<double, 3> p;
    int part = 0;
};

auto sample_shape(const std::string& shape, std::mt19937_64& rng) -> ShapePoint
{
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::uniform_real_distribution<double> sym(-1.0, 1.0);
    if (shape == "sphere") {
        return {unit_direction(rng)};
    }
    if (shape == "cube") {
        const auto face = std::uniform_int_distribution<int>(0, 5)(rng);
        const int axis = face / 2;
        std::array<double, 3> p{};
        p[axis] = face % 2 == 0 ? -1.0 : 1.0;
        p[(axis + 1) % 3] = sym(rng);
        p[(axis + 2) % 3] = sym(rng);
        return {p};
    }
    if (shape == "torus") {
        constexpr double big = 1.0;
        constexpr double small = 0.35;
        double theta = 0;
        do {
            theta = 2 * std::numbers::pi * u01(rng);
        } while (u01(rng) * (big + small) > big + small * std::cos(theta));
        const double phi = 2 * std::numbers::pi * u01(rng);
        const double ring = big + small * std::cos(theta);
        return {{ring * std::cos(phi), ring * std::sin(phi), small * std::sin(theta)}};
    }
    if (shape == "plane") {
        const double x = sym(rng);
        return {{x, sym(rng), 0.0}};
    }
    if (shape == "lollipop") {
        // Head: sphere of radius 0.5 at z = 1. Stick: open cylinder of
        // radius 0.1 from z = -1 up to the bottom of the head.
        constexpr double head_r = 0.5;
        constexpr double stick_r = 0.1;
        constexpr double stick_len = 1.5;
        const double head_area = 4 * std::numbers::pi * head_r * head_r;
        const double stick_area = 2 * std::numbers::pi * stick_r * stick_len;
        if (u01(rng) * (head_area + stick_area) < head_area) {
            auto d = unit_direction(rng);
            return {{head_r * d[0], head_r * d[1], 1.0 + head_r * d[2]}, 0};
        }
        const double phi = 2 * std::numbers::pi * u01(rng);
        const double z = -1.0 + stick_len * u01(rng);
        return {{stick_r * std::cos(phi), stick_r * std::sin(phi), z}, 1};
    }
    throw ConfigError("unknown synthetic class '" + shape + "'");
}

auto trim(std::string_view s) -> std::string_view
{
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
        s.remove_prefix(1);
    }
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
        s.remove_suffix(1);
    }
    return s;
}

} // namespace

auto parse_off(std::string_view text) -> Mesh
{
    OffLines lines{text};
    std::string_view content;
    std::size_t line = 0;
    if (!lines.next(content, line)) {
        off_fail(Kind::missing_header, "empty input, expected OFF header", line);
    }
    auto toks = split_ws(content);
    if (toks.front().substr(0, 3) != "OFF") {
        off_fail(Kind::missing_header, "expected OFF header", line);
    }
    // The counts may follow the magic on the same line, even without a
    // separating space ("OFF490 518 0").
    std::vector<std::string_view> counts;
    if (toks.front().size() > 3) {
        counts.push_back(toks.front().substr(3));
    }
    counts.insert(counts.end(), toks.begin() + 1, toks.end());
    if (counts.empty()) {
        if (!lines.next(content, line)) {
            off_fail(Kind::truncated, "missing counts line", line);
        }
        counts = split_ws(content);
    }
    std::size_t nv = 0;
    std::size_t nf = 0;
    std::size_t ne = 0;
    if (counts.size() < 2 || counts.size() > 3 || !parse_number(counts[0], nv)
        || !parse_number(counts[1], nf) || (counts.size() == 3 && !parse_number(counts[2], ne))) {
        off_fail(Kind::bad_counts, "expected 'V F [E]' non-negative counts", line);
    }

    Mesh mesh;
    mesh.vertices.reserve(nv);
    for (std::size_t i = 0; i < nv; ++i) {
        if (!lines.next(content, line)) {
            off_fail(Kind::truncated,
                     "expected " + std::to_string(nv) + " vertices, found " + std::to_string(i),
                     line);
        }
        auto v = split_ws(content);
        std::array<double, 3> p{};
        if (v.size() < 3 || !parse_number(v[0], p[0]) || !parse_number(v[1], p[1])
            || !parse_number(v[2], p[2])) {
            off_fail(Kind::bad_vertex, "expected three coordinates", line);
        }
        if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2])) {
            off_fail(Kind::bad_vertex, "non-finite coordinate", line);
        }
        mesh.vertices.push_back(p);
    }
    for (std::size_t i = 0; i < nf; ++i) {
        if (!lines.next(content, line)) {
            off_fail(Kind::truncated,
                     "expected " + std::to_string(nf) + " faces, found " + std::to_string(i), line);
        }
        auto f = split_ws(content);
        std::size_t arity = 0;
        if (f.empty() || !parse_number(f[0], arity) || arity < 3 || f.size() < arity + 1) {
            off_fail(Kind::bad_face, "expected arity >= 3 followed by that many indices", line);
        }
        std::vector<std::size_t> idx(arity);
        for (std::size_t j = 0; j < arity; ++j) {
            if (!parse_number(f[j + 1], idx[j])) {
                off_fail(Kind::bad_face, "bad vertex index '" + std::string{f[j + 1]} + "'", line);
            }
            if (idx[j] >= nv) {
                off_fail(Kind::index_out_of_range,
                         "vertex index " + std::to_string(idx[j]) + " >= vertex count "
                             + std::to_string(nv),
                         line);
            }
        }
        for (std::size_t j = 1; j + 1 < arity; ++j) {
            mesh.faces.push_back({idx[0], idx[j], idx[j + 1]});
        }
    }
    return mesh;
}

auto read_off(const std::string& path) -> Mesh
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open '" + path + "'", 0);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_off(ss.str());
}

auto serialize_off(const Mesh& mesh) -> std::string
{
    std::string out = "OFF\n" + std::to_string(mesh.vertices.size()) + ' '
                      + std::to_string(mesh.faces.size()) + " 0\n";
    for (const auto& v : mesh.vertices) {
        out += format_double(v[0]) + ' ' + format_double(v[1]) + ' ' + format_double(v[2]) + '\n';
    }
    for (const auto& f : mesh.faces) {
        out += "3 " + std::to_string(f[0]) + ' ' + std::to_string(f[1]) + ' '
               + std::to_string(f[2]) + '\n';
    }
    return out;
}

auto triangle_area(const Mesh& mesh, std::size_t face) -> double
{
    const auto& f = mesh.faces.at(face);
    const auto& a = mesh.vertices.at(f[0]);
    const auto& b = mesh.vertices.at(f[1]);
    const auto& c = mesh.vertices.at(f[2]);
    const std::array<double, 3> u{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
    const std::array<double, 3> v{c[0] - a[0], c[1] - a[1], c[2] - a[2]};
    const double x = u[1] * v[2] - u[2] * v[1];
    const double y = u[2] * v[0] - u[0] * v[2];
    const double z = u[0] * v[1] - u[1] * v[0];
    return 0.5 * std::sqrt(x * x + y * y + z * z);
}

void normalize(PointCloud& cloud)
{
    const std::size_t n = cloud.size();
    if (n == 0) {
        return;
    }
    std::array<double, 3> mean{};
    for (std::size_t i = 0; i < n; ++i) {
        for (int a = 0; a < 3; ++a) {
            mean[a] += cloud.coords[3 * i + a];
        }
    }
    for (auto& m : mean) {
        m /= static_cast<double>(n);
    }
    double radius = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double r2 = 0;
        for (int a = 0; a < 3; ++a) {
            auto& c = cloud.coords[3 * i + a];
            c -= mean[a];
            r2 += c * c;
        }
        radius = std::max(radius, std::sqrt(r2));
    }
    for (auto& c : cloud.coords) {
        c = radius > 0 ? c / radius : 0.0;
    }
}

auto sample_surface_uniform(const Mesh& mesh, std::size_t n, std::mt19937_64& rng,
                            bool normalized) -> PointCloud
{
    std::vector<double> cumulative(mesh.faces.size());
    double total = 0;
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        total += triangle_area(mesh, f);
        cumulative[f] = total;
    }
    if (!(total > 0)) {
        throw DataError("mesh has no triangle with positive area");
    }
    std::uniform_real_distribution<double> pick(0.0, total);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    PointCloud cloud;
    cloud.coords.reserve(3 * n);
    for (std::size_t i = 0; i < n; ++i) {
        auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick(rng));
        const auto face = std::min<std::size_t>(it - cumulative.begin(), cumulative.size() - 1);
        const double s1 = std::sqrt(u01(rng));
        const double r2 = u01(rng);
        const auto& f = mesh.faces[face];
        const auto& a = mesh.vertices[f[0]];
        const auto& b = mesh.vertices[f[1]];
        const auto& c = mesh.vertices[f[2]];
        for (int k = 0; k < 3; ++k) {
            cloud.coords.push_back((1 - s1) * a[k] + s1 * (1 - r2) * b[k] + s1 * r2 * c[k]);
        }
    }
    if (normalized) {
        normalize(cloud);
    }
    return cloud;
}

void SyntheticSpec::validate() const
{
    if (classes.empty()) {
        throw ConfigError("synthetic spec: no classes");
    }
    for (const auto& c : classes) {
        if (std::find(synthetic_classes.begin(), synthetic_classes.end(), c)
            == synthetic_classes.end()) {
            throw ConfigError("unknown synthetic class '" + c + "'");
        }
    }
    if (points == 0) {
        throw ConfigError("synthetic spec: points must be positive");
    }
    if (!(noise >= 0) || !std::isfinite(noise)) {
        throw ConfigError("synthetic spec: noise must be finite and non-negative");
    }
}

auto SyntheticSpec::parse(const std::string& text) -> SyntheticSpec
{
    SyntheticSpec spec;
    std::istringstream in{text};
    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
        ++line;
        auto s = trim(std::string_view{raw}.substr(0, raw.find('#')));
        if (s.empty()) {
            continue;
        }
        const auto eq = s.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("synthetic spec line " + std::to_string(line) + ": expected key=value");
        }
        const auto key = trim(s.substr(0, eq));
        const auto value = trim(s.substr(eq + 1));
        bool ok = true;
        if (key == "classes") {
            spec.classes.clear();
            std::string_view rest = value;
            while (!rest.empty()) {
                const auto comma = rest.find(',');
                spec.classes.emplace_back(trim(rest.substr(0, comma)));
                rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
            }
        } else if (key == "per_class") {
            ok = parse_number(value, spec.per_class);
        } else if (key == "points") {
            ok = parse_number(value, spec.points);
        } else if (key == "noise") {
            ok = parse_number(value, spec.noise);
        } else if (key == "seed") {
            ok = parse_number(value, spec.seed);
        } else {
            throw ConfigError("synthetic spec line " + std::to_string(line) + ": unknown key '"
                              + std::string{key} + "'");
        }
        if (!ok) {
            throw ConfigError("synthetic spec line " + std::to_string(line) + ": bad value for '"
                              + std::string{key} + "'");
        }
    }
    spec.validate();
    return spec;
}

auto SyntheticSpec::to_text() const -> std::string
{
    std::string out = "classes=";
    for (std::size_t i = 0; i < classes.size(); ++i) {
        out += (i ? "," : "") + classes[i];
    }
    out += "\nper_class=" + std::to_string(per_class) + "\npoints=" + std::to_string(points)
           + "\nnoise=" + format_double(noise) + "\nseed=" + std::to_string(seed) + '\n';
    return out;
}

auto generate_synthetic_set(const SyntheticSpec& spec, std::mt19937_64& rng) -> Dataset
{
    spec.validate();
    Dataset out;
    out.reserve(spec.classes.size() * spec.per_class);
    for (std::size_t c = 0; c < spec.classes.size(); ++c) {
        const auto& shape = spec.classes[c];
        const bool parts = shape == "lollipop";
        for (std::size_t i = 0; i < spec.per_class; ++i) {
            PointCloud cloud;
            cloud.class_label = static_cast<int>(c);
            cloud.coords.reserve(3 * spec.points);
            for (std::size_t j = 0; j < spec.points; ++j) {
                auto sp = sample_shape(shape, rng);
                add_noise(sp.p, spec.noise, rng);
                cloud.coords.insert(cloud.coords.end(), sp.p.begin(), sp.p.end());
                if (parts) {
                    cloud.part_labels.push_back(sp.part);
                }
            }
            normalize(cloud);
            for (auto& v : cloud.coords) {
                v = static_cast<double>(static_cast<float>(v));
            }
            out.push_back(std::move(cloud));
        }
    }
    return out;
}

auto generate_synthetic_set(const SyntheticSpec& spec) -> Dataset
{
    std::mt19937_64 rng{spec.seed};
    return generate_synthetic_set(spec, rng);
}

auto AugmentPolicy::identity() -> AugmentPolicy
{
    AugmentPolicy p;
    p.scale_low = p.scale_high = 1.0;
    p.shift_low = p.shift_high = {0.0, 0.0, 0.0};
    p.jitter_sigma = 0.0;
    p.jitter_clip = 0.0;
    return p;
}

void AugmentPolicy::validate() const
{
    if (!(scale_low <= scale_high) || !(scale_low > 0)) {
        throw ConfigError("augment: need 0 < scale_low <= scale_high");
    }
    for (int a = 0; a < 3; ++a) {
        if (!(shift_low[a] <= shift_high[a])) {
            throw ConfigError("augment: need shift_low <= shift_high");
        }
    }
    if (!(jitter_sigma >= 0) || !(jitter_clip >= 0)) {
        throw ConfigError("augment: jitter sigma and clip must be non-negative");
    }
}

auto augment(const PointCloud& cloud, std::mt19937_64& rng, const AugmentPolicy& policy)
    -> PointCloud
{
    policy.validate();
    auto draw = [&rng](double lo, double hi) {
        return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
    };
    std::array<double, 3> s{};
    std::array<double, 3> t{};
    for (int a = 0; a < 3; ++a) {
        s[a] = draw(policy.scale_low, policy.scale_high);
    }
    for (int a = 0; a < 3; ++a) {
        t[a] = draw(policy.shift_low[a], policy.shift_high[a]);
    }
    PointCloud out = cloud;
    const std::size_t n = cloud.size();
    for (std::size_t i = 0; i < n; ++i) {
        for (int a = 0; a < 3; ++a) {
            auto& c = out.coords[3 * i + a];
            if (s[a] != 1.0) {
                c *= s[a];
            }
            if (t[a] != 0.0) {
                c += t[a];
            }
        }
    }
    if (policy.jitter_sigma > 0) {
        std::normal_distribution<double> gauss(0.0, policy.jitter_sigma);
        for (auto& c : out.coords) {
            c += std::clamp(gauss(rng), -policy.jitter_clip, policy.jitter_clip);
        }
    }
    return out;
}

auto to_string(LabelKind kind) -> std::string
{
    switch (kind) {
    case LabelKind::none: return "none";
    case LabelKind::cls: return "class";
    case LabelKind::point: return "point";
    case LabelKind::cls_point: return "class+point";
    }
    return "none";
}

namespace {

auto cloud_label_kind(const PointCloud& c) -> LabelKind
{
    const bool has_cls = c.class_label.has_value();
    const bool has_pt = !c.part_labels.empty();
    if (has_cls && has_pt) {
        return LabelKind::cls_point;
    }
    return has_cls ? LabelKind::cls : has_pt ? LabelKind::point : LabelKind::none;
}

} // namespace

auto label_kind(std::span<const PointCloud> batch) -> LabelKind
{
    if (batch.empty()) {
        return LabelKind::none;
    }
    const auto kind = cloud_label_kind(batch.front());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (cloud_label_kind(batch[i]) != kind) {
            throw DataError("cloud " + std::to_string(i) + " has labels '"
                            + to_string(cloud_label_kind(batch[i])) + "', batch has '"
                            + to_string(kind) + "'");
        }
    }
    return kind;
}

void write_pcb(std::ostream& out, std::span<const PointCloud> batch)
{
    const auto kind = label_kind(batch);
    const std::size_t n = batch.empty() ? 0 : batch.front().size();
    const std::size_t d = batch.empty() ? 3 : batch.front().dims();
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& c = batch[i];
        if (c.size() != n || c.dims() != d) {
            throw DataError("cloud " + std::to_string(i) + " has " + std::to_string(c.size())
                            + "x" + std::to_string(c.dims()) + " values, batch has "
                            + std::to_string(n) + "x" + std::to_string(d));
        }
        if (c.coords.size() != 3 * n || c.extra.size() != c.extra_dims * n
            || (!c.part_labels.empty() && c.part_labels.size() != n)) {
            throw DataError("cloud " + std::to_string(i) + " is internally inconsistent");
        }
    }
    out << "PCB1 count=" << batch.size() << " points=" << n << " dims=" << d
        << " labels=" << to_string(kind) << '\n';
    for (const auto& c : batch) {
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t a = 0; a < 3; ++a) {
                put_le(out, static_cast<float>(c.coords[3 * p + a]));
            }
            for (std::size_t a = 0; a < c.extra_dims; ++a) {
                put_le(out, static_cast<float>(c.extra[c.extra_dims * p + a]));
            }
        }
    }
    if (kind == LabelKind::cls || kind == LabelKind::cls_point) {
        for (const auto& c : batch) {
            put_le(out, static_cast<std::int32_t>(*c.class_label));
        }
    }
    if (kind == LabelKind::point || kind == LabelKind::cls_point) {
        for (const auto& c : batch) {
            for (int l : c.part_labels) {
                put_le(out, static_cast<std::int32_t>(l));
            }
        }
    }
    if (!out) {
        throw Error("PCB write failed");
    }
}

auto read_pcb(std::istream& in) -> Dataset
{
    ByteReader r{in};
    std::string header;
    try {
        header = r.line();
    } catch (const FormatError&) {
        throw FormatError("PCB: missing header line", 0);
    }
    if (header.rfind("PCB", 0) != 0) {
        throw FormatError("PCB: bad magic", 0);
    }
    if (header.rfind("PCB1 ", 0) != 0) {
        throw FormatError("PCB: unsupported version '" + header.substr(0, header.find(' ')) + "'",
                          0);
    }
    std::size_t count = 0;
    std::size_t points = 0;
    std::size_t dims = 0;
    std::string labels;
    {
        auto toks = split_ws(header);
        bool ok = toks.size() == 5;
        auto field = [&](std::size_t i, std::string_view key) -> std::string_view {
            if (!ok || toks[i].substr(0, key.size()) != key) {
                ok = false;
                return {};
            }
            return toks[i].substr(key.size());
        };
        ok = ok && parse_number(field(1, "count="), count);
        ok = ok && parse_number(field(2, "points="), points);
        ok = ok && parse_number(field(3, "dims="), dims);
        if (ok) {
            labels = std::string{field(4, "labels=")};
        }
        if (!ok || dims < 3) {
            throw FormatError("PCB: malformed header '" + header + "'", 0);
        }
    }
    LabelKind kind{};
    if (labels == "none") {
        kind = LabelKind::none;
    } else if (labels == "class") {
        kind = LabelKind::cls;
    } else if (labels == "point") {
        kind = LabelKind::point;
    } else if (labels == "class+point") {
        kind = LabelKind::cls_point;
    } else {
        throw FormatError("PCB: unknown label kind '" + labels + "'", 0);
    }

    Dataset out(count);
    for (auto& c : out) {
        c.coords.resize(3 * points);
        c.extra_dims = dims - 3;
        c.extra.resize(c.extra_dims * points);
        for (std::size_t p = 0; p < points; ++p) {
            for (std::size_t a = 0; a < 3; ++a) {
                c.coords[3 * p + a] = r.get_le<float>();
            }
            for (std::size_t a = 0; a < c.extra_dims; ++a) {
                c.extra[c.extra_dims * p + a] = r.get_le<float>();
            }
        }
    }
    if (kind == LabelKind::cls || kind == LabelKind::cls_point) {
        for (auto& c : out) {
            c.class_label = r.get_le<std::int32_t>();
        }
    }
    if (kind == LabelKind::point || kind == LabelKind::cls_point) {
        for (auto& c : out) {
            c.part_labels.resize(points);
            for (auto& l : c.part_labels) {
                l = r.get_le<std::int32_t>();
            }
        }
    }
    if (!r.at_end()) {
        throw FormatError("PCB: count mismatch, trailing bytes after " + std::to_string(count)
                              + " clouds",
                          r.offset());
    }
    return out;
}

void write_pcb(const std::string& path, std::span<const PointCloud> batch)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot open '" + path + "' for writing");
    }
    write_pcb(out, batch);
}

auto read_pcb(const std::string& path) -> Dataset
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open '" + path + "'", 0);
    }
    return read_pcb(in);
}

auto select_points(const PointCloud& cloud, std::size_t n, std::mt19937_64& rng) -> PointCloud
{
    const std::size_t total = cloud.size();
    if (n > total) {
        throw DataError("cannot select " + std::to_string(n) + " points from a cloud of "
                        + std::to_string(total));
    }
    if (n == total) {
        return cloud;
    }
    std::vector<std::size_t> idx(total);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    PointCloud out;
    out.extra_dims = cloud.extra_dims;
    out.class_label = cloud.class_label;
    for (auto i : idx) {
        out.coords.insert(out.coords.end(), cloud.coords.begin() + 3 * i,
                          cloud.coords.begin() + 3 * i + 3);
        out.extra.insert(out.extra.end(), cloud.extra.begin() + cloud.extra_dims * i,
                         cloud.extra.begin() + cloud.extra_dims * (i + 1));
        if (!cloud.part_labels.empty()) {
            out.part_labels.push_back(cloud.part_labels[i]);
        }
    }
    return out;
}

auto split_validation(const Dataset& data, double fraction, std::uint64_t seed)
    -> std::pair<Dataset, Dataset>
{
    if (!(fraction >= 0 && fraction < 1)) {
        throw ConfigError("validation fraction must lie in [0, 1)");
    }
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng{seed};
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(data.size())));
    std::vector<bool> is_val(data.size(), false);
    for (std::size_t i = 0; i < n_val; ++i) {
        is_val[order[i]] = true;
    }
    std::pair<Dataset, Dataset> out;
    for (std::size_t i = 0; i < data.size(); ++i) {
        (is_val[i] ? out.second : out.first).push_back(data[i]);
    }
    return out;
}

} // namespace dfa
