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

#include "dfa/checkpoint.hpp"

#include "dfa/binary_io.hpp"

#include <fstream>
#include <map>
#include <istream>
#include <ostream>
#include <sstream>

namespace dfa {

template <typename T>
auto make_checkpoint(const DfaNetwork<T>& model, std::string rng_state) -> Checkpoint
{
    Checkpoint c;
    c.config = model.config();
    c.rng_state = std::move(rng_state);
    for (const auto& p : model.params()) {
        StoredTensor t;
        t.name = p.name;
        t.is_double = std::is_same_v<T, double>;
        t.shape = p.value.shape;
        t.values.assign(p.value.data.begin(), p.value.data.end());
        c.tensors.push_back(std::move(t));
    }
    return c;
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt)
{
    const std::string config = ckpt.config.to_text();
    out << checkpoint_version << '\n';
    out << "config " << config.size() << '\n' << config;
    out << "rng " << ckpt.rng_state.size() << '\n' << ckpt.rng_state;
    out << "params " << ckpt.tensors.size() << '\n';
    for (const auto& t : ckpt.tensors) {
        if (t.name.empty() || t.name.find_first_of(" \n") != std::string::npos) {
            throw ConfigError("checkpoint: tensor name '" + t.name + "' is not storable");
        }
        out << t.name << ' ' << (t.is_double ? "f64" : "f32") << ' ' << t.shape.size();
        for (auto d : t.shape) {
            out << ' ' << d;
        }
        out << '\n';
        for (double v : t.values) {
            if (t.is_double) {
                put_le(out, v);
            } else {
                put_le(out, static_cast<float>(v));
            }
        }
    }
    out << "end\n";
    if (!out) {
        throw Error("checkpoint: write failed");
    }
}

auto read_checkpoint(std::istream& in) -> Checkpoint
{
    ByteReader r{in};
    if (r.line() != checkpoint_version) {
        throw FormatError("checkpoint: unsupported version (expected dfa-ckpt-1)", 0);
    }
    auto sized_block = [&r](const std::string& key) {
        const auto offset = r.offset();
        std::istringstream head{r.line()};
        std::string k;
        std::size_t n = 0;
        if (!(head >> k >> n) || k != key) {
            throw FormatError("checkpoint: expected '" + key + " <bytes>'", offset);
        }
        return r.bytes(n);
    };
    Checkpoint c;
    try {
        c.config = ModelConfig::from_text(sized_block("config"));
    } catch (const ConfigError& e) {
        throw FormatError(std::string{"checkpoint: "} + e.what(), r.offset());
    }
    c.rng_state = sized_block("rng");

    std::size_t offset = r.offset();
    std::istringstream head{r.line()};
    std::string key;
    std::size_t count = 0;
    if (!(head >> key >> count) || key != "params") {
        throw FormatError("checkpoint: expected 'params <count>'", offset);
    }
    for (std::size_t i = 0; i < count; ++i) {
        offset = r.offset();
        std::istringstream th{r.line()};
        StoredTensor t;
        std::string dtype;
        std::size_t rank = 0;
        if (!(th >> t.name >> dtype >> rank) || (dtype != "f32" && dtype != "f64")) {
            throw FormatError("checkpoint: bad tensor header", offset);
        }
        t.is_double = dtype == "f64";
        t.shape.resize(rank);
        for (auto& d : t.shape) {
            if (!(th >> d)) {
                throw FormatError("checkpoint: bad tensor shape", offset);
            }
        }
        t.values.resize(numel(t.shape));
        for (auto& v : t.values) {
            v = t.is_double ? r.get_le<double>() : static_cast<double>(r.get_le<float>());
        }
        c.tensors.push_back(std::move(t));
    }
    offset = r.offset();
    if (r.line() != "end") {
        throw FormatError("checkpoint: missing end marker", offset);
    }
    return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot open '" + path + "' for writing");
    }
    write_checkpoint(out, ckpt);
}

auto load_checkpoint(const std::string& path) -> Checkpoint
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open '" + path + "'", 0);
    }
    return read_checkpoint(in);
}

template <typename T>
void restore_parameters(DfaNetwork<T>& model, const Checkpoint& ckpt)
{
    std::map<std::string, const StoredTensor*> by_name;
    for (const auto& t : ckpt.tensors) {
        by_name[t.name] = &t;
    }
    for (auto& p : model.params()) {
        auto it = by_name.find(p.name);
        if (it == by_name.end()) {
            throw ConfigError("checkpoint lacks parameter '" + p.name + "'");
        }
        if (it->second->shape != p.value.shape) {
            throw ConfigError("checkpoint parameter '" + p.name + "' has shape "
                              + to_string(it->second->shape) + ", model expects "
                              + to_string(p.value.shape));
        }
        const auto& v = it->second->values;
        for (std::size_t i = 0; i < v.size(); ++i) {
            p.value.data[i] = static_cast<T>(v[i]);
        }
    }
}

template auto make_checkpoint<float>(const DfaNetwork<float>&, std::string) -> Checkpoint;
template auto make_checkpoint<double>(const DfaNetwork<double>&, std::string) -> Checkpoint;
template void restore_parameters<float>(DfaNetwork<float>&, const Checkpoint&);
template void restore_parameters<double>(DfaNetwork<double>&, const Checkpoint&);

} // namespace dfa
