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

// Little-endian scalar I/O and an offset-tracking reader for the binary
// containers.

#pragma once

#include "dfa/error.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

namespace dfa {

template <typename T>
using uint_of = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;

template <typename T>
void put_le(std::ostream& out, T value)
{
    static_assert(sizeof(T) == 4 || sizeof(T) == 8);
    const auto bits = std::bit_cast<uint_of<T>>(value);
    std::array<char, sizeof(T)> buf{};
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        buf[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
    }
    out.write(buf.data(), buf.size());
}

class ByteReader
{
public:
    explicit ByteReader(std::istream& in) : in_{in} {}

    [[nodiscard]] auto offset() const -> std::size_t { return offset_; }

    // Reads through the next '\n' (not included). Fails at end of input.
    auto line() -> std::string
    {
        std::string s;
        if (!std::getline(in_, s)) {
            throw FormatError("unexpected end of input", offset_);
        }
        if (in_.eof()) {
            throw FormatError("unterminated header line", offset_);
        }
        offset_ += s.size() + 1;
        return s;
    }

    auto bytes(std::size_t n) -> std::string
    {
        std::string s(n, '\0');
        in_.read(s.data(), static_cast<std::streamsize>(n));
        const auto got = static_cast<std::size_t>(in_.gcount());
        if (got != n) {
            throw FormatError("truncated payload", offset_ + got);
        }
        offset_ += n;
        return s;
    }

    template <typename T>
    auto get_le() -> T
    {
        static_assert(sizeof(T) == 4 || sizeof(T) == 8);
        std::array<unsigned char, sizeof(T)> buf{};
        in_.read(reinterpret_cast<char*>(buf.data()), sizeof(T));
        if (static_cast<std::size_t>(in_.gcount()) != sizeof(T)) {
            throw FormatError("truncated payload", offset_ + static_cast<std::size_t>(in_.gcount()));
        }
        uint_of<T> bits = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            bits |= static_cast<uint_of<T>>(buf[i]) << (8 * i);
        }
        offset_ += sizeof(T);
        return std::bit_cast<T>(bits);
    }

    // True when no bytes remain.
    auto at_end() -> bool { return in_.peek() == std::char_traits<char>::eof(); }

private:
    std::istream& in_;
    std::size_t offset_ = 0;
};

} // namespace dfa
