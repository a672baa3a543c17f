#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sevsim/error.hpp"

namespace sevsim {

using Bytes = std::vector<std::uint8_t>;
using ByteSpan = std::span<const std::uint8_t>;
using MutableByteSpan = std::span<std::uint8_t>;

using Digest = std::array<std::uint8_t, 32>;
using Key128 = std::array<std::uint8_t, 16>;
using Key256 = std::array<std::uint8_t, 32>;
using Nonce = std::array<std::uint8_t, 16>;
using Block = std::array<std::uint8_t, 16>;

inline constexpr std::size_t kBlockSize = 16;
inline constexpr std::size_t kPageSize = 4096;

std::string to_hex(ByteSpan bytes);

/// Accepts upper or lower case, ignores embedded whitespace. Throws
/// Error(InvalidArgument) on odd length or non-hex characters.
Bytes from_hex(std::string_view hex);

template <std::size_t N>
std::array<std::uint8_t, N> to_array(ByteSpan bytes);

void append_le64(Bytes& out, std::uint64_t value);
void append_le32(Bytes& out, std::uint32_t value);
std::uint64_t load_le64(ByteSpan bytes);
std::array<std::uint8_t, 8> le64(std::uint64_t value);

inline ByteSpan as_span(const std::string& s)
{
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

inline constexpr bool is_aligned(std::uint64_t value, std::uint64_t alignment)
{
    return value % alignment == 0;
}

inline constexpr std::uint64_t align_down(std::uint64_t value, std::uint64_t alignment)
{
    return value - value % alignment;
}

template <std::size_t N>
std::array<std::uint8_t, N> to_array(ByteSpan bytes)
{
    if (bytes.size() != N) {
        throw Error(Errc::BadLength, "expected " + std::to_string(N) + " bytes, got " +
                                         std::to_string(bytes.size()));
    }
    std::array<std::uint8_t, N> out{};
    std::copy(bytes.begin(), bytes.end(), out.begin());
    return out;
}

}  // namespace sevsim
