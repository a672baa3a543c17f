#pragma once

// Hand-rolled generators and small helpers shared by the test binaries.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "sevsim/bytes.hpp"
#include "sevsim/crypto.hpp"
#include "sevsim/error.hpp"

namespace sevsim::testing {

class Gen {
public:
    explicit Gen(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t u64() { return engine_(); }

    /// Uniform in [lo, hi].
    std::size_t range(std::size_t lo, std::size_t hi)
    {
        return std::uniform_int_distribution<std::size_t>(lo, hi)(engine_);
    }

    bool coin() { return range(0, 1) == 1; }

    Bytes bytes(std::size_t n)
    {
        Bytes out(n);
        for (auto& b : out)
            b = static_cast<std::uint8_t>(engine_());
        return out;
    }

    template <std::size_t N>
    std::array<std::uint8_t, N> array()
    {
        std::array<std::uint8_t, N> out{};
        for (auto& b : out)
            b = static_cast<std::uint8_t>(engine_());
        return out;
    }

    /// Random image of 1..max_blocks 16-byte blocks.
    Bytes image(std::size_t max_blocks) { return bytes(16 * range(1, max_blocks)); }

    std::vector<std::size_t> permutation(std::size_t n)
    {
        std::vector<std::size_t> p(n);
        std::iota(p.begin(), p.end(), std::size_t{0});
        std::shuffle(p.begin(), p.end(), engine_);
        return p;
    }

    /// Random split of n blocks into consecutive runs; returns run lengths
    /// in blocks.
    std::vector<std::size_t> chunking(std::size_t n)
    {
        std::vector<std::size_t> runs;
        std::size_t left = n;
        while (left > 0) {
            const auto r = range(1, left);
            runs.push_back(r);
            left -= r;
        }
        return runs;
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

/// Error code thrown by fn, or nullopt when it returns normally.
template <typename Fn>
std::optional<Errc> error_of(Fn&& fn)
{
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return std::nullopt;
}

/// Data-order loads for an image whose block b lives at hpas[b], one call
/// per block.
inline std::vector<LoadCall> per_block_calls(const std::vector<std::uint64_t>& hpas,
                                             std::uint64_t gpa_base)
{
    std::vector<LoadCall> calls;
    for (std::size_t b = 0; b < hpas.size(); ++b)
        calls.push_back(LoadCall{hpas[b], gpa_base + 16 * b, 16});
    return calls;
}

inline Digest replay(DigestScheme scheme, ByteSpan image, const std::vector<LoadCall>& calls)
{
    LaunchDigestState st(scheme);
    std::size_t off = 0;
    for (const auto& c : calls) {
        st.absorb(c, image.subspan(off, c.length));
        off += c.length;
    }
    return st.finalize();
}

}  // namespace sevsim::testing
