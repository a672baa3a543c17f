#pragma once

#include <cstdint>
#include <random>

#include "sevsim/bytes.hpp"

namespace sevsim {

/// Source of key material and nonces. Injected everywhere randomness is
/// drawn so launches can be replayed bit-exactly in tests.
class Rng {
public:
    virtual ~Rng() = default;
    virtual void fill(MutableByteSpan out) = 0;

    template <std::size_t N>
    std::array<std::uint8_t, N> draw()
    {
        std::array<std::uint8_t, N> out{};
        fill(out);
        return out;
    }

    Bytes draw_bytes(std::size_t n)
    {
        Bytes out(n);
        fill(out);
        return out;
    }

    std::uint64_t next_u64()
    {
        return load_le64(draw<8>());
    }
};

class SeededRng final : public Rng {
public:
    explicit SeededRng(std::uint64_t seed) : engine_(seed) {}
    void fill(MutableByteSpan out) override;

private:
    std::mt19937_64 engine_;
};

/// OS entropy via OpenSSL's RAND_bytes.
class OsRng final : public Rng {
public:
    void fill(MutableByteSpan out) override;
};

}  // namespace sevsim
