#include <openssl/rand.h>

#include "sevsim/bytes.hpp"
#include "sevsim/error.hpp"
#include "sevsim/rng.hpp"

namespace sevsim {

std::string_view errc_name(Errc code)
{
    switch (code) {
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::LengthNotMultipleOf16: return "LengthNotMultipleOf16";
    case Errc::EmptyData: return "EmptyData";
    case Errc::NoDataAbsorbed: return "NoDataAbsorbed";
    case Errc::InvalidPublicKey: return "InvalidPublicKey";
    case Errc::BadHmac: return "BadHmac";
    case Errc::BadLength: return "BadLength";
    case Errc::UnalignedAddress: return "UnalignedAddress";
    case Errc::UnmappedAddress: return "UnmappedAddress";
    case Errc::OutOfBounds: return "OutOfBounds";
    case Errc::InvalidState: return "InvalidState";
    case Errc::PlanImageMismatch: return "PlanImageMismatch";
    case Errc::EmptySecret: return "EmptySecret";
    case Errc::OffsetOutOfRange: return "OffsetOutOfRange";
    case Errc::NoChainFound: return "NoChainFound";
    case Errc::PlacementConflict: return "PlacementConflict";
    case Errc::MissingGadgetKind: return "MissingGadgetKind";
    case Errc::Io: return "Io";
    }
    return "Unknown";
}

std::string to_hex(ByteSpan bytes)
{
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 2);
    for (auto b : bytes) {
        out.push_back(kDigits[b >> 4]);
        out.push_back(kDigits[b & 0xf]);
    }
    return out;
}

namespace {

int hex_value(char c)
{
    if (c >= '0' && c <= '9')
        return c - '0';
    if (c >= 'a' && c <= 'f')
        return c - 'a' + 10;
    if (c >= 'A' && c <= 'F')
        return c - 'A' + 10;
    return -1;
}

}  // namespace

Bytes from_hex(std::string_view hex)
{
    Bytes out;
    int pending = -1;
    for (char c : hex) {
        if (c == ' ' || c == '\n' || c == '\t' || c == '\r')
            continue;
        int v = hex_value(c);
        if (v < 0)
            throw Error(Errc::InvalidArgument, std::string("bad hex character '") + c + "'");
        if (pending < 0) {
            pending = v;
        } else {
            out.push_back(static_cast<std::uint8_t>(pending << 4 | v));
            pending = -1;
        }
    }
    if (pending >= 0)
        throw Error(Errc::InvalidArgument, "odd number of hex digits");
    return out;
}

void append_le64(Bytes& out, std::uint64_t value)
{
    for (int i = 0; i < 8; ++i)
        out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

void append_le32(Bytes& out, std::uint32_t value)
{
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

std::uint64_t load_le64(ByteSpan bytes)
{
    if (bytes.size() < 8)
        throw Error(Errc::BadLength, "load_le64 needs 8 bytes");
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i)
        v = v << 8 | bytes[i];
    return v;
}

std::array<std::uint8_t, 8> le64(std::uint64_t value)
{
    std::array<std::uint8_t, 8> out{};
    for (int i = 0; i < 8; ++i)
        out[i] = static_cast<std::uint8_t>(value >> (8 * i));
    return out;
}

void SeededRng::fill(MutableByteSpan out)
{
    std::size_t i = 0;
    while (i < out.size()) {
        std::uint64_t word = engine_();
        for (int k = 0; k < 8 && i < out.size(); ++k, ++i)
            out[i] = static_cast<std::uint8_t>(word >> (8 * k));
    }
}

void OsRng::fill(MutableByteSpan out)
{
    if (out.empty())
        return;
    if (RAND_bytes(out.data(), static_cast<int>(out.size())) != 1)
        throw Error(Errc::Io, "RAND_bytes failed");
}

}  // namespace sevsim
