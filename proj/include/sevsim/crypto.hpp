#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string_view>
#include <variant>

#include "sevsim/bytes.hpp"
#include "sevsim/rng.hpp"

namespace sevsim {

// ---------------------------------------------------------------------------
// Hash primitives
// ---------------------------------------------------------------------------

Digest sha256(ByteSpan data);
Digest hmac_sha256(ByteSpan key, ByteSpan data);

/// Constant-time equality for tags. Unequal lengths compare false.
bool tags_equal(ByteSpan a, ByteSpan b);

/// Copyable streaming SHA-256 context.
class Sha256Stream {
public:
    Sha256Stream();
    Sha256Stream(const Sha256Stream& other);
    Sha256Stream& operator=(const Sha256Stream& other);
    Sha256Stream(Sha256Stream&&) noexcept;
    Sha256Stream& operator=(Sha256Stream&&) noexcept;
    ~Sha256Stream();

    void update(ByteSpan data);
    /// Finalizes a copy; the stream itself stays open.
    Digest finish() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// ---------------------------------------------------------------------------
// Launch digest
// ---------------------------------------------------------------------------

enum class DigestScheme {
    Vulnerable,  ///< streaming SHA-256 over data only
    HpaBound,    ///< h_i = H(h_{i-1} || HPA || data)
    SizeBound,   ///< h_i = H(h_{i-1} || length || data)
    SnpStyle,    ///< h_i = H(h_{i-1} || H(data) || length || GPA)
};

inline constexpr std::array<DigestScheme, 4> kAllSchemes = {
    DigestScheme::Vulnerable, DigestScheme::HpaBound, DigestScheme::SizeBound,
    DigestScheme::SnpStyle};

/// Short names used on the command line and in reports:
/// "vulnerable", "hpa", "size", "snp".
std::string_view scheme_name(DigestScheme scheme);
DigestScheme parse_scheme(std::string_view name);

/// One LAUNCH_UPDATE_DATA invocation. The data itself is resolved from
/// physical memory by the SP, or supplied directly when replaying.
struct LoadCall {
    std::uint64_t hpa = 0;
    std::uint64_t gpa = 0;
    std::uint64_t length = 0;

    bool operator==(const LoadCall&) const = default;
};

class LaunchDigestState {
public:
    explicit LaunchDigestState(DigestScheme scheme);

    DigestScheme scheme() const { return scheme_; }
    std::uint64_t call_count() const { return call_count_; }

    /// Throws EmptyData, LengthNotMultipleOf16, or BadLength when
    /// data.size() != call.length.
    void absorb(const LoadCall& call, ByteSpan data);

    /// Streaming scheme: SHA-256 finalization of a copy. Chained schemes:
    /// the current h_n. Throws NoDataAbsorbed before the first absorb.
    Digest finalize() const;

private:
    DigestScheme scheme_;
    std::variant<Sha256Stream, Digest> state_;
    std::uint64_t call_count_ = 0;
};

LaunchDigestState digest_absorb(LaunchDigestState state, const LoadCall& call, ByteSpan data);
Digest digest_finalize(const LaunchDigestState& state);

// ---------------------------------------------------------------------------
// Measurement
// ---------------------------------------------------------------------------

struct Policy {
    std::uint32_t value = 0;
    bool operator==(const Policy&) const = default;
};

struct ApiVersion {
    std::uint8_t major = 0;
    std::uint8_t minor = 24;
    std::uint8_t build = 0x0a;
    bool operator==(const ApiVersion&) const = default;
};

struct Measurement {
    Nonce mnonce{};
    Digest measure{};
    bool operator==(const Measurement&) const = default;
};

inline constexpr std::uint8_t kMeasurementContext = 0x04;
inline constexpr std::size_t kMeasurementInputSize = 56;

/// 0x04 | major | minor | build | policy (LE32) | ld | mnonce
std::array<std::uint8_t, kMeasurementInputSize> measurement_input(
    const Digest& ld, Policy policy, ApiVersion version, const Nonce& mnonce);

Measurement compute_measurement(const Digest& ld, Policy policy, ApiVersion version,
                                const Nonce& mnonce, const Key256& tik);

// ---------------------------------------------------------------------------
// Session establishment (X25519 + HKDF-SHA256)
// ---------------------------------------------------------------------------

struct DhPrivateKey {
    Key256 bytes{};
};

struct DhPublicKey {
    Key256 bytes{};
    bool operator==(const DhPublicKey&) const = default;
};

struct DhKeyPair {
    DhPrivateKey private_key;
    DhPublicKey public_key;
};

DhPublicKey dh_public_from_private(const DhPrivateKey& key);
DhKeyPair generate_dh_keypair(Rng& rng);

struct SessionKeys {
    Key128 tek{};
    Key256 tik{};
};

inline constexpr std::string_view kTekLabel = "sev-tek";
inline constexpr std::string_view kTikLabel = "sev-tik";

/// Throws InvalidPublicKey for low-order or otherwise unusable peer keys.
SessionKeys derive_session(const DhPrivateKey& own, const DhPublicKey& peer);

// ---------------------------------------------------------------------------
// Secret transport
// ---------------------------------------------------------------------------

/// Wire layout: length (LE32) | iv (16) | ciphertext | HMAC-SHA-256 (32).
/// The MAC covers header and ciphertext.
struct SecretPacket {
    std::uint32_t length = 0;
    Nonce iv{};
    Bytes ciphertext;
    Digest mac{};

    static constexpr std::size_t kHeaderSize = 4 + 16;

    Bytes header() const;
    Bytes serialize() const;
    static SecretPacket parse(ByteSpan wire);
};

/// Zero-pads plaintext to a multiple of 16 and encrypts with AES-128-CTR
/// (iv is the initial counter block).
SecretPacket wrap_secret(ByteSpan plaintext, const Key128& tek, const Key256& tik,
                         const Nonce& iv);

/// Verifies the MAC before decrypting. Throws BadHmac or BadLength.
Bytes unwrap_secret(const SecretPacket& packet, const Key128& tek, const Key256& tik);

// ---------------------------------------------------------------------------
// Memory encryption (AES-128 XEX with an address tweak)
// ---------------------------------------------------------------------------

/// Keyed engine of the memory controller. Holds expanded key schedules but
/// offers no way to read the key back out.
class MemoryCipher {
public:
    explicit MemoryCipher(const Key128& vek);
    ~MemoryCipher();
    MemoryCipher(const MemoryCipher&) = delete;
    MemoryCipher& operator=(const MemoryCipher&) = delete;

    /// hpa must be 16-byte aligned (UnalignedAddress otherwise).
    Block encrypt(const Block& plaintext, std::uint64_t hpa) const;
    Block decrypt(const Block& ciphertext, std::uint64_t hpa) const;

private:
    Block tweak(std::uint64_t hpa) const;

    struct Impl;
    std::unique_ptr<Impl> impl_;
};

Block memcipher_encrypt(const Block& plaintext, std::uint64_t hpa, const Key128& vek);
Block memcipher_decrypt(const Block& ciphertext, std::uint64_t hpa, const Key128& vek);

}  // namespace sevsim
