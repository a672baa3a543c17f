#include "sevsim/crypto.hpp"

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/kdf.h>
#include <openssl/sha.h>

#include <cstring>

namespace sevsim {

namespace {

struct MdCtxDeleter {
    void operator()(EVP_MD_CTX* ctx) const { EVP_MD_CTX_free(ctx); }
};
struct CipherCtxDeleter {
    void operator()(EVP_CIPHER_CTX* ctx) const { EVP_CIPHER_CTX_free(ctx); }
};
struct PkeyDeleter {
    void operator()(EVP_PKEY* key) const { EVP_PKEY_free(key); }
};
struct PkeyCtxDeleter {
    void operator()(EVP_PKEY_CTX* ctx) const { EVP_PKEY_CTX_free(ctx); }
};

using MdCtxPtr = std::unique_ptr<EVP_MD_CTX, MdCtxDeleter>;
using CipherCtxPtr = std::unique_ptr<EVP_CIPHER_CTX, CipherCtxDeleter>;
using PkeyPtr = std::unique_ptr<EVP_PKEY, PkeyDeleter>;
using PkeyCtxPtr = std::unique_ptr<EVP_PKEY_CTX, PkeyCtxDeleter>;

[[noreturn]] void openssl_failure(const char* what)
{
    throw std::runtime_error(std::string("OpenSSL failure: ") + what);
}

CipherCtxPtr make_ecb(const Key128& key, bool encrypt)
{
    CipherCtxPtr ctx(EVP_CIPHER_CTX_new());
    if (!ctx || EVP_CipherInit_ex(ctx.get(), EVP_aes_128_ecb(), nullptr, key.data(), nullptr,
                                  encrypt ? 1 : 0) != 1)
        openssl_failure("AES-128-ECB init");
    EVP_CIPHER_CTX_set_padding(ctx.get(), 0);
    return ctx;
}

Block ecb_block(EVP_CIPHER_CTX* ctx, const Block& in)
{
    Block out{};
    int len = 0;
    if (EVP_CipherUpdate(ctx, out.data(), &len, in.data(), static_cast<int>(in.size())) != 1 ||
        len != static_cast<int>(out.size()))
        openssl_failure("AES-128-ECB block");
    return out;
}

Bytes aes128_ctr(const Key128& key, const Nonce& iv, ByteSpan in)
{
    CipherCtxPtr ctx(EVP_CIPHER_CTX_new());
    if (!ctx || EVP_EncryptInit_ex(ctx.get(), EVP_aes_128_ctr(), nullptr, key.data(), iv.data()) != 1)
        openssl_failure("AES-128-CTR init");
    Bytes out(in.size());
    int len = 0;
    if (!in.empty() &&
        EVP_EncryptUpdate(ctx.get(), out.data(), &len, in.data(), static_cast<int>(in.size())) != 1)
        openssl_failure("AES-128-CTR update");
    return out;
}

template <std::size_t N>
std::array<std::uint8_t, N> hkdf_sha256(ByteSpan ikm, std::string_view info)
{
    PkeyCtxPtr ctx(EVP_PKEY_CTX_new_id(EVP_PKEY_HKDF, nullptr));
    if (!ctx || EVP_PKEY_derive_init(ctx.get()) != 1 ||
        EVP_PKEY_CTX_set_hkdf_md(ctx.get(), EVP_sha256()) != 1 ||
        EVP_PKEY_CTX_set1_hkdf_key(ctx.get(), ikm.data(), static_cast<int>(ikm.size())) != 1 ||
        EVP_PKEY_CTX_add1_hkdf_info(ctx.get(), reinterpret_cast<const unsigned char*>(info.data()),
                                    static_cast<int>(info.size())) != 1)
        openssl_failure("HKDF init");
    std::array<std::uint8_t, N> out{};
    std::size_t len = out.size();
    if (EVP_PKEY_derive(ctx.get(), out.data(), &len) != 1 || len != out.size())
        openssl_failure("HKDF derive");
    return out;
}

void check_call(const LoadCall& call, ByteSpan data)
{
    if (call.length == 0 || data.empty())
        throw Error(Errc::EmptyData, "load call carries no data");
    if (call.length % kBlockSize != 0)
        throw Error(Errc::LengthNotMultipleOf16,
                    "length " + std::to_string(call.length) + " is not a multiple of 16");
    if (data.size() != call.length)
        throw Error(Errc::BadLength, "data size " + std::to_string(data.size()) +
                                         " does not match call length " +
                                         std::to_string(call.length));
}

}  // namespace

// ---------------------------------------------------------------------------

Digest sha256(ByteSpan data)
{
    Digest out{};
    SHA256(data.data(), data.size(), out.data());
    return out;
}

Digest hmac_sha256(ByteSpan key, ByteSpan data)
{
    Digest out{};
    unsigned int len = 0;
    if (!HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()), data.data(), data.size(),
              out.data(), &len) ||
        len != out.size())
        openssl_failure("HMAC-SHA-256");
    return out;
}

bool tags_equal(ByteSpan a, ByteSpan b)
{
    return a.size() == b.size() && CRYPTO_memcmp(a.data(), b.data(), a.size()) == 0;
}

struct Sha256Stream::Impl {
    MdCtxPtr ctx;
};

Sha256Stream::Sha256Stream() : impl_(std::make_unique<Impl>())
{
    impl_->ctx.reset(EVP_MD_CTX_new());
    if (!impl_->ctx || EVP_DigestInit_ex(impl_->ctx.get(), EVP_sha256(), nullptr) != 1)
        openssl_failure("SHA-256 init");
}

Sha256Stream::Sha256Stream(const Sha256Stream& other) : impl_(std::make_unique<Impl>())
{
    impl_->ctx.reset(EVP_MD_CTX_new());
    if (!impl_->ctx || EVP_MD_CTX_copy_ex(impl_->ctx.get(), other.impl_->ctx.get()) != 1)
        openssl_failure("SHA-256 copy");
}

Sha256Stream& Sha256Stream::operator=(const Sha256Stream& other)
{
    if (this != &other) {
        Sha256Stream copy(other);
        *this = std::move(copy);
    }
    return *this;
}

Sha256Stream::Sha256Stream(Sha256Stream&&) noexcept = default;
Sha256Stream& Sha256Stream::operator=(Sha256Stream&&) noexcept = default;
Sha256Stream::~Sha256Stream() = default;

void Sha256Stream::update(ByteSpan data)
{
    if (EVP_DigestUpdate(impl_->ctx.get(), data.data(), data.size()) != 1)
        openssl_failure("SHA-256 update");
}

Digest Sha256Stream::finish() const
{
    Sha256Stream copy(*this);
    Digest out{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(copy.impl_->ctx.get(), out.data(), &len) != 1 || len != out.size())
        openssl_failure("SHA-256 final");
    return out;
}

// ---------------------------------------------------------------------------

std::string_view scheme_name(DigestScheme scheme)
{
    switch (scheme) {
    case DigestScheme::Vulnerable: return "vulnerable";
    case DigestScheme::HpaBound: return "hpa";
    case DigestScheme::SizeBound: return "size";
    case DigestScheme::SnpStyle: return "snp";
    }
    return "?";
}

DigestScheme parse_scheme(std::string_view name)
{
    for (auto scheme : kAllSchemes)
        if (scheme_name(scheme) == name)
            return scheme;
    throw Error(Errc::InvalidArgument,
                "unknown digest scheme '" + std::string(name) + "' (vulnerable|hpa|size|snp)");
}

LaunchDigestState::LaunchDigestState(DigestScheme scheme) : scheme_(scheme)
{
    if (scheme == DigestScheme::Vulnerable)
        state_.emplace<Sha256Stream>();
    else
        state_.emplace<Digest>();  // h_0 = 32 zero bytes
}

void LaunchDigestState::absorb(const LoadCall& call, ByteSpan data)
{
    check_call(call, data);
    if (scheme_ == DigestScheme::Vulnerable) {
        std::get<Sha256Stream>(state_).update(data);
    } else {
        auto& h = std::get<Digest>(state_);
        Sha256Stream next;
        next.update(h);
        switch (scheme_) {
        case DigestScheme::HpaBound:
            next.update(le64(call.hpa));
            next.update(data);
            break;
        case DigestScheme::SizeBound:
            next.update(le64(call.length));
            next.update(data);
            break;
        case DigestScheme::SnpStyle:
            next.update(sha256(data));
            next.update(le64(call.length));
            next.update(le64(call.gpa));
            break;
        case DigestScheme::Vulnerable:
            break;
        }
        h = next.finish();
    }
    ++call_count_;
}

Digest LaunchDigestState::finalize() const
{
    if (call_count_ == 0)
        throw Error(Errc::NoDataAbsorbed, "launch digest finalized before any load");
    if (scheme_ == DigestScheme::Vulnerable)
        return std::get<Sha256Stream>(state_).finish();
    return std::get<Digest>(state_);
}

LaunchDigestState digest_absorb(LaunchDigestState state, const LoadCall& call, ByteSpan data)
{
    state.absorb(call, data);
    return state;
}

Digest digest_finalize(const LaunchDigestState& state)
{
    return state.finalize();
}

// ---------------------------------------------------------------------------

std::array<std::uint8_t, kMeasurementInputSize> measurement_input(
    const Digest& ld, Policy policy, ApiVersion version, const Nonce& mnonce)
{
    std::array<std::uint8_t, kMeasurementInputSize> buf{};
    auto* p = buf.data();
    *p++ = kMeasurementContext;
    *p++ = version.major;
    *p++ = version.minor;
    *p++ = version.build;
    for (int i = 0; i < 4; ++i)
        *p++ = static_cast<std::uint8_t>(policy.value >> (8 * i));
    p = std::copy(ld.begin(), ld.end(), p);
    std::copy(mnonce.begin(), mnonce.end(), p);
    return buf;
}

Measurement compute_measurement(const Digest& ld, Policy policy, ApiVersion version,
                                const Nonce& mnonce, const Key256& tik)
{
    auto input = measurement_input(ld, policy, version, mnonce);
    return Measurement{mnonce, hmac_sha256(tik, input)};
}

// ---------------------------------------------------------------------------

DhPublicKey dh_public_from_private(const DhPrivateKey& key)
{
    PkeyPtr pkey(EVP_PKEY_new_raw_private_key(EVP_PKEY_X25519, nullptr, key.bytes.data(),
                                              key.bytes.size()));
    if (!pkey)
        openssl_failure("X25519 private key");
    DhPublicKey pub;
    std::size_t len = pub.bytes.size();
    if (EVP_PKEY_get_raw_public_key(pkey.get(), pub.bytes.data(), &len) != 1 ||
        len != pub.bytes.size())
        openssl_failure("X25519 public key");
    return pub;
}

DhKeyPair generate_dh_keypair(Rng& rng)
{
    DhKeyPair pair;
    pair.private_key.bytes = rng.draw<32>();
    pair.public_key = dh_public_from_private(pair.private_key);
    return pair;
}

SessionKeys derive_session(const DhPrivateKey& own, const DhPublicKey& peer)
{
    PkeyPtr priv(EVP_PKEY_new_raw_private_key(EVP_PKEY_X25519, nullptr, own.bytes.data(),
                                              own.bytes.size()));
    PkeyPtr pub(EVP_PKEY_new_raw_public_key(EVP_PKEY_X25519, nullptr, peer.bytes.data(),
                                            peer.bytes.size()));
    if (!priv)
        openssl_failure("X25519 private key");
    if (!pub)
        throw Error(Errc::InvalidPublicKey, "peer key rejected");
    PkeyCtxPtr ctx(EVP_PKEY_CTX_new(priv.get(), nullptr));
    if (!ctx || EVP_PKEY_derive_init(ctx.get()) != 1)
        openssl_failure("X25519 derive init");
    if (EVP_PKEY_derive_set_peer(ctx.get(), pub.get()) != 1)
        throw Error(Errc::InvalidPublicKey, "peer key rejected");
    Key256 shared{};
    std::size_t len = shared.size();
    // OpenSSL refuses an all-zero shared secret, which is what low-order
    // points produce.
    if (EVP_PKEY_derive(ctx.get(), shared.data(), &len) != 1 || len != shared.size())
        throw Error(Errc::InvalidPublicKey, "peer key yields a degenerate shared secret");

    SessionKeys keys;
    keys.tek = hkdf_sha256<16>(shared, kTekLabel);
    keys.tik = hkdf_sha256<32>(shared, kTikLabel);
    OPENSSL_cleanse(shared.data(), shared.size());
    return keys;
}

// ---------------------------------------------------------------------------

Bytes SecretPacket::header() const
{
    Bytes out;
    out.reserve(kHeaderSize);
    append_le32(out, length);
    out.insert(out.end(), iv.begin(), iv.end());
    return out;
}

Bytes SecretPacket::serialize() const
{
    Bytes out = header();
    out.insert(out.end(), ciphertext.begin(), ciphertext.end());
    out.insert(out.end(), mac.begin(), mac.end());
    return out;
}

SecretPacket SecretPacket::parse(ByteSpan wire)
{
    if (wire.size() < kHeaderSize + kBlockSize + 32)
        throw Error(Errc::BadLength, "secret packet too short");
    SecretPacket p;
    p.length = static_cast<std::uint32_t>(wire[0]) | static_cast<std::uint32_t>(wire[1]) << 8 |
               static_cast<std::uint32_t>(wire[2]) << 16 | static_cast<std::uint32_t>(wire[3]) << 24;
    std::copy_n(wire.begin() + 4, 16, p.iv.begin());
    p.ciphertext.assign(wire.begin() + kHeaderSize, wire.end() - 32);
    std::copy(wire.end() - 32, wire.end(), p.mac.begin());
    return p;
}

SecretPacket wrap_secret(ByteSpan plaintext, const Key128& tek, const Key256& tik, const Nonce& iv)
{
    if (plaintext.empty())
        throw Error(Errc::BadLength, "cannot wrap an empty secret");
    Bytes padded(plaintext.begin(), plaintext.end());
    padded.resize((padded.size() + kBlockSize - 1) / kBlockSize * kBlockSize, 0);

    SecretPacket p;
    p.length = static_cast<std::uint32_t>(plaintext.size());
    p.iv = iv;
    p.ciphertext = aes128_ctr(tek, iv, padded);
    Bytes authenticated = p.header();
    authenticated.insert(authenticated.end(), p.ciphertext.begin(), p.ciphertext.end());
    p.mac = hmac_sha256(tik, authenticated);
    return p;
}

Bytes unwrap_secret(const SecretPacket& packet, const Key128& tek, const Key256& tik)
{
    Bytes authenticated = packet.header();
    authenticated.insert(authenticated.end(), packet.ciphertext.begin(), packet.ciphertext.end());
    if (!tags_equal(hmac_sha256(tik, authenticated), packet.mac))
        throw Error(Errc::BadHmac, "secret packet integrity check failed");
    if (packet.ciphertext.empty() || packet.ciphertext.size() % kBlockSize != 0 ||
        packet.length == 0 || packet.length > packet.ciphertext.size() ||
        packet.ciphertext.size() - packet.length >= kBlockSize)
        throw Error(Errc::BadLength, "secret packet length fields are inconsistent");
    Bytes plain = aes128_ctr(tek, packet.iv, packet.ciphertext);
    plain.resize(packet.length);
    return plain;
}

// ---------------------------------------------------------------------------

struct MemoryCipher::Impl {
    CipherCtxPtr data_enc;
    CipherCtxPtr data_dec;
    CipherCtxPtr tweak_enc;
};

MemoryCipher::MemoryCipher(const Key128& vek) : impl_(std::make_unique<Impl>())
{
    static constexpr char kLabel[] = "tweakkey........";
    Block label{};
    std::memcpy(label.data(), kLabel, label.size());

    impl_->data_enc = make_ecb(vek, true);
    impl_->data_dec = make_ecb(vek, false);
    Block tweak_key = ecb_block(impl_->data_enc.get(), label);
    impl_->tweak_enc = make_ecb(tweak_key, true);
    OPENSSL_cleanse(tweak_key.data(), tweak_key.size());
}

MemoryCipher::~MemoryCipher() = default;

Block MemoryCipher::tweak(std::uint64_t hpa) const
{
    if (!is_aligned(hpa, kBlockSize))
        throw Error(Errc::UnalignedAddress, "memory cipher address must be 16-byte aligned");
    Block address{};
    auto le = le64(hpa);
    std::copy(le.begin(), le.end(), address.begin());
    return ecb_block(impl_->tweak_enc.get(), address);
}

Block MemoryCipher::encrypt(const Block& plaintext, std::uint64_t hpa) const
{
    const Block t = tweak(hpa);
    Block x{};
    for (std::size_t i = 0; i < x.size(); ++i)
        x[i] = plaintext[i] ^ t[i];
    x = ecb_block(impl_->data_enc.get(), x);
    for (std::size_t i = 0; i < x.size(); ++i)
        x[i] ^= t[i];
    return x;
}

Block MemoryCipher::decrypt(const Block& ciphertext, std::uint64_t hpa) const
{
    const Block t = tweak(hpa);
    Block x{};
    for (std::size_t i = 0; i < x.size(); ++i)
        x[i] = ciphertext[i] ^ t[i];
    x = ecb_block(impl_->data_dec.get(), x);
    for (std::size_t i = 0; i < x.size(); ++i)
        x[i] ^= t[i];
    return x;
}

Block memcipher_encrypt(const Block& plaintext, std::uint64_t hpa, const Key128& vek)
{
    return MemoryCipher(vek).encrypt(plaintext, hpa);
}

Block memcipher_decrypt(const Block& ciphertext, std::uint64_t hpa, const Key128& vek)
{
    return MemoryCipher(vek).decrypt(ciphertext, hpa);
}

}  // namespace sevsim
