#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sevsim/crypto.hpp"
#include "sevsim/rng.hpp"

namespace sevsim {

using LoadDescriptor = LoadCall;

/// Load schedule the owner expects: entries consume the image front to
/// back, in order.
struct LoadPlan {
    std::vector<LoadDescriptor> entries;
    DigestScheme scheme = DigestScheme::Vulnerable;
};

/// The usual contiguous schedule: one call per 4 KiB chunk (shorter final
/// chunk), gpa/hpa advancing together from their bases.
LoadPlan contiguous_plan(std::size_t image_size, std::uint64_t gpa_base, std::uint64_t hpa_base,
                         DigestScheme scheme, std::size_t chunk = kPageSize);

/// Replays the plan through the launch digest. Throws PlanImageMismatch if
/// the plan does not cover the image exactly.
Digest expected_launch_digest(ByteSpan image, const LoadPlan& plan);

Measurement expected_measurement(ByteSpan image, const LoadPlan& plan, Policy policy,
                                 ApiVersion version, const Nonce& mnonce, const Key256& tik);

/// Recomputes with the received MNONCE and compares tags in constant time.
/// Any error during replay counts as a failed verification.
bool verify_measurement(const Measurement& received, ByteSpan image, const LoadPlan& plan,
                        Policy policy, ApiVersion version, const Key256& tik);

/// Fresh IV from rng. Throws EmptySecret for an empty secret.
SecretPacket build_secret_packet(ByteSpan secret, const SessionKeys& keys, Rng& rng);

/// Guest-owner side of the session.
class GuestOwner {
public:
    explicit GuestOwner(Rng& rng) : rng_(rng), keys_(generate_dh_keypair(rng)) {}

    const DhPublicKey& public_key() const { return keys_.public_key; }

    /// Derives TEK/TIK against the platform key handed out by the HV.
    const SessionKeys& establish(const DhPublicKey& platform_public);
    const SessionKeys& session() const;

    SecretPacket package_secret(ByteSpan secret) { return build_secret_packet(secret, session(), rng_); }

private:
    Rng& rng_;
    DhKeyPair keys_;
    std::optional<SessionKeys> session_;
};

/// What the owner and the HV agreed to launch.
struct LaunchManifest {
    std::string image_path;
    Digest image_sha256{};
    LoadPlan plan;
    Policy policy{};
    ApiVersion version{};
};

void save_manifest(const std::filesystem::path& path, const LaunchManifest& manifest);
LaunchManifest load_manifest(const std::filesystem::path& path);

}  // namespace sevsim
