#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <string_view>

#include "sevsim/crypto.hpp"
#include "sevsim/memory.hpp"
#include "sevsim/rng.hpp"

namespace sevsim {

enum class GuestState { Uninit, LUpdate, LSecret, Running };

inline constexpr std::array<GuestState, 4> kAllGuestStates = {
    GuestState::Uninit, GuestState::LUpdate, GuestState::LSecret, GuestState::Running};

std::string_view state_name(GuestState state);

enum class LaunchCommand {
    LaunchStart,
    LaunchUpdateData,
    LaunchUpdateVmsa,
    LaunchMeasure,
    LaunchSecret,
    LaunchFinish,
};

inline constexpr std::array<LaunchCommand, 6> kAllLaunchCommands = {
    LaunchCommand::LaunchStart,   LaunchCommand::LaunchUpdateData, LaunchCommand::LaunchUpdateVmsa,
    LaunchCommand::LaunchMeasure, LaunchCommand::LaunchSecret,     LaunchCommand::LaunchFinish};

std::string_view command_name(LaunchCommand command);

/// State reached by a legal (state, command) pair, or nullopt when the
/// firmware rejects the command in that state.
std::optional<GuestState> next_state(GuestState state, LaunchCommand command);

/// Per-guest record kept inside the secure processor. Callers hold it by
/// value but can only observe non-secret fields; VEK and session keys stay
/// private to the SP.
class GuestContext {
public:
    std::uint32_t handle() const { return handle_; }
    GuestState state() const { return state_; }
    Policy policy() const { return policy_; }
    ApiVersion version() const { return version_; }
    DigestScheme scheme() const { return ld_.scheme(); }
    std::uint64_t load_count() const { return ld_.call_count(); }

    /// Opaque memory-controller key slot for this guest; bind it to the
    /// guest's address space so guest accesses encrypt under the VEK.
    std::shared_ptr<const MemoryCipher> key_slot() const { return cipher_; }

private:
    friend class SecureProcessor;

    GuestContext(std::uint32_t handle, DigestScheme scheme, ApiVersion version)
        : handle_(handle), ld_(scheme), version_(version)
    {
    }

    std::uint32_t handle_;
    GuestState state_ = GuestState::Uninit;
    LaunchDigestState ld_;
    Policy policy_{};
    ApiVersion version_;
    SessionKeys session_{};
    std::shared_ptr<const MemoryCipher> cipher_;
};

/// Model of the secure processor's guest launch API.
class SecureProcessor {
public:
    /// rng supplies the platform DH key, VEKs and MNONCEs. It must outlive
    /// the processor.
    explicit SecureProcessor(Rng& rng, ApiVersion version = {});

    ApiVersion version() const { return version_; }

    /// PDH_EXPORT stand-in: the platform's public DH key. Certificate
    /// chain validation is not modelled.
    DhPublicKey pdh_public() const { return platform_key_.public_key; }

    /// JSON-lines command log; pass nullptr to disable.
    void set_trace(std::ostream* trace) { trace_ = trace; }

    /// A fresh guest in UNINIT. The scheme stands in for the firmware
    /// version the guest owner requires.
    GuestContext create_context(DigestScheme scheme);

    void launch_start(GuestContext& ctx, const DhPublicKey& owner_public, Policy policy);

    /// create_context + launch_start.
    GuestContext launch_start(const DhPublicKey& owner_public, Policy policy, DigestScheme scheme);

    /// Measures the plaintext at call.hpa and encrypts it in place.
    void launch_update_data(GuestContext& ctx, PhysicalMemory& mem, const LoadCall& call);

    /// Same path as a 4096-byte data load with gpa = hpa.
    void launch_update_vmsa(GuestContext& ctx, PhysicalMemory& mem, std::uint64_t hpa);

    Measurement launch_measure(GuestContext& ctx);

    /// Unwraps the packet with TEK/TIK and writes the plaintext through the
    /// encrypted path at gpa.
    void launch_secret(GuestContext& ctx, const GuestAddressSpace& space, PhysicalMemory& mem,
                       const SecretPacket& packet, std::uint64_t gpa);

    void launch_finish(GuestContext& ctx);

private:
    void require_state(const GuestContext& ctx, LaunchCommand command) const;
    void load(GuestContext& ctx, PhysicalMemory& mem, const LoadCall& call);
    template <typename Fn>
    void run_command(GuestContext& ctx, LaunchCommand command, const Digest& inputs, Fn&& body);

    Rng& rng_;
    ApiVersion version_;
    DhKeyPair platform_key_;
    std::uint32_t next_handle_ = 1;
    std::ostream* trace_ = nullptr;
};

}  // namespace sevsim
