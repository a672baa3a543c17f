#include "sevsim/sp.hpp"

#include "json.hpp"

namespace sevsim {

namespace {

constexpr std::size_t kVmsaSize = 4096;

Digest hash_of(std::initializer_list<ByteSpan> parts)
{
    Sha256Stream s;
    for (auto p : parts)
        s.update(p);
    return s.finish();
}

}  // namespace

std::string_view state_name(GuestState state)
{
    switch (state) {
    case GuestState::Uninit: return "UNINIT";
    case GuestState::LUpdate: return "LUPDATE";
    case GuestState::LSecret: return "LSECRET";
    case GuestState::Running: return "RUNNING";
    }
    return "?";
}

std::string_view command_name(LaunchCommand command)
{
    switch (command) {
    case LaunchCommand::LaunchStart: return "LAUNCH_START";
    case LaunchCommand::LaunchUpdateData: return "LAUNCH_UPDATE_DATA";
    case LaunchCommand::LaunchUpdateVmsa: return "LAUNCH_UPDATE_VMSA";
    case LaunchCommand::LaunchMeasure: return "LAUNCH_MEASURE";
    case LaunchCommand::LaunchSecret: return "LAUNCH_SECRET";
    case LaunchCommand::LaunchFinish: return "LAUNCH_FINISH";
    }
    return "?";
}

std::optional<GuestState> next_state(GuestState state, LaunchCommand command)
{
    using C = LaunchCommand;
    using S = GuestState;
    switch (state) {
    case S::Uninit:
        if (command == C::LaunchStart)
            return S::LUpdate;
        break;
    case S::LUpdate:
        if (command == C::LaunchUpdateData || command == C::LaunchUpdateVmsa)
            return S::LUpdate;
        if (command == C::LaunchMeasure)
            return S::LSecret;
        break;
    case S::LSecret:
        if (command == C::LaunchSecret)
            return S::LSecret;
        if (command == C::LaunchFinish)
            return S::Running;
        break;
    case S::Running:
        break;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------

SecureProcessor::SecureProcessor(Rng& rng, ApiVersion version)
    : rng_(rng), version_(version), platform_key_(generate_dh_keypair(rng))
{
}

void SecureProcessor::require_state(const GuestContext& ctx, LaunchCommand command) const
{
    if (!next_state(ctx.state_, command))
        throw Error(Errc::InvalidState, std::string(command_name(command)) + " not permitted in " +
                                            std::string(state_name(ctx.state_)));
}

template <typename Fn>
void SecureProcessor::run_command(GuestContext& ctx, LaunchCommand command, const Digest& inputs,
                                  Fn&& body)
{
    const auto before = ctx.state_;
    auto emit = [&](std::string_view status) {
        if (!trace_)
            return;
        nlohmann::json line = {{"cmd", command_name(command)},
                               {"handle", ctx.handle_},
                               {"state_before", state_name(before)},
                               {"state_after", state_name(ctx.state_)},
                               {"inputs_sha256", to_hex(inputs)},
                               {"status", status}};
        *trace_ << line.dump() << '\n';
    };
    try {
        require_state(ctx, command);
        body();
        ctx.state_ = *next_state(before, command);
    } catch (const Error& e) {
        emit(errc_name(e.code()));
        throw;
    }
    emit("ok");
}

GuestContext SecureProcessor::create_context(DigestScheme scheme)
{
    return GuestContext(next_handle_++, scheme, version_);
}

void SecureProcessor::launch_start(GuestContext& ctx, const DhPublicKey& owner_public, Policy policy)
{
    Bytes policy_le;
    append_le32(policy_le, policy.value);
    run_command(ctx, LaunchCommand::LaunchStart, hash_of({owner_public.bytes, policy_le}), [&] {
        ctx.session_ = derive_session(platform_key_.private_key, owner_public);
        ctx.policy_ = policy;
        Key128 vek = rng_.draw<16>();
        ctx.cipher_ = std::make_shared<const MemoryCipher>(vek);
        vek.fill(0);
    });
}

GuestContext SecureProcessor::launch_start(const DhPublicKey& owner_public, Policy policy,
                                           DigestScheme scheme)
{
    auto ctx = create_context(scheme);
    launch_start(ctx, owner_public, policy);
    return ctx;
}

void SecureProcessor::load(GuestContext& ctx, PhysicalMemory& mem, const LoadCall& call)
{
    if (!is_aligned(call.hpa, kBlockSize))
        throw Error(Errc::UnalignedAddress, "PADDR must be 16-byte aligned");
    if (call.length == 0)
        throw Error(Errc::EmptyData, "zero-length load");
    if (call.length % kBlockSize != 0)
        throw Error(Errc::LengthNotMultipleOf16,
                    "length " + std::to_string(call.length) + " is not a multiple of 16");

    const Bytes plaintext = mem.hv_read(call.hpa, call.length);
    ctx.ld_.absorb(call, plaintext);
    for (std::uint64_t off = 0; off < call.length; off += kBlockSize) {
        Block b{};
        std::copy_n(plaintext.begin() + off, kBlockSize, b.begin());
        mem.write_block(call.hpa + off, ctx.cipher_->encrypt(b, call.hpa + off));
    }
}

void SecureProcessor::launch_update_data(GuestContext& ctx, PhysicalMemory& mem, const LoadCall& call)
{
    Digest inputs{};
    if (call.length <= mem.size() && call.hpa <= mem.size() - call.length) {
        auto data = mem.hv_read(call.hpa, call.length);
        inputs = hash_of({le64(call.hpa), le64(call.gpa), le64(call.length), data});
    }
    run_command(ctx, LaunchCommand::LaunchUpdateData, inputs, [&] { load(ctx, mem, call); });
}

void SecureProcessor::launch_update_vmsa(GuestContext& ctx, PhysicalMemory& mem, std::uint64_t hpa)
{
    run_command(ctx, LaunchCommand::LaunchUpdateVmsa, hash_of({le64(hpa)}), [&] {
        if (!is_aligned(hpa, kVmsaSize))
            throw Error(Errc::UnalignedAddress, "VMSA must be page aligned");
        load(ctx, mem, LoadCall{hpa, hpa, kVmsaSize});
    });
}

Measurement SecureProcessor::launch_measure(GuestContext& ctx)
{
    Measurement m;
    run_command(ctx, LaunchCommand::LaunchMeasure, Digest{}, [&] {
        const Digest ld = ctx.ld_.finalize();
        const Nonce mnonce = rng_.draw<16>();
        m = compute_measurement(ld, ctx.policy_, ctx.version_, mnonce, ctx.session_.tik);
    });
    return m;
}

void SecureProcessor::launch_secret(GuestContext& ctx, const GuestAddressSpace& space,
                                    PhysicalMemory& mem, const SecretPacket& packet,
                                    std::uint64_t gpa)
{
    const Bytes wire = packet.serialize();
    run_command(ctx, LaunchCommand::LaunchSecret, hash_of({wire, le64(gpa)}), [&] {
        Bytes secret = unwrap_secret(packet, ctx.session_.tek, ctx.session_.tik);
        guest_write_encrypted(space, *ctx.cipher_, mem, gpa, secret);
        std::fill(secret.begin(), secret.end(), 0);
    });
}

void SecureProcessor::launch_finish(GuestContext& ctx)
{
    run_command(ctx, LaunchCommand::LaunchFinish, Digest{}, [] {});
}

}  // namespace sevsim
