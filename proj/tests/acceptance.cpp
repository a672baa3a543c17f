// Acceptance run: one PASS/FAIL line per criterion. Exit status is
// nonzero when any criterion fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "sevsim/owner.hpp"
#include "sevsim/scenario.hpp"
#include "sevsim/sp.hpp"
#include "support.hpp"

using namespace sevsim;
using sevsim::testing::Gen;

namespace {

// Tolerances and budgets.
constexpr std::size_t kPermutationTrials = 1000;
constexpr std::size_t kMaxTrialImage = 4096;
constexpr double kPermutationBudgetSeconds = 10.0;
constexpr double kEndToEndBudgetSeconds = 5.0;
constexpr std::size_t kPacketTrials = 100;
constexpr std::size_t kPayloadTrials = 100;
constexpr std::uint64_t kPayloadStepBudget = 1000;
constexpr std::uint64_t kImageSeed = 7;
constexpr std::uint64_t kRunSeed = 1;
constexpr std::size_t kMatrixTrials = 5;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t)
{
    return std::chrono::duration<double>(Clock::now() - t).count();
}

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail)
{
    std::printf("%s [%d] %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!pass)
        ++failures;
}

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// ---------------------------------------------------------------------------
// 1 + 2: permutation trials through the secure processor
// ---------------------------------------------------------------------------

/// Full SP launch of image with the given data-order calls. The same seed
/// gives the same platform key, VEK, MNONCE and owner key.
struct LaunchResult {
    Measurement m;
    Key256 tik{};
};

LaunchResult launch(std::uint64_t seed, DigestScheme scheme, ByteSpan image,
                    const std::vector<LoadCall>& calls, PhysicalMemory& mem)
{
    SeededRng rng(seed);
    SecureProcessor sp(rng);
    GuestOwner owner(rng);
    owner.establish(sp.pdh_public());
    auto ctx = sp.launch_start(owner.public_key(), Policy{}, scheme);
    std::size_t off = 0;
    for (const auto& c : calls) {
        mem.hv_write(c.hpa, image.subspan(off, c.length));
        sp.launch_update_data(ctx, mem, c);
        off += c.length;
    }
    return {sp.launch_measure(ctx), owner.session().tik};
}

void permutation_criteria()
{
    const auto t0 = Clock::now();
    Gen g(0xacce55);
    PhysicalMemory mem(8u << 20);
    constexpr std::uint64_t gpa_base = 0x10000;

    std::size_t mismatches = 0, owner_rejects = 0, identity_plans = 0;
    std::map<DigestScheme, std::size_t> collisions;
    for (std::size_t t = 0; t < kPermutationTrials; ++t) {
        const std::size_t blocks = g.range(2, kMaxTrialImage / 16);
        const auto image = g.bytes(16 * blocks);
        const std::uint64_t hpa_base = 0x100000 + kPageSize * g.range(0, 1500);
        std::vector<std::size_t> perm;
        do {
            perm = g.permutation(blocks);
        } while (std::is_sorted(perm.begin(), perm.end()));
        std::vector<std::uint64_t> hpas(blocks);
        for (std::size_t b = 0; b < blocks; ++b)
            hpas[b] = hpa_base + 16 * perm[b];
        const auto attack_calls = data_order_loads(hpas, gpa_base, hpa_base);
        const std::uint64_t seed = g.u64();

        for (auto scheme : kAllSchemes) {
            const auto honest = contiguous_plan(image.size(), gpa_base, hpa_base, scheme);
            const auto h = launch(seed, scheme, image, honest.entries, mem);
            const auto a = launch(seed, scheme, image, attack_calls, mem);
            if (scheme == DigestScheme::Vulnerable) {
                if (a.m != h.m)
                    ++mismatches;
                if (!verify_measurement(a.m, image, honest, Policy{}, ApiVersion{}, a.tik))
                    ++owner_rejects;
            } else if (a.m.measure == h.m.measure) {
                ++collisions[scheme];
            }
        }
        identity_plans += std::is_sorted(perm.begin(), perm.end());
    }
    const double elapsed = seconds_since(t0);

    report(1, "permutation-agnostic measurement",
           mismatches == 0 && owner_rejects == 0 && elapsed < kPermutationBudgetSeconds,
           fmt("%zu trials, %zu measurement mismatches, %zu owner rejections, %.2f s (limit %.0f s)",
               kPermutationTrials, mismatches, owner_rejects, elapsed, kPermutationBudgetSeconds));
    std::size_t total = 0;
    std::string per;
    for (auto scheme : {DigestScheme::HpaBound, DigestScheme::SizeBound, DigestScheme::SnpStyle}) {
        total += collisions[scheme];
        per += fmt(" %s=%zu", std::string(scheme_name(scheme)).c_str(), collisions[scheme]);
    }
    report(2, "mitigation detection", total == 0 && identity_plans == 0,
           fmt("%zu non-identity plans, collisions:%s", kPermutationTrials, per.c_str()));
}

// ---------------------------------------------------------------------------
// 3: end-to-end leak
// ---------------------------------------------------------------------------

/// The CLI's default secret for a seed.
Bytes default_secret(std::uint64_t seed)
{
    SeededRng rng(seed ^ 0x5ec12e7ull);
    return rng.draw_bytes(32);
}

void end_to_end_criterion()
{
    const auto t0 = Clock::now();
    const auto image = build_test_image(kImageSeed);
    const auto secret = default_secret(kRunSeed);
    ScenarioOptions opts;
    opts.seed = kRunSeed;
    opts.transcript = true;
    const auto v1 = run_permutation_attack(image.bytes, secret, DigestScheme::Vulnerable, opts);
    const auto v2 = run_permutation_attack(image.bytes, secret, DigestScheme::Vulnerable, opts);
    const auto snp = run_permutation_attack(image.bytes, secret, DigestScheme::SnpStyle, opts);
    const double elapsed = seconds_since(t0);

    const bool vuln_ok = v1.verified.at(DigestScheme::Vulnerable) && v1.leaked_secret &&
                         v1.leaked_secret->size() == 32 && *v1.leaked_secret == secret;
    const bool snp_ok = !snp.verified.at(DigestScheme::SnpStyle) && !snp.leaked_secret &&
                        !snp.secret_on_shared_page;
    const bool deterministic = v1.attack_measurement == v2.attack_measurement &&
                               v1.leaked_secret == v2.leaked_secret && v1.transcript == v2.transcript;
    report(3, "end-to-end leak", vuln_ok && snp_ok && deterministic && elapsed < kEndToEndBudgetSeconds,
           fmt("vulnerable verified=%d leaked=%s; snp verified=%d leaked=%s; deterministic=%d; "
               "%.2f s (limit %.0f s)",
               v1.verified.at(DigestScheme::Vulnerable),
               v1.leaked_secret ? to_hex(*v1.leaked_secret).c_str() : "none",
               snp.verified.at(DigestScheme::SnpStyle), snp.leaked_secret ? "yes" : "none",
               deterministic, elapsed, kEndToEndBudgetSeconds));
}

// ---------------------------------------------------------------------------
// 4: block counts
// ---------------------------------------------------------------------------

void block_count_criterion()
{
    const std::uint64_t size = parse_size("3.5MiB");
    // Ceiling-division oracle over plain integers.
    const auto oracle = [](std::uint64_t n, std::uint64_t d) { return (n + d - 1) / d; };
    const auto b16 = block_count(size, 16);
    const auto b4k = block_count(size, 4096);
    report(4, "block-count figures",
           size == 3670016 && b16 == 229376 && b16 == oracle(size, 16) && b4k == 896 &&
               b4k == oracle(size, 4096),
           fmt("3.5 MiB: %llu 16-byte blocks, %llu 4 KiB pages",
               static_cast<unsigned long long>(b16), static_cast<unsigned long long>(b4k)));
}

// ---------------------------------------------------------------------------
// 5: state machine
// ---------------------------------------------------------------------------

struct MachineDriver {
    SeededRng rng{5};
    SecureProcessor sp{rng};
    GuestOwner owner{rng};
    PhysicalMemory mem{1u << 20};
    GuestAddressSpace space;

    MachineDriver() { owner.establish(sp.pdh_public()); }

    GuestContext reach(GuestState s)
    {
        auto ctx = sp.create_context(DigestScheme::Vulnerable);
        if (s == GuestState::Uninit)
            return ctx;
        sp.launch_start(ctx, owner.public_key(), Policy{});
        space.map_range(0, 0x10000, 2 * kPageSize, true);
        space.bind_cipher(ctx.key_slot());
        mem.hv_write(0x10000, Bytes(16, 1));
        sp.launch_update_data(ctx, mem, {0x10000, 0, 16});
        if (s == GuestState::LUpdate)
            return ctx;
        sp.launch_measure(ctx);
        if (s == GuestState::LSecret)
            return ctx;
        sp.launch_finish(ctx);
        return ctx;
    }

    void issue(GuestContext& ctx, LaunchCommand c)
    {
        switch (c) {
        case LaunchCommand::LaunchStart: sp.launch_start(ctx, owner.public_key(), Policy{}); break;
        case LaunchCommand::LaunchUpdateData: sp.launch_update_data(ctx, mem, {0x10000, 0, 16}); break;
        case LaunchCommand::LaunchUpdateVmsa: sp.launch_update_vmsa(ctx, mem, 0x11000); break;
        case LaunchCommand::LaunchMeasure: sp.launch_measure(ctx); break;
        case LaunchCommand::LaunchSecret:
            sp.launch_secret(ctx, space, mem, owner.package_secret(Bytes(16, 7)), 0x1000);
            break;
        case LaunchCommand::LaunchFinish: sp.launch_finish(ctx); break;
        }
    }
};

void state_machine_criterion()
{
    using S = GuestState;
    using C = LaunchCommand;
    // Reference table, independent of the library's transition function.
    const std::map<std::pair<S, C>, S> legal = {
        {{S::Uninit, C::LaunchStart}, S::LUpdate},      {{S::LUpdate, C::LaunchUpdateData}, S::LUpdate},
        {{S::LUpdate, C::LaunchUpdateVmsa}, S::LUpdate}, {{S::LUpdate, C::LaunchMeasure}, S::LSecret},
        {{S::LSecret, C::LaunchSecret}, S::LSecret},     {{S::LSecret, C::LaunchFinish}, S::Running},
    };
    std::size_t pairs = 0, accepted = 0, rejected = 0, wrong = 0;
    for (auto s : kAllGuestStates) {
        for (auto c : kAllLaunchCommands) {
            ++pairs;
            MachineDriver d;
            auto ctx = d.reach(s);
            std::optional<Errc> err;
            try {
                d.issue(ctx, c);
            } catch (const Error& e) {
                err = e.code();
            }
            const auto it = legal.find({s, c});
            if (it != legal.end()) {
                if (!err && ctx.state() == it->second)
                    ++accepted;
                else
                    ++wrong;
            } else {
                if (err == Errc::InvalidState && ctx.state() == s)
                    ++rejected;
                else
                    ++wrong;
            }
        }
    }
    report(5, "state machine", accepted == 6 && wrong == 0 && rejected == pairs - 6,
           fmt("%zu pairs: %zu legal transitions, %zu rejected with InvalidState, %zu mismatches", pairs,
               accepted, rejected, wrong));
}

// ---------------------------------------------------------------------------
// 6: secret channel
// ---------------------------------------------------------------------------

void secret_channel_criterion()
{
    SeededRng rng(6);
    SecureProcessor sp(rng);
    GuestOwner owner(rng);
    owner.establish(sp.pdh_public());
    auto ctx = sp.launch_start(owner.public_key(), Policy{}, DigestScheme::Vulnerable);
    PhysicalMemory mem(1u << 20);
    GuestAddressSpace space;
    space.map_range(0, 0x10000, kPageSize, true);
    space.bind_cipher(ctx.key_slot());
    mem.hv_write(0x10000, Bytes(16, 3));
    sp.launch_update_data(ctx, mem, {0x10000, 0, 16});
    sp.launch_measure(ctx);

    Gen g(66);
    std::size_t false_accepts = 0, false_rejects = 0, flipped = 0, wrong_tik = 0;
    auto rejected_with_hmac = [&](const SecretPacket& p) {
        try {
            sp.launch_secret(ctx, space, mem, p, 0x100);
        } catch (const Error& e) {
            return e.code() == Errc::BadHmac;
        }
        return false;
    };
    for (std::size_t t = 0; t < kPacketTrials; ++t) {
        const auto secret = g.bytes(g.range(1, 96));
        const auto packet = owner.package_secret(secret);
        try {
            sp.launch_secret(ctx, space, mem, packet, 0x100);
            if (guest_read(space, mem, 0x100, secret.size()) != secret)
                ++false_rejects;
        } catch (const Error&) {
            ++false_rejects;
        }
        SecretPacket bad;
        if (g.coin()) {
            auto wire = packet.serialize();
            wire[g.range(0, wire.size() - 1)] ^= static_cast<std::uint8_t>(g.range(1, 255));
            bad = SecretPacket::parse(wire);
            ++flipped;
        } else {
            Nonce iv = g.array<16>();
            bad = wrap_secret(secret, owner.session().tek, g.array<32>(), iv);
            ++wrong_tik;
        }
        if (!rejected_with_hmac(bad))
            ++false_accepts;
    }
    report(6, "secret-channel integrity", false_accepts == 0 && false_rejects == 0,
           fmt("%zu honest packets, %zu flipped-byte and %zu wrong-TIK packets; %zu false accepts, "
               "%zu false rejects",
               kPacketTrials, flipped, wrong_tik, false_accepts, false_rejects));
}

// ---------------------------------------------------------------------------
// 7: copy payload
// ---------------------------------------------------------------------------

void copy_payload_criterion()
{
    const auto p = copy_payload();
    std::vector<InstrKind> kinds;
    for (std::size_t off = 0; off < p.size();) {
        const auto ins = decode_at(p, off);
        kinds.push_back(ins.kind);
        off += ins.length;
    }
    const std::vector<InstrKind> listing = {InstrKind::PopRsi, InstrKind::PopRdi, InstrKind::PopRcx,
                                            InstrKind::RepMovsb, InstrKind::Hlt};
    report(7, "copy payload fidelity", to_hex(p) == "5e5f59f3a4f4" && kinds == listing,
           fmt("bytes %s, %zu instructions", to_hex(p).c_str(), kinds.size()));
}

// ---------------------------------------------------------------------------
// 8: fetch encryption
// ---------------------------------------------------------------------------

/// Benign instructions a payload is built from; hlt is appended.
Bytes random_payload(Gen& g)
{
    static const std::vector<Bytes> pieces = {
        {0x90}, {0x0f, 0xa2}, {0xeb, 0x00}, {0x58}, {0x5a}, {0x5e}, {0x5f}, {0x59},
    };
    Bytes out;
    const auto n = g.range(0, 30);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& p = pieces[g.range(0, pieces.size() - 1)];
        out.insert(out.end(), p.begin(), p.end());
    }
    out.push_back(0xf4);
    return out;
}

void fetch_encryption_criterion()
{
    constexpr std::uint64_t code = 0x10000, scratch = 0x20000, stack = 0x30000, shared = 0x40000;
    Gen g(88);
    std::size_t shared_halts = 0, shared_intended = 0, rop_intended = 0;
    for (std::size_t t = 0; t < kPayloadTrials; ++t) {
        const Key128 vek = g.array<16>();
        auto cipher = std::make_shared<const MemoryCipher>(vek);
        PhysicalMemory mem(1u << 20);
        GuestAddressSpace space;
        space.map(code, 0x50000, true);
        space.map(scratch, 0x60000, true);
        space.map(stack, 0x70000, true);
        space.map(shared, 0x80000, false);
        space.set_ghcb(shared);
        space.bind_cipher(cipher);
        // Guest-owned gadgets.
        guest_write(space, mem, code, Bytes{0x58, 0xc3, 0x5a, 0xc3, 0x48, 0x89, 0x10, 0xc3});
        const auto payload = random_payload(g);

        // Plaintext dropped on the shared page, then jumped to.
        mem.hv_write(space.translate(shared) + 0x800, payload);
        CpuState cpu;
        cpu.rip = shared + 0x800;
        cpu.rsp = stack + 0x800;
        const auto direct = run(cpu, space, mem, {}, kPayloadStepBudget);
        const std::uint64_t direct_end = shared + 0x800 + payload.size();
        if (direct.outcome == RunOutcome::Halt) {
            ++shared_halts;
            shared_intended += direct.cpu.rip == direct_end;
        }

        // Same bytes written by guest stores through the ROP chain.
        const auto gadgets = scan_rop_gadgets(guest_read(space, mem, code, 8), code);
        const auto chain = build_write_chain(gadgets, code_writes(payload, scratch), scratch);
        CpuState rop_cpu;
        rop_cpu.rsp = shared + 0x100;
        const auto via_rop = execute_rop(rop_cpu, space, mem, chain, shared, {}, kPayloadStepBudget);
        rop_intended += via_rop.outcome == RunOutcome::Halt && via_rop.cpu.rip == scratch + payload.size();
    }
    report(8, "fetch-encryption property", shared_halts == 0 && rop_intended == kPayloadTrials,
           fmt("%zu payloads: shared-page runs halted %zu times (%zu at the intended hlt); ROP path "
               "reached the intended hlt %zu times",
               kPayloadTrials, shared_halts, shared_intended, rop_intended));
}

// ---------------------------------------------------------------------------
// 9: page remap under HpaBound
// ---------------------------------------------------------------------------

void page_remap_criterion()
{
    const auto image = build_test_image(kImageSeed);
    const auto trial = run_page_remap_trial(image.bytes, DigestScheme::HpaBound, 0, 1, kRunSeed);
    const auto snp = run_page_remap_trial(image.bytes, DigestScheme::SnpStyle, 0, 1, kRunSeed);
    const auto matrix = evaluate_mitigations(image.bytes, kMatrixTrials, kRunSeed);
    const auto& cell = matrix.at(LoadVariant::PageRemapped, DigestScheme::HpaBound);
    report(9, "HPA-digest limitation",
           trial.verified && trial.guest_view_changed && cell.flagged && cell.verified == kMatrixTrials,
           fmt("HpaBound verified=%d guest_view_changed=%d; matrix cell %zu/%zu verified, flagged=%d; "
               "SnpStyle verified=%d",
               trial.verified, trial.guest_view_changed, cell.verified, cell.trials, cell.flagged,
               snp.verified));
}

}  // namespace

int main()
{
    const std::vector<std::function<void()>> criteria = {
        permutation_criteria,   end_to_end_criterion,   block_count_criterion,
        state_machine_criterion, secret_channel_criterion, copy_payload_criterion,
        fetch_encryption_criterion, page_remap_criterion,
    };
    for (const auto& c : criteria) {
        try {
            c();
        } catch (const std::exception& e) {
            std::printf("FAIL criterion aborted: %s\n", e.what());
            ++failures;
        }
    }
    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
