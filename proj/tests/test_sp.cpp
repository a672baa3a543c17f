#include <gtest/gtest.h>

#include <sstream>

#include "json.hpp"
#include "sevsim/owner.hpp"
#include "sevsim/sp.hpp"
#include "support.hpp"

using namespace sevsim;
using sevsim::testing::error_of;
using sevsim::testing::Gen;

namespace {

constexpr std::uint64_t kHpa = 0x100000;

struct Launch {
    SeededRng rng;
    SecureProcessor sp;
    GuestOwner owner;
    PhysicalMemory mem{4u << 20};
    GuestAddressSpace space;

    explicit Launch(std::uint64_t seed = 1) : rng(seed), sp(rng), owner(rng)
    {
        owner.establish(sp.pdh_public());
    }

    GuestContext start(DigestScheme scheme = DigestScheme::Vulnerable)
    {
        auto ctx = sp.launch_start(owner.public_key(), Policy{1}, scheme);
        space.map_range(0x10000, kHpa, 4 * kPageSize, true);
        space.bind_cipher(ctx.key_slot());
        return ctx;
    }

    /// Drives ctx into the given state through the legal path.
    GuestContext in_state(GuestState s)
    {
        if (s == GuestState::Uninit)
            return sp.create_context(DigestScheme::Vulnerable);
        auto ctx = start();
        mem.hv_write(kHpa, Bytes(16, 1));
        sp.launch_update_data(ctx, mem, {kHpa, 0x10000, 16});
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
        case LaunchCommand::LaunchStart: sp.launch_start(ctx, owner.public_key(), Policy{1}); break;
        case LaunchCommand::LaunchUpdateData:
            mem.hv_write(kHpa + 0x1000, Bytes(32, 2));
            sp.launch_update_data(ctx, mem, {kHpa + 0x1000, 0x11000, 32});
            break;
        case LaunchCommand::LaunchUpdateVmsa: sp.launch_update_vmsa(ctx, mem, kHpa + 0x2000); break;
        case LaunchCommand::LaunchMeasure: sp.launch_measure(ctx); break;
        case LaunchCommand::LaunchSecret:
            sp.launch_secret(ctx, space, mem, owner.package_secret(Bytes(32, 9)), 0x12000);
            break;
        case LaunchCommand::LaunchFinish: sp.launch_finish(ctx); break;
        }
    }
};

}  // namespace

TEST(StateMachine, ExhaustiveTable)
{
    int legal = 0;
    for (auto state : kAllGuestStates) {
        for (auto cmd : kAllLaunchCommands) {
            Launch l;
            auto ctx = l.in_state(state);
            ASSERT_EQ(ctx.state(), state);
            const auto expected = next_state(state, cmd);
            const auto err = error_of([&] { l.issue(ctx, cmd); });
            if (expected) {
                ++legal;
                EXPECT_FALSE(err) << state_name(state) << " " << command_name(cmd);
                EXPECT_EQ(ctx.state(), *expected);
            } else {
                EXPECT_EQ(err, Errc::InvalidState) << state_name(state) << " " << command_name(cmd);
                EXPECT_EQ(ctx.state(), state);
            }
        }
    }
    EXPECT_EQ(legal, 6);
}

TEST(StateMachine, TransitionTable)
{
    using S = GuestState;
    using C = LaunchCommand;
    EXPECT_EQ(next_state(S::Uninit, C::LaunchStart), S::LUpdate);
    EXPECT_EQ(next_state(S::LUpdate, C::LaunchUpdateData), S::LUpdate);
    EXPECT_EQ(next_state(S::LUpdate, C::LaunchUpdateVmsa), S::LUpdate);
    EXPECT_EQ(next_state(S::LUpdate, C::LaunchMeasure), S::LSecret);
    EXPECT_EQ(next_state(S::LSecret, C::LaunchSecret), S::LSecret);
    EXPECT_EQ(next_state(S::LSecret, C::LaunchFinish), S::Running);
    EXPECT_FALSE(next_state(S::Running, C::LaunchSecret));
    EXPECT_FALSE(next_state(S::LSecret, C::LaunchUpdateData));
}

TEST(Sp, StartGivesFreshKeysPerGuest)
{
    Launch l;
    auto a = l.start();
    auto b = l.sp.launch_start(l.owner.public_key(), Policy{1}, DigestScheme::Vulnerable);
    EXPECT_EQ(a.state(), GuestState::LUpdate);
    EXPECT_NE(a.handle(), b.handle());
    // Distinct VEKs: the same plaintext block encrypts differently.
    EXPECT_NE(a.key_slot()->encrypt(Block{}, 0), b.key_slot()->encrypt(Block{}, 0));
}

TEST(Sp, BadOwnerKeyRejected)
{
    Launch l;
    auto ctx = l.sp.create_context(DigestScheme::Vulnerable);
    EXPECT_EQ(error_of([&] { l.sp.launch_start(ctx, DhPublicKey{}, Policy{}); }), Errc::InvalidPublicKey);
    EXPECT_EQ(ctx.state(), GuestState::Uninit);
}

TEST(Sp, UpdateDataEncryptsInPlaceAndMeasuresPlaintext)
{
    Launch l;
    auto ctx = l.start();
    Gen g(2);
    const auto data = g.bytes(64);
    l.mem.hv_write(kHpa, data);
    l.sp.launch_update_data(ctx, l.mem, {kHpa, 0x10000, 64});
    EXPECT_NE(l.mem.hv_read(kHpa, 64), data);
    EXPECT_EQ(guest_read(l.space, l.mem, 0x10000, 64), data);
    EXPECT_EQ(ctx.load_count(), 1u);

    EXPECT_EQ(error_of([&] { l.sp.launch_update_data(ctx, l.mem, {kHpa, 0, 24}); }), Errc::LengthNotMultipleOf16);
    EXPECT_EQ(error_of([&] { l.sp.launch_update_data(ctx, l.mem, {kHpa + 8, 0, 16}); }), Errc::UnalignedAddress);
    EXPECT_EQ(ctx.load_count(), 1u);
}

TEST(Sp, SwappedHpasSameMeasurementUnderVulnerable)
{
    Gen g(3);
    const auto a = g.bytes(16), b = g.bytes(16);
    auto run = [&](bool swapped) {
        Launch l(7);
        auto ctx = l.start();
        const std::uint64_t ha = swapped ? kHpa + 16 : kHpa, hb = swapped ? kHpa : kHpa + 16;
        l.mem.hv_write(ha, a);
        l.mem.hv_write(hb, b);
        l.sp.launch_update_data(ctx, l.mem, {ha, 0x10000, 16});
        l.sp.launch_update_data(ctx, l.mem, {hb, 0x10010, 16});
        return l.sp.launch_measure(ctx);
    };
    EXPECT_EQ(run(false), run(true));
}

TEST(Sp, VmsaEqualsPageLoadAtSameHpa)
{
    Gen g(4);
    const auto page = g.bytes(kPageSize);
    auto run = [&](bool vmsa) {
        Launch l(9);
        auto ctx = l.start(DigestScheme::SnpStyle);
        l.mem.hv_write(kHpa, page);
        if (vmsa)
            l.sp.launch_update_vmsa(ctx, l.mem, kHpa);
        else
            l.sp.launch_update_data(ctx, l.mem, {kHpa, kHpa, kPageSize});
        return l.sp.launch_measure(ctx);
    };
    EXPECT_EQ(run(true), run(false));

    Launch l;
    auto ctx = l.start();
    l.sp.launch_update_vmsa(ctx, l.mem, kHpa);
    EXPECT_NO_THROW(l.sp.launch_update_vmsa(ctx, l.mem, kHpa + kPageSize));
    EXPECT_EQ(error_of([&] { l.sp.launch_update_vmsa(ctx, l.mem, kHpa + 16); }), Errc::UnalignedAddress);
}

TEST(Sp, MeasurementVerifiesUnderOwnerTik)
{
    Launch l;
    auto ctx = l.start();
    Gen g(5);
    const auto image = g.bytes(2 * kPageSize);
    l.mem.hv_write(kHpa, image);
    const auto plan = contiguous_plan(image.size(), 0x10000, kHpa, DigestScheme::Vulnerable);
    for (const auto& c : plan.entries)
        l.sp.launch_update_data(ctx, l.mem, c);
    const auto m = l.sp.launch_measure(ctx);
    EXPECT_EQ(ctx.state(), GuestState::LSecret);
    EXPECT_TRUE(verify_measurement(m, image, plan, Policy{1}, l.sp.version(), l.owner.session().tik));
    EXPECT_EQ(error_of([&] { l.sp.launch_measure(ctx); }), Errc::InvalidState);
}

TEST(Sp, SecretInjectionAndForgery)
{
    Launch l;
    auto ctx = l.in_state(GuestState::LSecret);
    Gen g(6);
    const auto secret = g.bytes(32);
    l.sp.launch_secret(ctx, l.space, l.mem, l.owner.package_secret(secret), 0x12000);
    EXPECT_EQ(guest_read(l.space, l.mem, 0x12000, 32), secret);
    EXPECT_NE(l.mem.hv_read(kHpa + 0x2000, 32), secret);

    auto forged = l.owner.package_secret(secret);
    forged.mac = g.array<32>();
    EXPECT_EQ(error_of([&] { l.sp.launch_secret(ctx, l.space, l.mem, forged, 0x12000); }), Errc::BadHmac);
    EXPECT_EQ(ctx.state(), GuestState::LSecret);

    l.sp.launch_finish(ctx);
    EXPECT_EQ(ctx.state(), GuestState::Running);
    EXPECT_EQ(error_of([&] { l.sp.launch_secret(ctx, l.space, l.mem, l.owner.package_secret(secret), 0x12000); }),
              Errc::InvalidState);
}

TEST(SpProperty, MeasurementBindsEveryByte)
{
    Gen g(7);
    const auto image = g.bytes(512);
    auto measure = [&](const Bytes& data) {
        Launch l(11);
        auto ctx = l.start();
        l.mem.hv_write(kHpa, data);
        l.sp.launch_update_data(ctx, l.mem, {kHpa, 0x10000, data.size()});
        return l.sp.launch_measure(ctx);
    };
    const auto base = measure(image);
    for (int i = 0; i < 50; ++i) {
        auto flipped = image;
        flipped[g.range(0, image.size() - 1)] ^= static_cast<std::uint8_t>(1u << g.range(0, 7));
        EXPECT_NE(measure(flipped).measure, base.measure);
    }
}

TEST(Sp, TraceLinesAreJsonWithoutKeys)
{
    std::ostringstream log;
    Launch l;
    l.sp.set_trace(&log);
    auto ctx = l.in_state(GuestState::Running);
    EXPECT_EQ(error_of([&] { l.sp.launch_finish(ctx); }), Errc::InvalidState);
    std::istringstream lines(log.str());
    int n = 0;
    for (std::string line; std::getline(lines, line); ++n) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_TRUE(j.contains("cmd"));
        EXPECT_TRUE(j.contains("state_before"));
        EXPECT_TRUE(j.contains("state_after"));
        EXPECT_TRUE(j.contains("inputs_sha256"));
        EXPECT_TRUE(j.contains("status"));
    }
    EXPECT_EQ(n, 5);
}

// The public surface hands out no key bytes.
template <typename T>
concept ExposesVek = requires(const T& t) { t.vek(); } || requires(const T& t) { t.vek_; };
template <typename T>
concept ExposesSession = requires(const T& t) { t.session(); } || requires(const T& t) { t.tik(); };

TEST(Sp, VekNeverLeavesProcessor)
{
    static_assert(!ExposesVek<GuestContext>);
    static_assert(!ExposesSession<GuestContext>);
    static_assert(!ExposesVek<SecureProcessor>);
    static_assert(!ExposesVek<MemoryCipher>);
    // key_slot() returns the opaque engine only.
    static_assert(std::is_same_v<decltype(std::declval<GuestContext>().key_slot()),
                                 std::shared_ptr<const MemoryCipher>>);
    SUCCEED();
}
