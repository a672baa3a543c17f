#include "sevsim/scenario.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "sevsim/sp.hpp"

namespace sevsim {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Synthetic image
// ---------------------------------------------------------------------------

namespace {

std::size_t uniform(Rng& rng, std::size_t lo, std::size_t hi_inclusive)
{
    return lo + static_cast<std::size_t>(rng.next_u64() % (hi_inclusive - lo + 1));
}

void put(Bytes& image, std::size_t offset, std::initializer_list<std::uint8_t> bytes)
{
    std::copy(bytes.begin(), bytes.end(), image.begin() + static_cast<std::ptrdiff_t>(offset));
}

}  // namespace

SyntheticImage build_test_image(std::uint64_t seed, std::size_t size, const GuestLayout& layout)
{
    if (size % kPageSize != 0 || size < 2 * kPageSize)
        throw Error(Errc::InvalidArgument, "image size must be a multiple of 4096 and >= 8192");
    SeededRng rng(seed);
    SyntheticImage out;
    out.bytes = rng.draw_bytes(size);
    auto& img = out.bytes;
    auto& truth = out.truth;
    const std::size_t blocks = size / kBlockSize;

    // Hook slot plus the two slots after it receive the chain; block 0 and
    // the config record must stay outside that window.
    std::set<std::size_t> taken = {0};
    truth.hook_block = uniform(rng, 1, blocks - 3);
    taken.insert({truth.hook_block, truth.hook_block + 1, truth.hook_block + 2});
    auto fresh_block = [&] {
        for (;;) {
            const auto b = uniform(rng, 1, blocks - 1);
            if (taken.insert(b).second)
                return b;
        }
    };
    truth.config_block = fresh_block();
    truth.hook_entry = 0;
    truth.secret_gpa = layout.secret_gpa;
    truth.do_not_move = {truth.boot_block, truth.config_block};

    // Boot stub: cpuid, then jmp rel32 to the hook block. Rest is hlt.
    std::fill_n(img.begin(), kBlockSize, 0xf4);
    const auto disp = static_cast<std::int32_t>(truth.hook_block * kBlockSize) - 7;
    put(img, 0, {0x0f, 0xa2});
    const auto jmp = encode(Instr{InstrKind::JmpRel32, 5, disp});
    std::copy(jmp.begin(), jmp.end(), img.begin() + 2);

    // Honest continuation at the hook.
    const std::size_t hook = truth.hook_block * kBlockSize;
    std::fill_n(img.begin() + static_cast<std::ptrdiff_t>(hook), kBlockSize - 1, 0x90);
    img[hook + kBlockSize - 1] = 0xf4;

    const std::size_t cfg = truth.config_block * kBlockSize;
    std::copy(kSecretTableMagic.begin(), kSecretTableMagic.end(), img.begin() + static_cast<std::ptrdiff_t>(cfg));
    for (int i = 0; i < 8; ++i)
        img[cfg + 8 + i] = static_cast<std::uint8_t>(layout.secret_gpa >> (8 * i));

    // Hijack links: cpuid at the hook entry, mov esp, ecx at e1, ret at 15.
    const auto e1 = static_cast<std::uint8_t>(uniform(rng, 0, 12));
    const std::size_t l1 = fresh_block(), l2 = fresh_block(), l3 = fresh_block();
    put(img, l1 * kBlockSize, {0x0f, 0xa2, 0xeb, static_cast<std::uint8_t>(12 + e1)});
    put(img, l2 * kBlockSize + e1, {0x89, 0xcc, 0xeb, static_cast<std::uint8_t>(27 - e1)});
    img[l3 * kBlockSize + 15] = 0xc3;
    truth.chain_links = {
        ChainLink{l1, 0, InstrKind::Cpuid, ExitKind::Jmp, e1, InstrKind::JmpRel8},
        ChainLink{l2, e1, InstrKind::MovEspEcx, ExitKind::Jmp, 15, InstrKind::JmpRel8},
        ChainLink{l3, 15, InstrKind::Ret, ExitKind::Fallthrough, 0, InstrKind::Unknown},
    };

    const std::pair<RopKind, Bytes> gadgets[] = {
        {RopKind::PopRax, {0x58, 0xc3}},
        {RopKind::PopRdx, {0x5a, 0xc3}},
        {RopKind::WriteRdxToRax, {0x48, 0x89, 0x10, 0x90, 0xc3}},
    };
    for (const auto& [kind, pattern] : gadgets) {
        const std::size_t at = fresh_block() * kBlockSize + uniform(rng, 0, kBlockSize - pattern.size());
        std::copy(pattern.begin(), pattern.end(), img.begin() + static_cast<std::ptrdiff_t>(at));
        truth.rop_gadgets.push_back(RopGadget{at, kind, pattern});
    }
    return out;
}

std::optional<std::uint64_t> locate_secret_table(ByteSpan image)
{
    for (std::size_t off = 0; off + kBlockSize <= image.size(); off += kBlockSize)
        if (std::equal(kSecretTableMagic.begin(), kSecretTableMagic.end(), image.begin() + static_cast<std::ptrdiff_t>(off)))
            return load_le64(image.subspan(off + 8, 8));
    return std::nullopt;
}

ImageAnalysis analyze_image(ByteSpan image)
{
    if (image.size() < kBlockSize || image.size() % kBlockSize != 0)
        throw Error(Errc::InvalidArgument, "image must be a non-empty multiple of 16 bytes");
    const Instr first = decode_at(image, 0);
    if (first.kind != InstrKind::Cpuid)
        throw Error(Errc::InvalidArgument, "boot stub does not start with cpuid");
    const Instr jump = decode_at(image, first.length);
    if (!jump.is_jump())
        throw Error(Errc::InvalidArgument, "boot stub does not jump to a hook");
    const std::int64_t target = static_cast<std::int64_t>(first.length + jump.length) + jump.disp;
    if (target < 0 || target >= static_cast<std::int64_t>(image.size()))
        throw Error(Errc::InvalidArgument, "boot stub jumps outside the image");

    ImageAnalysis a;
    a.hook_block = static_cast<std::size_t>(target) / kBlockSize;
    a.hook_entry = static_cast<std::uint8_t>(target % kBlockSize);
    a.boot_cpuid_count = 1;
    bool found = false;
    for (std::size_t off = 0; off + kBlockSize <= image.size(); off += kBlockSize) {
        if (std::equal(kSecretTableMagic.begin(), kSecretTableMagic.end(), image.begin() + static_cast<std::ptrdiff_t>(off))) {
            a.config_block = off / kBlockSize;
            a.secret_gpa = load_le64(image.subspan(off + 8, 8));
            found = true;
            break;
        }
    }
    if (!found)
        throw Error(Errc::InvalidArgument, "no configuration record in image");
    a.do_not_move = {0, a.config_block};
    return a;
}

PermutationPlan plan_attack(ByteSpan image, const GuestLayout& layout)
{
    const auto a = analyze_image(image);
    ChainSearchOptions opts;
    opts.entry_offset = a.hook_entry;
    opts.excluded_blocks = a.do_not_move;
    const auto chain = build_block_chain(image, kStackHijackSequence, opts);
    return plan_permutation(image, chain, a.hook_block, a.do_not_move, layout.image_gpa,
                            layout.image_hpa());
}

// ---------------------------------------------------------------------------
// Launch environment
// ---------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0)
{
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

/// One guest: SP, owner, host memory and the hypervisor's GPA map.
class LaunchEnv {
public:
    LaunchEnv(const GuestLayout& layout, Policy policy, std::uint64_t seed, DigestScheme scheme,
              std::size_t image_size, std::ostream* sp_trace)
        : layout_(layout), policy_(policy), rng_(seed), sp_(rng_), owner_(rng_)
    {
        sp_.set_trace(sp_trace);
        ctx_.emplace(sp_.launch_start(owner_.public_key(), policy, scheme));
        owner_.establish(sp_.pdh_public());

        space_.map_range(layout.image_gpa, layout.image_hpa(), image_size, true);
        space_.map_range(layout.stack_gpa, layout.hpa(layout.stack_gpa),
                         layout.initial_rsp - layout.stack_gpa + kPageSize, true);
        space_.map_range(layout.secret_gpa, layout.hpa(layout.secret_gpa), kPageSize, true);
        space_.map_range(layout.scratch_gpa, layout.hpa(layout.scratch_gpa), kPageSize, true);
        const auto ghcb_page = align_down(layout.ghcb_gpa, kPageSize);
        space_.map(ghcb_page, layout.hpa(ghcb_page), false);
        space_.set_ghcb(layout.ghcb_gpa);
        space_.bind_cipher(ctx_->key_slot());
    }

    /// Places each call's slice of data at its HPA and issues the load.
    void load(ByteSpan data, std::span<const LoadCall> calls)
    {
        std::size_t off = 0;
        for (const auto& c : calls) {
            if (off + c.length > data.size())
                throw Error(Errc::PlanImageMismatch, "load calls exceed the image");
            mem_.hv_write(c.hpa, data.subspan(off, c.length));
            sp_.launch_update_data(*ctx_, mem_, c);
            off += c.length;
        }
        if (off != data.size())
            throw Error(Errc::PlanImageMismatch, "load calls do not cover the image");
    }

    Measurement measure() { return sp_.launch_measure(*ctx_); }

    bool owner_verifies(const Measurement& m, ByteSpan image, const LoadPlan& owner_plan) const
    {
        return verify_measurement(m, image, owner_plan, policy_, sp_.version(), owner_.session().tik);
    }

    Measurement owner_expectation(const Measurement& m, ByteSpan image, const LoadPlan& owner_plan) const
    {
        return expected_measurement(image, owner_plan, policy_, sp_.version(), m.mnonce,
                                    owner_.session().tik);
    }

    void inject_secret(ByteSpan secret, std::uint64_t gpa)
    {
        const auto packet = owner_.package_secret(secret);
        sp_.launch_secret(*ctx_, space_, mem_, packet, gpa);
        sp_.launch_finish(*ctx_);
    }

    Bytes ghcb_page() const
    {
        return mem_.hv_read(space_.translate(align_down(layout_.ghcb_gpa, kPageSize)), kPageSize);
    }

    GuestAddressSpace& space() { return space_; }
    PhysicalMemory& mem() { return mem_; }

private:
    GuestLayout layout_;
    Policy policy_;
    SeededRng rng_;
    SecureProcessor sp_;
    GuestOwner owner_;
    std::optional<GuestContext> ctx_;
    PhysicalMemory mem_;
    GuestAddressSpace space_;
};

bool contains(ByteSpan haystack, ByteSpan needle)
{
    return !needle.empty() &&
           std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) != haystack.end();
}

void record_run(ScenarioReport& r, const RunResult& run)
{
    r.outcome = run.outcome;
    r.fault = run.fault;
    r.steps = run.steps;
    r.cpuid_count = run.cpu.cpuid_count;
    r.transcript = run.transcript;
}

}  // namespace

ScenarioReport run_honest_launch(ByteSpan image, const LoadPlan& plan, ByteSpan secret,
                                 DigestScheme scheme, const ScenarioOptions& options)
{
    const auto t_total = Clock::now();
    ScenarioReport r;
    r.mode = "honest";
    r.scheme = scheme;
    r.injected_secret.assign(secret.begin(), secret.end());
    LoadPlan owner_plan = plan;
    owner_plan.scheme = scheme;
    const auto& layout = options.layout;

    auto t = Clock::now();
    LaunchEnv env(layout, options.policy, options.seed, scheme, image.size(), options.sp_trace);
    Bytes loaded(image.begin(), image.end());
    if (options.tamper_offset) {
        if (*options.tamper_offset >= loaded.size())
            throw Error(Errc::OutOfBounds, "tamper offset outside the image");
        loaded[*options.tamper_offset] ^= 0x01;
    }
    env.load(loaded, owner_plan.entries);
    r.timings.push_back({"load", ms_since(t)});

    t = Clock::now();
    const auto m = env.measure();
    r.attack_measurement.reset();
    r.honest_measurement = m;
    r.verified[scheme] = env.owner_verifies(m, image, owner_plan);
    r.timings.push_back({"measure_verify", ms_since(t)});

    if (r.verified[scheme]) {
        t = Clock::now();
        const auto secret_gpa = locate_secret_table(image).value_or(layout.secret_gpa);
        env.inject_secret(secret, secret_gpa);
        r.secret_injected = true;
        r.guest_reads_secret =
            guest_read(env.space(), env.mem(), secret_gpa, secret.size()) == r.injected_secret;
        r.timings.push_back({"secret", ms_since(t)});

        t = Clock::now();
        CpuState cpu;
        cpu.rip = layout.image_gpa;
        cpu.rsp = layout.initial_rsp;
        record_run(r, run(cpu, env.space(), env.mem(), HvHooks{}, options.max_steps, options.transcript));
        r.timings.push_back({"guest_run", ms_since(t)});
    }
    r.secret_on_shared_page = contains(env.ghcb_page(), secret);
    r.timings.push_back({"total", ms_since(t_total)});
    return r;
}

ScenarioReport run_permutation_attack(ByteSpan image, ByteSpan secret, DigestScheme scheme,
                                      const ScenarioOptions& options,
                                      const std::optional<PermutationPlan>& plan_override)
{
    const auto t_total = Clock::now();
    ScenarioReport r;
    r.mode = "attack";
    r.scheme = scheme;
    r.injected_secret.assign(secret.begin(), secret.end());
    const auto& layout = options.layout;

    auto t = Clock::now();
    const auto analysis = analyze_image(image);
    const PermutationPlan plan = plan_override ? *plan_override : plan_attack(image, layout);
    r.plan = plan;
    r.timings.push_back({"plan", ms_since(t)});

    t = Clock::now();
    LaunchEnv env(layout, options.policy, options.seed, scheme, image.size(), options.sp_trace);
    const Bytes placed = plan.placed_image(image);
    Bytes data_order(image.begin(), image.end());
    if (options.tamper_offset) {
        if (*options.tamper_offset >= data_order.size())
            throw Error(Errc::OutOfBounds, "tamper offset outside the image");
        data_order[*options.tamper_offset] ^= 0x01;
    }
    env.load(data_order, plan.load_order);
    r.timings.push_back({"load", ms_since(t)});

    t = Clock::now();
    const auto owner_plan =
        contiguous_plan(image.size(), layout.image_gpa, layout.image_hpa(), scheme);
    const auto m = env.measure();
    r.attack_measurement = m;
    r.honest_measurement = env.owner_expectation(m, image, owner_plan);
    r.verified[scheme] = env.owner_verifies(m, image, owner_plan);
    r.timings.push_back({"measure_verify", ms_since(t)});

    if (!r.verified[scheme]) {
        r.timings.push_back({"total", ms_since(t_total)});
        return r;
    }

    t = Clock::now();
    env.inject_secret(secret, analysis.secret_gpa);
    r.secret_injected = true;
    r.guest_reads_secret =
        guest_read(env.space(), env.mem(), analysis.secret_gpa, secret.size()) == r.injected_secret;
    r.timings.push_back({"secret", ms_since(t)});

    // Stage 2 material on the GHCB: the write chain that plants the copy
    // payload, then the payload's own pops (source, destination, count).
    t = Clock::now();
    const auto gadgets = scan_rop_gadgets(placed, layout.image_gpa);
    const auto writes = code_writes(copy_payload(), layout.scratch_gpa);
    RopChain chain = build_write_chain(gadgets, writes, layout.scratch_gpa);
    const std::uint64_t leak_gva = layout.ghcb_gpa + layout.ghcb_leak_offset;
    chain.stack_words.insert(chain.stack_words.end(), {analysis.secret_gpa, leak_gva, secret.size()});
    for (const auto& g : gadgets)
        if (std::find(chain.stack_words.begin(), chain.stack_words.end(), g.gva) != chain.stack_words.end())
            r.gadgets_used.push_back(g);

    const std::uint64_t stack_gva = layout.ghcb_gpa + layout.ghcb_stack_offset;
    env.mem().hv_write(env.space().translate(stack_gva), chain.serialize());
    HvHooks hooks;
    hooks.cpuid_responses[analysis.boot_cpuid_count] =
        CpuidResult{0, 0, static_cast<std::uint32_t>(stack_gva), 0};

    CpuState cpu;
    cpu.rip = layout.image_gpa;
    cpu.rsp = layout.initial_rsp;
    const auto result = run(cpu, env.space(), env.mem(), hooks, options.max_steps, options.transcript);
    record_run(r, result);
    if (result.outcome == RunOutcome::Halt)
        r.leaked_secret = env.mem().hv_read(env.space().translate(leak_gva), secret.size());
    r.secret_on_shared_page = contains(env.ghcb_page(), secret);
    r.timings.push_back({"guest_run", ms_since(t)});
    r.timings.push_back({"total", ms_since(t_total)});
    return r;
}

// ---------------------------------------------------------------------------
// Mitigations
// ---------------------------------------------------------------------------

std::string_view variant_name(LoadVariant variant)
{
    switch (variant) {
    case LoadVariant::Honest: return "honest";
    case LoadVariant::AttackPermuted: return "attack-permuted";
    case LoadVariant::PageRemapped: return "page-remapped";
    }
    return "?";
}

const MitigationCell& MitigationMatrix::at(LoadVariant variant, DigestScheme scheme) const
{
    for (const auto& c : cells)
        if (c.variant == variant && c.scheme == scheme)
            return c;
    throw Error(Errc::InvalidArgument, "no such matrix cell");
}

namespace {

bool launch_verifies(ByteSpan image, std::span<const LoadCall> calls, DigestScheme scheme,
                     std::uint64_t seed, const GuestLayout& layout)
{
    LaunchEnv env(layout, Policy{}, seed, scheme, image.size(), nullptr);
    env.load(image, calls);
    const auto owner_plan =
        contiguous_plan(image.size(), layout.image_gpa, layout.image_hpa(), scheme);
    return env.owner_verifies(env.measure(), image, owner_plan);
}

std::vector<LoadCall> random_permuted_loads(std::size_t blocks, Rng& rng, const GuestLayout& layout)
{
    std::vector<std::size_t> slot(blocks);
    std::iota(slot.begin(), slot.end(), std::size_t{0});
    for (;;) {
        for (std::size_t i = blocks; i > 1; --i)
            std::swap(slot[i - 1], slot[uniform(rng, 0, i - 1)]);
        if (!std::is_sorted(slot.begin(), slot.end()))
            break;
    }
    std::vector<std::uint64_t> hpas(blocks);
    for (std::size_t b = 0; b < blocks; ++b)
        hpas[b] = layout.image_hpa() + slot[b] * kBlockSize;
    return data_order_loads(hpas, layout.image_gpa, layout.image_hpa());
}

}  // namespace

RemapTrial run_page_remap_trial(ByteSpan image, DigestScheme scheme, std::size_t page_a,
                                std::size_t page_b, std::uint64_t seed, const GuestLayout& layout)
{
    const std::size_t pages = image.size() / kPageSize;
    if (image.size() % kPageSize != 0 || page_a == page_b || page_a >= pages || page_b >= pages)
        throw Error(Errc::InvalidArgument, "remap needs two distinct pages inside a page-sized image");

    // Same HPAs, data and chunking as the honest load. Each call declares the
    // GPA its host page will actually back once the map is swapped.
    auto declared = [&](std::size_t p) { return p == page_a ? page_b : p == page_b ? page_a : p; };
    std::vector<LoadCall> calls;
    for (std::size_t p = 0; p < pages; ++p)
        calls.push_back(LoadCall{layout.image_hpa() + p * kPageSize,
                                 layout.image_gpa + declared(p) * kPageSize, kPageSize});

    LaunchEnv env(layout, Policy{}, seed, scheme, image.size(), nullptr);
    env.load(image, calls);
    const auto owner_plan =
        contiguous_plan(image.size(), layout.image_gpa, layout.image_hpa(), scheme);
    RemapTrial out;
    out.verified = env.owner_verifies(env.measure(), image, owner_plan);
    remap(env.space(), env.mem(), layout.image_gpa + page_a * kPageSize,
          layout.image_hpa() + page_b * kPageSize);
    remap(env.space(), env.mem(), layout.image_gpa + page_b * kPageSize,
          layout.image_hpa() + page_a * kPageSize);
    const auto view = guest_read(env.space(), env.mem(), layout.image_gpa, image.size());
    out.guest_view_changed = !std::equal(view.begin(), view.end(), image.begin(), image.end());
    return out;
}

MitigationMatrix evaluate_mitigations(ByteSpan image, std::size_t trials, std::uint64_t seed,
                                      const GuestLayout& layout)
{
    if (trials == 0)
        throw Error(Errc::InvalidArgument, "trials must be >= 1");
    if (image.size() % kPageSize != 0 || image.size() < 2 * kPageSize)
        throw Error(Errc::InvalidArgument, "mitigation trials need an image of >= two 4 KiB pages");

    const auto honest = contiguous_plan(image.size(), layout.image_gpa, layout.image_hpa(),
                                        DigestScheme::Vulnerable);
    const auto chain_plan = plan_attack(image, layout);
    SeededRng rng(seed);
    const std::size_t pages = image.size() / kPageSize;

    MitigationMatrix matrix;
    for (auto variant : kAllLoadVariants)
        for (auto scheme : kAllSchemes)
            matrix.cells.push_back(MitigationCell{variant, scheme, trials, 0, 0, false, {}});
    auto cell = [&](LoadVariant v, DigestScheme s) -> MitigationCell& {
        return *std::find_if(matrix.cells.begin(), matrix.cells.end(),
                             [&](const MitigationCell& c) { return c.variant == v && c.scheme == s; });
    };

    for (std::size_t trial = 0; trial < trials; ++trial) {
        const std::uint64_t trial_seed = rng.next_u64();
        const auto attack_calls = trial == 0 ? chain_plan.load_order
                                             : random_permuted_loads(image.size() / kBlockSize, rng, layout);
        const std::size_t a = uniform(rng, 0, pages - 1);
        std::size_t b = uniform(rng, 0, pages - 2);
        if (b >= a)
            ++b;
        for (auto scheme : kAllSchemes) {
            const bool results[] = {
                launch_verifies(image, honest.entries, scheme, trial_seed, layout),
                launch_verifies(image, attack_calls, scheme, trial_seed, layout),
                run_page_remap_trial(image, scheme, a, b, trial_seed, layout).verified,
            };
            for (std::size_t v = 0; v < kAllLoadVariants.size(); ++v) {
                auto& c = cell(kAllLoadVariants[v], scheme);
                (results[v] ? c.verified : c.detected) += 1;
            }
        }
    }

    for (auto& c : matrix.cells) {
        if (c.scheme == DigestScheme::Vulnerable || c.variant == LoadVariant::Honest || c.verified == 0)
            continue;
        c.flagged = true;
        c.note = c.variant == LoadVariant::PageRemapped
                     ? "accepted: a 4 KiB page remap keeps every HPA, length and byte of the honest "
                       "load; only GPA binding catches it"
                     : "accepted a permuted load";
    }
    return matrix;
}

// ---------------------------------------------------------------------------
// Utilities
// ---------------------------------------------------------------------------

std::uint64_t block_count(std::uint64_t image_size, std::uint64_t block_size)
{
    if (image_size == 0 || block_size == 0)
        throw Error(Errc::InvalidArgument, "sizes must be positive");
    return image_size / block_size + (image_size % block_size != 0 ? 1 : 0);
}

std::uint64_t parse_size(std::string_view text)
{
    double value = 0;
    const auto* begin = text.data();
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc{} || ptr == begin || value < 0)
        throw Error(Errc::InvalidArgument, "bad size '" + std::string(text) + "'");
    const std::string_view suffix(ptr, static_cast<std::size_t>(end - ptr));
    static const std::pair<std::string_view, std::uint64_t> kUnits[] = {
        {"", 1},          {"B", 1},          {"K", 1ull << 10}, {"KiB", 1ull << 10},
        {"M", 1ull << 20}, {"MiB", 1ull << 20}, {"G", 1ull << 30}, {"GiB", 1ull << 30},
    };
    for (const auto& [unit, mult] : kUnits) {
        if (suffix != unit)
            continue;
        const double bytes = value * static_cast<double>(mult);
        if (bytes != std::floor(bytes) || bytes > 1e18)
            throw Error(Errc::InvalidArgument, "size '" + std::string(text) + "' is not a whole byte count");
        return static_cast<std::uint64_t>(bytes);
    }
    throw Error(Errc::InvalidArgument, "unknown size unit in '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace {

json link_json(const ChainLink& l)
{
    json j = {{"block", l.block_index},
              {"entry", l.entry_offset},
              {"payload", kind_name(l.payload)},
              {"exit", l.exit == ExitKind::Fallthrough ? "fallthrough" : "jmp"},
              {"next_entry", l.next_entry}};
    j["jump"] = l.exit == ExitKind::Jmp ? json(kind_name(l.jump)) : json(nullptr);
    return j;
}

ChainLink link_from_json(const json& j)
{
    ChainLink l;
    l.block_index = j.at("block").get<std::size_t>();
    l.entry_offset = j.at("entry").get<std::uint8_t>();
    l.payload = parse_kind(j.at("payload").get<std::string>());
    const auto exit = j.at("exit").get<std::string>();
    if (exit != "fallthrough" && exit != "jmp")
        throw Error(Errc::InvalidArgument, "bad exit kind '" + exit + "'");
    l.exit = exit == "jmp" ? ExitKind::Jmp : ExitKind::Fallthrough;
    l.next_entry = j.at("next_entry").get<std::uint8_t>();
    if (l.exit == ExitKind::Jmp)
        l.jump = parse_kind(j.at("jump").get<std::string>());
    return l;
}

json gadget_json(const RopGadget& g)
{
    return {{"gva", g.gva}, {"kind", rop_kind_name(g.kind)}, {"bytes", to_hex(g.pattern)}};
}

json measurement_json(const Measurement& m)
{
    return {{"mnonce", to_hex(m.mnonce)}, {"measure", to_hex(m.measure)}};
}

json plan_json(const PermutationPlan& p)
{
    json placement = json::array();
    for (const auto& pl : p.placement)
        placement.push_back({{"block", pl.block_index}, {"hpa", pl.hpa}});
    json loads = json::array();
    for (const auto& c : p.load_order)
        loads.push_back({{"hpa", c.hpa}, {"gpa", c.gpa}, {"length", c.length}});
    json chain = json::array();
    for (const auto& l : p.chain)
        chain.push_back(link_json(l));
    return {{"gpa_base", p.gpa_base},
            {"hpa_base", p.hpa_base},
            {"identity", p.is_identity()},
            {"placement", placement},
            {"load_order", loads},
            {"chain", chain},
            {"chain_entry_hpa", p.chain_entry_hpa},
            {"chain_entry_offset", p.chain_entry_offset}};
}

}  // namespace

std::string report_to_json(const ScenarioReport& r, int indent)
{
    json j;
    j["mode"] = r.mode;
    j["scheme"] = scheme_name(r.scheme);
    j["honest_measurement"] = r.honest_measurement ? measurement_json(*r.honest_measurement) : json(nullptr);
    j["attack_measurement"] = r.attack_measurement ? measurement_json(*r.attack_measurement) : json(nullptr);
    if (r.honest_measurement && r.attack_measurement)
        j["measurements_equal"] = r.honest_measurement->measure == r.attack_measurement->measure;
    json verified = json::object();
    for (const auto& [scheme, ok] : r.verified)
        verified[std::string(scheme_name(scheme))] = ok;
    j["verified"] = verified;
    j["secret_injected"] = r.secret_injected;
    j["injected_secret"] = to_hex(r.injected_secret);
    j["guest_reads_secret"] = r.guest_reads_secret;
    j["leaked_secret"] = r.leaked_secret ? json(to_hex(*r.leaked_secret)) : json(nullptr);
    j["attack_succeeded"] = r.attack_succeeded();
    j["secret_on_shared_page"] = r.secret_on_shared_page;
    j["outcome"] = r.outcome ? json(run_outcome_name(*r.outcome)) : json(nullptr);
    j["fault"] = r.fault ? json(fault_name(*r.fault)) : json(nullptr);
    j["steps"] = r.steps;
    j["cpuid_count"] = r.cpuid_count;
    json timings = json::object();
    for (const auto& t : r.timings)
        timings[t.phase] = t.milliseconds;
    j["timings_ms"] = timings;
    if (r.plan) {
        j["plan_summary"] = {{"loads", r.plan->load_order.size()},
                             {"identity", r.plan->is_identity()},
                             {"chain_entry_hpa", r.plan->chain_entry_hpa}};
        json chain = json::array();
        for (const auto& l : r.plan->chain)
            chain.push_back(link_json(l));
        j["chain"] = chain;
    }
    json gadgets = json::array();
    for (const auto& g : r.gadgets_used)
        gadgets.push_back(gadget_json(g));
    j["gadgets_used"] = gadgets;
    return j.dump(indent);
}

std::string ground_truth_to_json(const ImageGroundTruth& t, int indent)
{
    json links = json::array();
    for (const auto& l : t.chain_links)
        links.push_back(link_json(l));
    json gadgets = json::array();
    for (const auto& g : t.rop_gadgets)
        gadgets.push_back(gadget_json(g));
    return json{{"boot_block", t.boot_block},
                {"hook_block", t.hook_block},
                {"hook_entry", t.hook_entry},
                {"config_block", t.config_block},
                {"secret_gpa", t.secret_gpa},
                {"do_not_move", t.do_not_move},
                {"chain_links", links},
                {"rop_gadgets", gadgets}}
        .dump(indent);
}

std::string matrix_to_json(const MitigationMatrix& m, int indent)
{
    json cells = json::array();
    for (const auto& c : m.cells)
        cells.push_back({{"variant", variant_name(c.variant)},
                         {"scheme", scheme_name(c.scheme)},
                         {"trials", c.trials},
                         {"verified", c.verified},
                         {"detected", c.detected},
                         {"flagged", c.flagged},
                         {"note", c.note}});
    return json{{"cells", cells}}.dump(indent);
}

std::string plan_to_json(const PermutationPlan& plan, int indent)
{
    return plan_json(plan).dump(indent);
}

PermutationPlan plan_from_json(std::string_view text)
{
    try {
        const auto j = json::parse(text);
        PermutationPlan p;
        p.gpa_base = j.at("gpa_base").get<std::uint64_t>();
        p.hpa_base = j.at("hpa_base").get<std::uint64_t>();
        for (const auto& pl : j.at("placement"))
            p.placement.push_back({pl.at("block").get<std::size_t>(), pl.at("hpa").get<std::uint64_t>()});
        for (const auto& c : j.at("load_order"))
            p.load_order.push_back(LoadCall{c.at("hpa").get<std::uint64_t>(), c.at("gpa").get<std::uint64_t>(),
                                            c.at("length").get<std::uint64_t>()});
        for (const auto& l : j.at("chain"))
            p.chain.push_back(link_from_json(l));
        p.chain_entry_hpa = j.at("chain_entry_hpa").get<std::uint64_t>();
        p.chain_entry_offset = j.at("chain_entry_offset").get<std::uint8_t>();

        std::vector<bool> seen(p.placement.size(), false);
        for (std::size_t slot = 0; slot < p.placement.size(); ++slot) {
            const auto& pl = p.placement[slot];
            if (pl.block_index >= seen.size() || seen[pl.block_index] ||
                pl.hpa != p.hpa_base + slot * kBlockSize)
                throw Error(Errc::InvalidArgument, "plan placement is not a permutation of slots");
            seen[pl.block_index] = true;
        }
        return p;
    } catch (const json::exception& e) {
        throw Error(Errc::InvalidArgument, std::string("plan: ") + e.what());
    }
}

std::string chain_to_json(std::span<const ChainLink> chain, int indent)
{
    json out = json::array();
    for (const auto& l : chain)
        out.push_back(link_json(l));
    return out.dump(indent);
}

std::string gadgets_to_json(std::span<const RopGadget> gadgets, int indent)
{
    json out = json::array();
    for (const auto& g : gadgets)
        out.push_back(gadget_json(g));
    return out.dump(indent);
}

}  // namespace sevsim
