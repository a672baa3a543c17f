#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sevsim/bytes.hpp"

namespace sevsim {

/// Closed instruction subset. Anything else decodes as Unknown with
/// length 1 so a scan can resynchronize one byte later.
enum class InstrKind : std::uint8_t {
    Cpuid,         // 0F A2
    MovEspEcx,     // 89 CC
    Ret,           // C3
    PopRax,        // 58
    PopRcx,        // 59
    PopRdx,        // 5A
    PopRsi,        // 5E
    PopRdi,        // 5F
    MovMemRaxRdx,  // 48 89 10     mov [rax], rdx
    RepMovsb,      // F3 A4
    Hlt,           // F4
    Nop,           // 90
    JmpRel8,       // EB ib
    JmpRel32,      // E9 id
    Unknown,
};

inline constexpr std::array<InstrKind, 14> kKnownInstrKinds = {
    InstrKind::Cpuid,  InstrKind::MovEspEcx, InstrKind::Ret,          InstrKind::PopRax,
    InstrKind::PopRcx, InstrKind::PopRdx,    InstrKind::PopRsi,       InstrKind::PopRdi,
    InstrKind::MovMemRaxRdx, InstrKind::RepMovsb, InstrKind::Hlt,     InstrKind::Nop,
    InstrKind::JmpRel8, InstrKind::JmpRel32};

struct Instr {
    InstrKind kind = InstrKind::Unknown;
    std::uint8_t length = 1;
    std::int32_t disp = 0;  ///< jumps only

    bool is_jump() const { return kind == InstrKind::JmpRel8 || kind == InstrKind::JmpRel32; }
    bool operator==(const Instr&) const = default;
};

std::string_view kind_name(InstrKind kind);
InstrKind parse_kind(std::string_view name);
std::string format_instr(const Instr& instr);

/// Canonical encoding. Unknown has none (InvalidArgument).
Bytes encode(const Instr& instr);

/// Longest match against the decode table at offset. A multi-byte
/// candidate cut off by the end of the buffer decodes as Unknown.
/// Throws OffsetOutOfRange when offset >= bytes.size().
Instr decode_at(ByteSpan bytes, std::size_t offset);

struct WindowDecode {
    std::vector<Instr> instrs;
    std::size_t consumed = 0;  ///< bytes covered by instrs
    bool crossing = false;     ///< an instruction starts in the window but ends past it
    Instr crossing_instr{};    ///< the cut-off candidate when crossing
};

/// Sequential decode of one 16-byte block starting at entry.
WindowDecode decode_window(ByteSpan block, std::size_t entry);

/// Every offset where decode_at yields kind, overlapping hits included.
std::vector<std::size_t> find_all(ByteSpan bytes, InstrKind kind);

}  // namespace sevsim
