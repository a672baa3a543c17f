#include "sevsim/disasm.hpp"

#include <cstdio>
#include <optional>

namespace sevsim {

namespace {

struct TableEntry {
    InstrKind kind;
    std::array<std::uint8_t, 3> opcode;
    std::uint8_t opcode_len;
    std::uint8_t imm_len;

    std::size_t length() const { return opcode_len + imm_len; }
};

constexpr std::array<TableEntry, 14> kTable = {{
    {InstrKind::Cpuid, {0x0f, 0xa2}, 2, 0},
    {InstrKind::MovEspEcx, {0x89, 0xcc}, 2, 0},
    {InstrKind::Ret, {0xc3}, 1, 0},
    {InstrKind::PopRax, {0x58}, 1, 0},
    {InstrKind::PopRcx, {0x59}, 1, 0},
    {InstrKind::PopRdx, {0x5a}, 1, 0},
    {InstrKind::PopRsi, {0x5e}, 1, 0},
    {InstrKind::PopRdi, {0x5f}, 1, 0},
    {InstrKind::MovMemRaxRdx, {0x48, 0x89, 0x10}, 3, 0},
    {InstrKind::RepMovsb, {0xf3, 0xa4}, 2, 0},
    {InstrKind::Hlt, {0xf4}, 1, 0},
    {InstrKind::Nop, {0x90}, 1, 0},
    {InstrKind::JmpRel8, {0xeb}, 1, 1},
    {InstrKind::JmpRel32, {0xe9}, 1, 4},
}};

const TableEntry* entry_for(InstrKind kind)
{
    for (const auto& e : kTable)
        if (e.kind == kind)
            return &e;
    return nullptr;
}

bool opcode_matches(const TableEntry& e, ByteSpan bytes, std::size_t offset, std::size_t count)
{
    for (std::size_t i = 0; i < count; ++i)
        if (bytes[offset + i] != e.opcode[i])
            return false;
    return true;
}

Instr materialize(const TableEntry& e, ByteSpan bytes, std::size_t offset)
{
    Instr ins{e.kind, static_cast<std::uint8_t>(e.length()), 0};
    const std::size_t imm = offset + e.opcode_len;
    if (e.kind == InstrKind::JmpRel8) {
        ins.disp = static_cast<std::int8_t>(bytes[imm]);
    } else if (e.kind == InstrKind::JmpRel32) {
        std::uint32_t raw = 0;
        for (int i = 3; i >= 0; --i)
            raw = raw << 8 | bytes[imm + i];
        ins.disp = static_cast<std::int32_t>(raw);
    }
    return ins;
}

/// An encoding whose visible bytes all match but which runs past the end.
std::optional<Instr> truncated_candidate(ByteSpan bytes, std::size_t offset)
{
    const std::size_t avail = bytes.size() - offset;
    for (const auto& e : kTable) {
        if (e.length() <= avail)
            continue;
        if (opcode_matches(e, bytes, offset, std::min<std::size_t>(e.opcode_len, avail)))
            return Instr{e.kind, static_cast<std::uint8_t>(e.length()), 0};
    }
    return std::nullopt;
}

}  // namespace

std::string_view kind_name(InstrKind kind)
{
    switch (kind) {
    case InstrKind::Cpuid: return "cpuid";
    case InstrKind::MovEspEcx: return "mov esp, ecx";
    case InstrKind::Ret: return "ret";
    case InstrKind::PopRax: return "pop rax";
    case InstrKind::PopRcx: return "pop rcx";
    case InstrKind::PopRdx: return "pop rdx";
    case InstrKind::PopRsi: return "pop rsi";
    case InstrKind::PopRdi: return "pop rdi";
    case InstrKind::MovMemRaxRdx: return "mov [rax], rdx";
    case InstrKind::RepMovsb: return "rep movsb";
    case InstrKind::Hlt: return "hlt";
    case InstrKind::Nop: return "nop";
    case InstrKind::JmpRel8: return "jmp rel8";
    case InstrKind::JmpRel32: return "jmp rel32";
    case InstrKind::Unknown: return "(bad)";
    }
    return "(bad)";
}

InstrKind parse_kind(std::string_view name)
{
    for (auto k : kKnownInstrKinds)
        if (kind_name(k) == name)
            return k;
    throw Error(Errc::InvalidArgument, "unknown instruction '" + std::string(name) + "'");
}

std::string format_instr(const Instr& instr)
{
    if (!instr.is_jump())
        return std::string(kind_name(instr.kind));
    char buf[32];
    std::snprintf(buf, sizeof buf, "jmp %+d", instr.disp);
    return buf;
}

Bytes encode(const Instr& instr)
{
    const auto* e = entry_for(instr.kind);
    if (e == nullptr)
        throw Error(Errc::InvalidArgument, "Unknown has no encoding");
    Bytes out(e->opcode.begin(), e->opcode.begin() + e->opcode_len);
    if (instr.kind == InstrKind::JmpRel8) {
        if (instr.disp < -128 || instr.disp > 127)
            throw Error(Errc::InvalidArgument, "rel8 displacement out of range");
        out.push_back(static_cast<std::uint8_t>(static_cast<std::int8_t>(instr.disp)));
    } else if (instr.kind == InstrKind::JmpRel32) {
        append_le32(out, static_cast<std::uint32_t>(instr.disp));
    }
    return out;
}

Instr decode_at(ByteSpan bytes, std::size_t offset)
{
    if (offset >= bytes.size())
        throw Error(Errc::OffsetOutOfRange,
                    "offset " + std::to_string(offset) + " past buffer of " + std::to_string(bytes.size()));
    const std::size_t avail = bytes.size() - offset;
    const TableEntry* best = nullptr;
    for (const auto& e : kTable) {
        if (e.length() > avail || !opcode_matches(e, bytes, offset, e.opcode_len))
            continue;
        if (best == nullptr || e.length() > best->length())
            best = &e;
    }
    if (best == nullptr)
        return Instr{};
    return materialize(*best, bytes, offset);
}

WindowDecode decode_window(ByteSpan block, std::size_t entry)
{
    if (block.size() != kBlockSize)
        throw Error(Errc::InvalidArgument, "decode_window needs exactly 16 bytes");
    if (entry >= kBlockSize)
        throw Error(Errc::OffsetOutOfRange, "window entry must be below 16");

    WindowDecode out;
    std::size_t pos = entry;
    while (pos < kBlockSize) {
        Instr ins = decode_at(block, pos);
        if (ins.kind == InstrKind::Unknown) {
            if (auto cut = truncated_candidate(block, pos)) {
                out.crossing = true;
                out.crossing_instr = *cut;
                break;
            }
        }
        out.instrs.push_back(ins);
        pos += ins.length;
    }
    out.consumed = pos - entry;
    return out;
}

std::vector<std::size_t> find_all(ByteSpan bytes, InstrKind kind)
{
    std::vector<std::size_t> hits;
    for (std::size_t off = 0; off < bytes.size(); ++off)
        if (decode_at(bytes, off).kind == kind)
            hits.push_back(off);
    return hits;
}

}  // namespace sevsim
