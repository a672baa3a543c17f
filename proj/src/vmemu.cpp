#include "sevsim/vmemu.hpp"

#include <cstdio>

namespace sevsim {

namespace {

constexpr std::size_t kMaxInstrLength = 5;
constexpr std::size_t kCopyChunk = 4096;

/// Memory errors that a real guest would see as a page fault.
bool is_access_fault(const Error& e)
{
    return e.code() == Errc::UnmappedAddress || e.code() == Errc::OutOfBounds;
}

Bytes fetch_window(const GuestAddressSpace& space, const PhysicalMemory& mem, std::uint64_t rip)
{
    // Shorter windows near the end of mapped memory; a cut-off multi-byte
    // encoding then decodes as Unknown.
    for (std::size_t len = kMaxInstrLength; len > 0; --len) {
        try {
            return fetch(space, mem, rip, len);
        } catch (const Error& e) {
            if (!is_access_fault(e))
                throw;
        }
    }
    throw Error(Errc::UnmappedAddress, "instruction fetch from unmapped gva");
}

std::uint64_t pop(CpuState& cpu, const GuestAddressSpace& space, const PhysicalMemory& mem)
{
    const auto word = load_le64(guest_read(space, mem, cpu.rsp, 8));
    cpu.rsp += 8;
    return word;
}

void rep_movsb(CpuState& cpu, const GuestAddressSpace& space, PhysicalMemory& mem)
{
    while (cpu.rcx > 0) {
        const std::uint64_t distance = cpu.rdi > cpu.rsi ? cpu.rdi - cpu.rsi : cpu.rsi - cpu.rdi;
        // Forward byte copy semantics: when the ranges may overlap inside a
        // chunk, fall back to one byte at a time.
        std::size_t n = static_cast<std::size_t>(std::min<std::uint64_t>(cpu.rcx, kCopyChunk));
        if (distance < n)
            n = 1;
        const auto bytes = guest_read(space, mem, cpu.rsi, n);
        guest_write(space, mem, cpu.rdi, bytes);
        cpu.rsi += n;
        cpu.rdi += n;
        cpu.rcx -= n;
    }
}

struct Executed {
    StepOutcome outcome;
    Instr instr;
};

Executed execute(CpuState& cpu, const GuestAddressSpace& space, PhysicalMemory& mem,
                 const HvHooks& hooks)
{
    Instr ins;
    try {
        const auto window = fetch_window(space, mem, cpu.rip);
        ins = decode_at(window, 0);
    } catch (const Error& e) {
        if (!is_access_fault(e))
            throw;
        return {StepOutcome::fault_with(FaultReason::UnmappedAddress), Instr{}};
    }
    if (ins.kind == InstrKind::Unknown)
        return {StepOutcome::fault_with(FaultReason::IllegalInstruction), ins};

    CpuState next = cpu;
    next.rip = cpu.rip + ins.length;
    StepOutcome outcome;
    try {
        switch (ins.kind) {
        case InstrKind::Cpuid: {
            const auto r = hooks.cpuid(cpu.cpuid_count);
            next.rax = r.eax;
            next.rbx = r.ebx;
            next.rcx = r.ecx;
            next.rdx = r.edx;
            ++next.cpuid_count;
            break;
        }
        case InstrKind::MovEspEcx: next.rsp = static_cast<std::uint32_t>(cpu.rcx); break;
        case InstrKind::Ret: next.rip = pop(next, space, mem); break;
        case InstrKind::PopRax: next.rax = pop(next, space, mem); break;
        case InstrKind::PopRcx: next.rcx = pop(next, space, mem); break;
        case InstrKind::PopRdx: next.rdx = pop(next, space, mem); break;
        case InstrKind::PopRsi: next.rsi = pop(next, space, mem); break;
        case InstrKind::PopRdi: next.rdi = pop(next, space, mem); break;
        case InstrKind::MovMemRaxRdx: {
            Bytes word;
            append_le64(word, cpu.rdx);
            guest_write(space, mem, cpu.rax, word);
            break;
        }
        case InstrKind::RepMovsb:
            try {
                rep_movsb(next, space, mem);
            } catch (const Error& e) {
                // Completed chunks stay visible, as with an interrupted rep.
                if (!is_access_fault(e))
                    throw;
                cpu.rsi = next.rsi;
                cpu.rdi = next.rdi;
                cpu.rcx = next.rcx;
                throw;
            }
            break;
        case InstrKind::Hlt:
            next.halted = true;
            outcome = StepOutcome::halt();
            break;
        case InstrKind::Nop: break;
        case InstrKind::JmpRel8:
        case InstrKind::JmpRel32:
            next.rip += static_cast<std::uint64_t>(static_cast<std::int64_t>(ins.disp));
            break;
        case InstrKind::Unknown: break;
        }
    } catch (const Error& e) {
        if (!is_access_fault(e))
            throw;
        return {StepOutcome::fault_with(FaultReason::UnmappedAddress), ins};
    }
    cpu = next;
    return {outcome, ins};
}

std::string hex(std::uint64_t v)
{
    char buf[24];
    std::snprintf(buf, sizeof buf, "0x%llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string trace_line(std::uint64_t index, std::uint64_t rip, const Executed& ex,
                       const CpuState& before, const CpuState& after)
{
    std::string line = std::to_string(index) + " " + hex(rip) + " " + format_instr(ex.instr);
    auto delta = [&](const char* name, std::uint64_t a, std::uint64_t b) {
        if (a != b)
            line += std::string(" ") + name + "=" + hex(b);
    };
    delta("rax", before.rax, after.rax);
    delta("rbx", before.rbx, after.rbx);
    delta("rcx", before.rcx, after.rcx);
    delta("rdx", before.rdx, after.rdx);
    delta("rsi", before.rsi, after.rsi);
    delta("rdi", before.rdi, after.rdi);
    delta("rsp", before.rsp, after.rsp);
    if (ex.outcome.kind == StepKind::Halt)
        line += " halt";
    else if (ex.outcome.kind == StepKind::Fault)
        line += std::string(" fault=") + std::string(fault_name(*ex.outcome.fault));
    return line;
}

}  // namespace

CpuidResult HvHooks::cpuid(std::uint64_t occurrence) const
{
    const auto it = cpuid_responses.find(occurrence);
    return it == cpuid_responses.end() ? kDefaultCpuid : it->second;
}

std::string_view fault_name(FaultReason reason)
{
    switch (reason) {
    case FaultReason::UnmappedAddress: return "UnmappedAddress";
    case FaultReason::IllegalInstruction: return "IllegalInstruction";
    }
    return "?";
}

std::string_view run_outcome_name(RunOutcome outcome)
{
    switch (outcome) {
    case RunOutcome::Halt: return "Halt";
    case RunOutcome::Fault: return "Fault";
    case RunOutcome::BudgetExhausted: return "BudgetExhausted";
    }
    return "?";
}

StepOutcome step(CpuState& cpu, const GuestAddressSpace& space, PhysicalMemory& mem,
                 const HvHooks& hooks)
{
    if (cpu.halted)
        throw Error(Errc::InvalidState, "cpu is halted");
    return execute(cpu, space, mem, hooks).outcome;
}

RunResult run(CpuState cpu, const GuestAddressSpace& space, PhysicalMemory& mem,
              const HvHooks& hooks, std::uint64_t max_steps, bool record_transcript)
{
    if (max_steps == 0)
        throw Error(Errc::InvalidArgument, "max_steps must be positive");
    if (cpu.halted)
        throw Error(Errc::InvalidState, "cpu is halted");
    RunResult result;
    while (result.steps < max_steps) {
        const CpuState before = cpu;
        const auto ex = execute(cpu, space, mem, hooks);
        ++result.steps;
        if (record_transcript)
            result.transcript.push_back(trace_line(result.steps, before.rip, ex, before, cpu));
        if (ex.outcome.kind == StepKind::Halt) {
            result.outcome = RunOutcome::Halt;
            break;
        }
        if (ex.outcome.kind == StepKind::Fault) {
            result.outcome = RunOutcome::Fault;
            result.fault = ex.outcome.fault;
            break;
        }
    }
    result.cpu = cpu;
    return result;
}

RunResult execute_rop(CpuState cpu, const GuestAddressSpace& space, PhysicalMemory& mem,
                      const RopChain& chain, std::uint64_t shared_gva, const HvHooks& hooks,
                      std::uint64_t max_steps, bool record_transcript)
{
    if (chain.stack_words.empty())
        throw Error(Errc::InvalidArgument, "chain has no stack words");
    const std::uint64_t page = align_down(shared_gva, kPageSize);
    const std::uint64_t bytes = chain.stack_words.size() * 8;
    if (cpu.rsp < page || cpu.rsp + bytes > page + kPageSize)
        throw Error(Errc::InvalidArgument, "chain does not fit on the shared page at rsp");
    if (!space.is_mapped(page) || space.page(page).c_bit)
        throw Error(Errc::InvalidArgument, "shared_gva is not on a shared page");

    mem.hv_write(space.translate(cpu.rsp), chain.serialize());
    cpu.rip = chain.stack_words.front();
    cpu.rsp += 8;
    return run(cpu, space, mem, hooks, max_steps, record_transcript);
}

}  // namespace sevsim
