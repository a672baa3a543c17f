#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sevsim/disasm.hpp"
#include "sevsim/gadgets.hpp"
#include "sevsim/memory.hpp"

namespace sevsim {

/// Guest virtual addresses equal guest physical addresses.
struct CpuState {
    std::uint64_t rax = 0;
    std::uint64_t rbx = 0;
    std::uint64_t rcx = 0;
    std::uint64_t rdx = 0;
    std::uint64_t rsi = 0;
    std::uint64_t rdi = 0;
    std::uint64_t rsp = 0;
    std::uint64_t rip = 0;
    bool halted = false;
    std::uint64_t cpuid_count = 0;

    bool operator==(const CpuState&) const = default;
};

struct CpuidResult {
    std::uint32_t eax = 0;
    std::uint32_t ebx = 0;
    std::uint32_t ecx = 0;
    std::uint32_t edx = 0;

    bool operator==(const CpuidResult&) const = default;
};

/// Hypervisor side of cpuid emulation, keyed by how many cpuid
/// instructions the guest has executed before this one.
struct HvHooks {
    std::map<std::uint64_t, CpuidResult> cpuid_responses;

    /// Leaf 0 of an AMD part: max leaf 0x0d, "AuthenticAMD".
    static constexpr CpuidResult kDefaultCpuid{0x0000000d, 0x68747541, 0x444d4163, 0x69746e65};

    CpuidResult cpuid(std::uint64_t occurrence) const;
};

enum class FaultReason { UnmappedAddress, IllegalInstruction };

std::string_view fault_name(FaultReason reason);

enum class StepKind { Continue, Halt, Fault };

struct StepOutcome {
    StepKind kind = StepKind::Continue;
    std::optional<FaultReason> fault;

    static StepOutcome proceed() { return {}; }
    static StepOutcome halt() { return {StepKind::Halt, std::nullopt}; }
    static StepOutcome fault_with(FaultReason r) { return {StepKind::Fault, r}; }
};

/// One trace line per executed instruction: "step rip instr delta", where
/// delta lists the registers the instruction changed (rip excluded).
using Transcript = std::vector<std::string>;

/// Executes the instruction at cpu.rip. Requires !cpu.halted. On a fault
/// cpu is left as it was before the faulting instruction, except for bytes
/// already copied by an interrupted rep movsb.
StepOutcome step(CpuState& cpu, const GuestAddressSpace& space, PhysicalMemory& mem,
                 const HvHooks& hooks);

enum class RunOutcome { Halt, Fault, BudgetExhausted };

std::string_view run_outcome_name(RunOutcome outcome);

struct RunResult {
    RunOutcome outcome = RunOutcome::BudgetExhausted;
    std::optional<FaultReason> fault;
    CpuState cpu;
    std::uint64_t steps = 0;  ///< instructions attempted, the final one included
    Transcript transcript;    ///< filled only when requested
};

/// Steps until Halt, Fault, or max_steps instructions. Throws
/// InvalidArgument for max_steps == 0.
RunResult run(CpuState cpu, const GuestAddressSpace& space, PhysicalMemory& mem,
              const HvHooks& hooks, std::uint64_t max_steps, bool record_transcript = false);

/// Hypervisor-driven ROP: writes the chain's stack words at cpu.rsp with
/// hv_write, then transfers control as the hijacked ret would (rip = first
/// word, rsp += 8) and runs. cpu.rsp must lie on the shared page containing
/// shared_gva with room for the whole chain (InvalidArgument otherwise).
RunResult execute_rop(CpuState cpu, const GuestAddressSpace& space, PhysicalMemory& mem,
                      const RopChain& chain, std::uint64_t shared_gva, const HvHooks& hooks = {},
                      std::uint64_t max_steps = 10000, bool record_transcript = false);

}  // namespace sevsim
