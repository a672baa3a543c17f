#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "sevsim/gadgets.hpp"
#include "sevsim/owner.hpp"
#include "sevsim/vmemu.hpp"

namespace sevsim {

// ---------------------------------------------------------------------------
// Guest layout
// ---------------------------------------------------------------------------

/// Where the synthetic guest lives. GPA and HPA ranges are fixed by the
/// hypervisor; HPA = GPA + kHostOffset for every region.
struct GuestLayout {
    static constexpr std::uint64_t kHostOffset = 0x400000;

    std::uint64_t image_gpa = 0x100000;
    std::uint64_t stack_gpa = 0x200000;
    std::uint64_t initial_rsp = 0x201000;
    std::uint64_t secret_gpa = 0x300000;
    std::uint64_t scratch_gpa = 0x400000;  ///< encrypted page the injected code runs from
    std::uint64_t ghcb_gpa = 0x809000;
    std::uint64_t ghcb_stack_offset = 0x100;  ///< hijacked rsp within the GHCB
    std::uint64_t ghcb_leak_offset = 0x800;   ///< where the copy payload drops the secret

    std::uint64_t hpa(std::uint64_t gpa) const { return gpa + kHostOffset; }
    std::uint64_t image_hpa() const { return hpa(image_gpa); }
};

// ---------------------------------------------------------------------------
// Synthetic image
// ---------------------------------------------------------------------------

inline constexpr std::size_t kDefaultImageSize = 8192;
inline constexpr std::array<std::uint8_t, 8> kSecretTableMagic = {'S', 'E', 'C', 'R',
                                                                  'T', 'T', 'B', 'L'};

struct ImageGroundTruth {
    std::size_t boot_block = 0;
    std::size_t hook_block = 0;
    std::uint8_t hook_entry = 0;
    std::size_t config_block = 0;
    std::uint64_t secret_gpa = 0;
    std::set<std::size_t> do_not_move;
    std::vector<ChainLink> chain_links;  ///< one planted link per hijack payload
    std::vector<RopGadget> rop_gadgets;  ///< gva relative to image offset 0
};

struct SyntheticImage {
    Bytes bytes;
    ImageGroundTruth truth;
};

/// Deterministic in (seed, size). size must be a multiple of 4096, at
/// least 8 KiB (InvalidArgument).
SyntheticImage build_test_image(std::uint64_t seed, std::size_t size = kDefaultImageSize,
                                const GuestLayout& layout = {});

/// Secret GPA recorded in the first 16-byte-aligned configuration record.
std::optional<std::uint64_t> locate_secret_table(ByteSpan image);

/// What the hypervisor can learn from the plaintext image alone.
struct ImageAnalysis {
    std::size_t hook_block = 0;
    std::uint8_t hook_entry = 0;
    std::uint64_t boot_cpuid_count = 0;  ///< cpuid instructions before the hook
    std::size_t config_block = 0;
    std::uint64_t secret_gpa = 0;
    std::set<std::size_t> do_not_move;
};

/// Decodes the boot stub (cpuid, then a direct jump to the hook) and finds
/// the configuration record. Throws InvalidArgument when the image does not
/// have that shape.
ImageAnalysis analyze_image(ByteSpan image);

// ---------------------------------------------------------------------------
// Launch scenarios
// ---------------------------------------------------------------------------

struct ScenarioOptions {
    GuestLayout layout;
    Policy policy{};
    std::uint64_t seed = 1;       ///< SP, owner and packet randomness
    std::uint64_t max_steps = 10000;
    bool transcript = false;      ///< keep the emulator trace in the report
    std::ostream* sp_trace = nullptr;
    /// Hypervisor flips this image byte before loading it.
    std::optional<std::size_t> tamper_offset;
};

struct PhaseTiming {
    std::string phase;
    double milliseconds = 0;
};

struct ScenarioReport {
    std::string mode;  ///< "honest" or "attack"
    DigestScheme scheme = DigestScheme::Vulnerable;
    /// The owner's expectation for the honest load (same MNONCE as the SP's).
    std::optional<Measurement> honest_measurement;
    /// What the SP reported for the loads the hypervisor actually issued.
    std::optional<Measurement> attack_measurement;
    std::map<DigestScheme, bool> verified;
    bool secret_injected = false;
    Bytes injected_secret;
    bool guest_reads_secret = false;
    std::optional<Bytes> leaked_secret;  ///< attack runs that reached Halt only
    bool secret_on_shared_page = false;
    std::optional<RunOutcome> outcome;
    std::optional<FaultReason> fault;
    std::uint64_t steps = 0;
    std::uint64_t cpuid_count = 0;
    std::vector<PhaseTiming> timings;
    std::optional<PermutationPlan> plan;
    std::vector<RopGadget> gadgets_used;
    Transcript transcript;

    bool attack_succeeded() const
    {
        return leaked_secret.has_value() && *leaked_secret == injected_secret;
    }
};

/// Full launch under the given plan: start, loads, measure, owner check,
/// secret, finish, then the guest boots. Secret injection and boot are
/// skipped when the owner rejects the measurement.
ScenarioReport run_honest_launch(ByteSpan image, const LoadPlan& plan, ByteSpan secret,
                                 DigestScheme scheme, const ScenarioOptions& options = {});

/// Builds the chain and permutation from the image (or uses plan_override),
/// loads the permuted image, and drives both attack stages when the owner
/// accepts the measurement. Throws NoChainFound.
ScenarioReport run_permutation_attack(ByteSpan image, ByteSpan secret, DigestScheme scheme,
                                      const ScenarioOptions& options = {},
                                      const std::optional<PermutationPlan>& plan_override = {});

/// The hypervisor's attack plan for an image under the given layout.
PermutationPlan plan_attack(ByteSpan image, const GuestLayout& layout = {});

// ---------------------------------------------------------------------------
// Mitigations
// ---------------------------------------------------------------------------

enum class LoadVariant { Honest, AttackPermuted, PageRemapped };

inline constexpr std::array<LoadVariant, 3> kAllLoadVariants = {
    LoadVariant::Honest, LoadVariant::AttackPermuted, LoadVariant::PageRemapped};

std::string_view variant_name(LoadVariant variant);

struct MitigationCell {
    LoadVariant variant = LoadVariant::Honest;
    DigestScheme scheme = DigestScheme::Vulnerable;
    std::size_t trials = 0;
    std::size_t verified = 0;
    std::size_t detected = 0;
    /// A hardened scheme accepted a tampered load.
    bool flagged = false;
    std::string note;
};

struct MitigationMatrix {
    std::vector<MitigationCell> cells;

    const MitigationCell& at(LoadVariant variant, DigestScheme scheme) const;
};

/// trials >= 1 (InvalidArgument). Attack trial 0 uses the hijack-chain
/// plan; later trials use random non-identity block permutations. Remap
/// trials swap two random 4 KiB guest pages after an honest load.
MitigationMatrix evaluate_mitigations(ByteSpan image, std::size_t trials, std::uint64_t seed = 1,
                                      const GuestLayout& layout = {});

/// Outcome of one page-remap launch for a scheme.
struct RemapTrial {
    bool verified = false;
    bool guest_view_changed = false;  ///< guest reads differ from the image
};

RemapTrial run_page_remap_trial(ByteSpan image, DigestScheme scheme, std::size_t page_a,
                                std::size_t page_b, std::uint64_t seed,
                                const GuestLayout& layout = {});

// ---------------------------------------------------------------------------
// Utilities
// ---------------------------------------------------------------------------

/// Ceiling division. Both arguments positive (InvalidArgument).
std::uint64_t block_count(std::uint64_t image_size, std::uint64_t block_size);

/// "4096", "8KiB", "3.5MiB", "1GiB". Throws InvalidArgument.
std::uint64_t parse_size(std::string_view text);

std::string report_to_json(const ScenarioReport& report, int indent = 2);
std::string ground_truth_to_json(const ImageGroundTruth& truth, int indent = 2);
std::string matrix_to_json(const MitigationMatrix& matrix, int indent = 2);
std::string plan_to_json(const PermutationPlan& plan, int indent = 2);
PermutationPlan plan_from_json(std::string_view text);
std::string chain_to_json(std::span<const ChainLink> chain, int indent = 2);
std::string gadgets_to_json(std::span<const RopGadget> gadgets, int indent = 2);

}  // namespace sevsim
