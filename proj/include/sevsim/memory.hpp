#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>

#include "sevsim/bytes.hpp"
#include "sevsim/crypto.hpp"

namespace sevsim {

inline constexpr std::size_t kDefaultMemorySize = 16u << 20;

/// Host physical memory. Contents are raw bytes: ciphertext for encrypted
/// guest pages, plaintext everywhere else.
class PhysicalMemory {
public:
    explicit PhysicalMemory(std::size_t size = kDefaultMemorySize) : bytes_(size, 0) {}

    std::size_t size() const { return bytes_.size(); }

    /// Raw hypervisor access, no cipher involved. Throws OutOfBounds.
    Bytes hv_read(std::uint64_t hpa, std::size_t len) const;
    void hv_write(std::uint64_t hpa, ByteSpan data);

    Block read_block(std::uint64_t hpa) const;
    void write_block(std::uint64_t hpa, const Block& block);

private:
    void check(std::uint64_t hpa, std::size_t len) const;

    Bytes bytes_;
};

struct PageAttributes {
    bool c_bit = true;
    std::uint64_t mapped_hpa = 0;  ///< page-aligned
};

/// Flat GPA -> HPA page map with per-page C-bit. The hypervisor owns the
/// mapping; several GPAs may alias one HPA page.
class GuestAddressSpace {
public:
    GuestAddressSpace() = default;

    void map(std::uint64_t gpa_page, std::uint64_t hpa_page, bool c_bit);
    void map_range(std::uint64_t gpa, std::uint64_t hpa, std::size_t len, bool c_bit);
    void unmap(std::uint64_t gpa_page);
    void set_c_bit(std::uint64_t gpa_page, bool c_bit);

    /// Designates the GHCB page. Its C-bit is cleared and stays clear.
    void set_ghcb(std::uint64_t gpa);
    std::optional<std::uint64_t> ghcb_gpa() const { return ghcb_gpa_; }

    const PageAttributes& page(std::uint64_t gpa) const;
    bool is_mapped(std::uint64_t gpa) const;
    std::uint64_t translate(std::uint64_t gpa) const;
    const std::map<std::uint64_t, PageAttributes>& pages() const { return pages_; }

    /// Installs the memory-controller key slot for this guest.
    void bind_cipher(std::shared_ptr<const MemoryCipher> cipher) { cipher_ = std::move(cipher); }
    const MemoryCipher* cipher() const { return cipher_.get(); }

private:
    std::map<std::uint64_t, PageAttributes> pages_;
    std::optional<std::uint64_t> ghcb_gpa_;
    std::shared_ptr<const MemoryCipher> cipher_;
};

/// Data access honoring the C-bit: encrypted pages go through the memory
/// cipher per 16-byte block (tweak = backing HPA), shared pages are raw.
/// Partial blocks are read-modify-written. Throws UnmappedAddress.
Bytes guest_read(const GuestAddressSpace& space, const PhysicalMemory& mem, std::uint64_t gpa,
                 std::size_t len);
void guest_write(const GuestAddressSpace& space, PhysicalMemory& mem, std::uint64_t gpa,
                 ByteSpan data);

/// Write that encrypts regardless of the C-bit, as LAUNCH_SECRET does.
void guest_write_encrypted(const GuestAddressSpace& space, const MemoryCipher& cipher,
                           PhysicalMemory& mem, std::uint64_t gpa, ByteSpan data);

/// Instruction fetch: always decrypts, whatever the C-bit says.
Bytes fetch(const GuestAddressSpace& space, const PhysicalMemory& mem, std::uint64_t gpa,
            std::size_t len);

/// Points a guest page at a different host page. No data moves.
void remap(GuestAddressSpace& space, const PhysicalMemory& mem, std::uint64_t gpa_page,
           std::uint64_t new_hpa_page);

/// Raw dump of every mapped page plus a JSON manifest of (gpa, hpa, c_bit)
/// triples. The binary holds the pages in manifest order.
void save_memory_image(const std::filesystem::path& binary, const std::filesystem::path& manifest,
                       const GuestAddressSpace& space, const PhysicalMemory& mem);

struct LoadedMemoryImage {
    GuestAddressSpace space;
    PhysicalMemory memory;
};

LoadedMemoryImage load_memory_image(const std::filesystem::path& binary,
                                    const std::filesystem::path& manifest);

}  // namespace sevsim
