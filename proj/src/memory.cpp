#include "sevsim/memory.hpp"

#include <fstream>

#include "json.hpp"

namespace sevsim {

namespace {

enum class CryptMode { ByCBit, Always };

const MemoryCipher& require_cipher(const MemoryCipher* cipher)
{
    if (cipher == nullptr)
        throw Error(Errc::InvalidState, "no memory encryption key bound to this address space");
    return *cipher;
}

struct BlockRef {
    std::uint64_t hpa;
    bool encrypted;
};

BlockRef resolve_block(const GuestAddressSpace& space, std::uint64_t block_gpa, CryptMode mode)
{
    const auto& attrs = space.page(block_gpa);
    return {attrs.mapped_hpa + block_gpa % kPageSize, mode == CryptMode::Always || attrs.c_bit};
}

void read_range(const GuestAddressSpace& space, const PhysicalMemory& mem, std::uint64_t gpa,
                MutableByteSpan out, CryptMode mode, const MemoryCipher* cipher)
{
    std::size_t done = 0;
    while (done < out.size()) {
        const std::uint64_t cur = gpa + done;
        const std::uint64_t block_gpa = align_down(cur, kBlockSize);
        const std::size_t in_block = cur - block_gpa;
        const std::size_t n = std::min(kBlockSize - in_block, out.size() - done);

        const auto ref = resolve_block(space, block_gpa, mode);
        Block block = mem.read_block(ref.hpa);
        if (ref.encrypted)
            block = require_cipher(cipher).decrypt(block, ref.hpa);
        std::copy_n(block.begin() + in_block, n, out.begin() + done);
        done += n;
    }
}

void write_range(const GuestAddressSpace& space, PhysicalMemory& mem, std::uint64_t gpa,
                 ByteSpan data, CryptMode mode, const MemoryCipher* cipher)
{
    std::size_t done = 0;
    while (done < data.size()) {
        const std::uint64_t cur = gpa + done;
        const std::uint64_t block_gpa = align_down(cur, kBlockSize);
        const std::size_t in_block = cur - block_gpa;
        const std::size_t n = std::min(kBlockSize - in_block, data.size() - done);

        const auto ref = resolve_block(space, block_gpa, mode);
        if (!ref.encrypted) {
            mem.hv_write(ref.hpa + in_block, data.subspan(done, n));
        } else {
            const auto& c = require_cipher(cipher);
            Block block{};
            if (n != kBlockSize)
                block = c.decrypt(mem.read_block(ref.hpa), ref.hpa);
            std::copy_n(data.begin() + done, n, block.begin() + in_block);
            mem.write_block(ref.hpa, c.encrypt(block, ref.hpa));
        }
        done += n;
    }
}

}  // namespace

// ---------------------------------------------------------------------------

void PhysicalMemory::check(std::uint64_t hpa, std::size_t len) const
{
    if (hpa > bytes_.size() || len > bytes_.size() - hpa)
        throw Error(Errc::OutOfBounds, "physical access [" + std::to_string(hpa) + ", +" +
                                           std::to_string(len) + ") outside memory");
}

Bytes PhysicalMemory::hv_read(std::uint64_t hpa, std::size_t len) const
{
    check(hpa, len);
    return Bytes(bytes_.begin() + hpa, bytes_.begin() + hpa + len);
}

void PhysicalMemory::hv_write(std::uint64_t hpa, ByteSpan data)
{
    check(hpa, data.size());
    std::copy(data.begin(), data.end(), bytes_.begin() + hpa);
}

Block PhysicalMemory::read_block(std::uint64_t hpa) const
{
    check(hpa, kBlockSize);
    Block b{};
    std::copy_n(bytes_.begin() + hpa, kBlockSize, b.begin());
    return b;
}

void PhysicalMemory::write_block(std::uint64_t hpa, const Block& block)
{
    check(hpa, kBlockSize);
    std::copy(block.begin(), block.end(), bytes_.begin() + hpa);
}

// ---------------------------------------------------------------------------

void GuestAddressSpace::map(std::uint64_t gpa_page, std::uint64_t hpa_page, bool c_bit)
{
    if (!is_aligned(gpa_page, kPageSize) || !is_aligned(hpa_page, kPageSize))
        throw Error(Errc::UnalignedAddress, "page mappings must be 4 KiB aligned");
    if (ghcb_gpa_ && align_down(*ghcb_gpa_, kPageSize) == gpa_page)
        c_bit = false;
    pages_[gpa_page] = PageAttributes{c_bit, hpa_page};
}

void GuestAddressSpace::map_range(std::uint64_t gpa, std::uint64_t hpa, std::size_t len, bool c_bit)
{
    for (std::size_t off = 0; off < len; off += kPageSize)
        map(gpa + off, hpa + off, c_bit);
}

void GuestAddressSpace::unmap(std::uint64_t gpa_page)
{
    pages_.erase(align_down(gpa_page, kPageSize));
}

void GuestAddressSpace::set_c_bit(std::uint64_t gpa_page, bool c_bit)
{
    auto it = pages_.find(align_down(gpa_page, kPageSize));
    if (it == pages_.end())
        throw Error(Errc::UnmappedAddress, "set_c_bit on unmapped page");
    if (ghcb_gpa_ && align_down(*ghcb_gpa_, kPageSize) == it->first)
        c_bit = false;
    it->second.c_bit = c_bit;
}

void GuestAddressSpace::set_ghcb(std::uint64_t gpa)
{
    const auto page_gpa = align_down(gpa, kPageSize);
    auto it = pages_.find(page_gpa);
    if (it == pages_.end())
        throw Error(Errc::UnmappedAddress, "GHCB page must be mapped first");
    ghcb_gpa_ = gpa;
    it->second.c_bit = false;
}

const PageAttributes& GuestAddressSpace::page(std::uint64_t gpa) const
{
    auto it = pages_.find(align_down(gpa, kPageSize));
    if (it == pages_.end())
        throw Error(Errc::UnmappedAddress, "guest address " + std::to_string(gpa) + " is unmapped");
    return it->second;
}

bool GuestAddressSpace::is_mapped(std::uint64_t gpa) const
{
    return pages_.contains(align_down(gpa, kPageSize));
}

std::uint64_t GuestAddressSpace::translate(std::uint64_t gpa) const
{
    return page(gpa).mapped_hpa + gpa % kPageSize;
}

// ---------------------------------------------------------------------------

Bytes guest_read(const GuestAddressSpace& space, const PhysicalMemory& mem, std::uint64_t gpa,
                 std::size_t len)
{
    Bytes out(len);
    read_range(space, mem, gpa, out, CryptMode::ByCBit, space.cipher());
    return out;
}

void guest_write(const GuestAddressSpace& space, PhysicalMemory& mem, std::uint64_t gpa,
                 ByteSpan data)
{
    write_range(space, mem, gpa, data, CryptMode::ByCBit, space.cipher());
}

void guest_write_encrypted(const GuestAddressSpace& space, const MemoryCipher& cipher,
                           PhysicalMemory& mem, std::uint64_t gpa, ByteSpan data)
{
    write_range(space, mem, gpa, data, CryptMode::Always, &cipher);
}

Bytes fetch(const GuestAddressSpace& space, const PhysicalMemory& mem, std::uint64_t gpa,
            std::size_t len)
{
    Bytes out(len);
    read_range(space, mem, gpa, out, CryptMode::Always, space.cipher());
    return out;
}

void remap(GuestAddressSpace& space, const PhysicalMemory& mem, std::uint64_t gpa_page,
           std::uint64_t new_hpa_page)
{
    if (!is_aligned(gpa_page, kPageSize) || !is_aligned(new_hpa_page, kPageSize))
        throw Error(Errc::UnalignedAddress, "remap needs page-aligned addresses");
    if (new_hpa_page + kPageSize > mem.size())
        throw Error(Errc::OutOfBounds, "remap target outside physical memory");
    const auto c_bit = space.page(gpa_page).c_bit;
    space.map(gpa_page, new_hpa_page, c_bit);
}

// ---------------------------------------------------------------------------

void save_memory_image(const std::filesystem::path& binary, const std::filesystem::path& manifest,
                       const GuestAddressSpace& space, const PhysicalMemory& mem)
{
    nlohmann::json pages = nlohmann::json::array();
    std::ofstream bin(binary, std::ios::binary);
    if (!bin)
        throw Error(Errc::Io, "cannot open " + binary.string());
    for (const auto& [gpa, attrs] : space.pages()) {
        pages.push_back({{"gpa", gpa}, {"hpa", attrs.mapped_hpa}, {"c_bit", attrs.c_bit}});
        auto raw = mem.hv_read(attrs.mapped_hpa, kPageSize);
        bin.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    }
    nlohmann::json doc = {{"memory_size", mem.size()}, {"page_size", kPageSize}, {"pages", pages}};
    if (space.ghcb_gpa())
        doc["ghcb_gpa"] = *space.ghcb_gpa();
    std::ofstream out(manifest);
    if (!out)
        throw Error(Errc::Io, "cannot open " + manifest.string());
    out << doc.dump(2) << '\n';
}

LoadedMemoryImage load_memory_image(const std::filesystem::path& binary,
                                    const std::filesystem::path& manifest)
{
    std::ifstream in(manifest);
    if (!in)
        throw Error(Errc::Io, "cannot open " + manifest.string());
    auto doc = nlohmann::json::parse(in);
    if (doc.value("page_size", kPageSize) != kPageSize)
        throw Error(Errc::InvalidArgument, "unsupported page size in memory manifest");

    LoadedMemoryImage image{GuestAddressSpace{}, PhysicalMemory(doc.at("memory_size").get<std::size_t>())};
    std::ifstream bin(binary, std::ios::binary);
    if (!bin)
        throw Error(Errc::Io, "cannot open " + binary.string());
    Bytes page(kPageSize);
    for (const auto& entry : doc.at("pages")) {
        const auto gpa = entry.at("gpa").get<std::uint64_t>();
        const auto hpa = entry.at("hpa").get<std::uint64_t>();
        if (!bin.read(reinterpret_cast<char*>(page.data()), kPageSize))
            throw Error(Errc::Io, "memory image shorter than its manifest");
        image.memory.hv_write(hpa, page);
        image.space.map(gpa, hpa, entry.at("c_bit").get<bool>());
    }
    if (doc.contains("ghcb_gpa"))
        image.space.set_ghcb(doc["ghcb_gpa"].get<std::uint64_t>());
    return image;
}

}  // namespace sevsim
