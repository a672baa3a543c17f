#include "sevsim/owner.hpp"

#include <fstream>

#include "json.hpp"

namespace sevsim {

LoadPlan contiguous_plan(std::size_t image_size, std::uint64_t gpa_base, std::uint64_t hpa_base,
                         DigestScheme scheme, std::size_t chunk)
{
    if (chunk == 0 || chunk % kBlockSize != 0)
        throw Error(Errc::LengthNotMultipleOf16, "chunk size must be a positive multiple of 16");
    LoadPlan plan;
    plan.scheme = scheme;
    for (std::size_t off = 0; off < image_size; off += chunk) {
        const auto len = std::min(chunk, image_size - off);
        plan.entries.push_back(LoadCall{hpa_base + off, gpa_base + off, len});
    }
    return plan;
}

Digest expected_launch_digest(ByteSpan image, const LoadPlan& plan)
{
    std::uint64_t total = 0;
    for (const auto& e : plan.entries)
        total += e.length;
    if (total != image.size() || plan.entries.empty())
        throw Error(Errc::PlanImageMismatch, "plan covers " + std::to_string(total) +
                                                 " bytes, image has " + std::to_string(image.size()));
    LaunchDigestState state(plan.scheme);
    std::size_t off = 0;
    for (const auto& e : plan.entries) {
        state.absorb(e, image.subspan(off, e.length));
        off += e.length;
    }
    return state.finalize();
}

Measurement expected_measurement(ByteSpan image, const LoadPlan& plan, Policy policy,
                                 ApiVersion version, const Nonce& mnonce, const Key256& tik)
{
    return compute_measurement(expected_launch_digest(image, plan), policy, version, mnonce, tik);
}

bool verify_measurement(const Measurement& received, ByteSpan image, const LoadPlan& plan,
                        Policy policy, ApiVersion version, const Key256& tik)
{
    try {
        const auto expected =
            expected_measurement(image, plan, policy, version, received.mnonce, tik);
        return tags_equal(expected.measure, received.measure);
    } catch (const Error&) {
        return false;
    }
}

SecretPacket build_secret_packet(ByteSpan secret, const SessionKeys& keys, Rng& rng)
{
    if (secret.empty())
        throw Error(Errc::EmptySecret, "refusing to package an empty secret");
    return wrap_secret(secret, keys.tek, keys.tik, rng.draw<16>());
}

const SessionKeys& GuestOwner::establish(const DhPublicKey& platform_public)
{
    session_ = derive_session(keys_.private_key, platform_public);
    return *session_;
}

const SessionKeys& GuestOwner::session() const
{
    if (!session_)
        throw Error(Errc::InvalidState, "no session established");
    return *session_;
}

// ---------------------------------------------------------------------------

void save_manifest(const std::filesystem::path& path, const LaunchManifest& m)
{
    nlohmann::json plan = nlohmann::json::array();
    for (const auto& e : m.plan.entries)
        plan.push_back({{"gpa", e.gpa}, {"hpa", e.hpa}, {"length", e.length}});
    nlohmann::json doc = {
        {"image_path", m.image_path},
        {"sha256", to_hex(m.image_sha256)},
        {"plan", plan},
        {"policy", m.policy.value},
        {"api_major", m.version.major},
        {"api_minor", m.version.minor},
        {"build", m.version.build},
        {"scheme", scheme_name(m.plan.scheme)},
    };
    std::ofstream out(path);
    if (!out)
        throw Error(Errc::Io, "cannot write " + path.string());
    out << doc.dump(2) << '\n';
}

LaunchManifest load_manifest(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(Errc::Io, "cannot read " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::InvalidArgument, std::string("manifest: ") + e.what());
    }
    try {
        LaunchManifest m;
        m.image_path = doc.at("image_path").get<std::string>();
        m.image_sha256 = to_array<32>(from_hex(doc.at("sha256").get<std::string>()));
        for (const auto& e : doc.at("plan"))
            m.plan.entries.push_back(LoadCall{e.at("hpa").get<std::uint64_t>(),
                                              e.at("gpa").get<std::uint64_t>(),
                                              e.at("length").get<std::uint64_t>()});
        m.plan.scheme = parse_scheme(doc.at("scheme").get<std::string>());
        m.policy.value = doc.at("policy").get<std::uint32_t>();
        m.version.major = doc.at("api_major").get<std::uint8_t>();
        m.version.minor = doc.at("api_minor").get<std::uint8_t>();
        m.version.build = doc.at("build").get<std::uint8_t>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::InvalidArgument, std::string("manifest: ") + e.what());
    }
}

}  // namespace sevsim
