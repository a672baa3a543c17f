// Command-line front end: image builder, honest launch, permutation attack,
// mitigation matrix, gadget scanner and block-count arithmetic.

#include <fstream>
#include <iostream>
#include <iterator>

#include "CLI11.hpp"
#include "json.hpp"
#include "sevsim/scenario.hpp"

namespace {

using namespace sevsim;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitAttackFailed = 2;

Bytes read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(Errc::Io, "cannot read " + path);
    return Bytes(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::string& path, ByteSpan data)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error(Errc::Io, "cannot write " + path);
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
}

void emit(const std::string& text, const std::string& out_path)
{
    if (out_path.empty()) {
        std::cout << text << '\n';
        return;
    }
    std::ofstream out(out_path);
    if (!out)
        throw Error(Errc::Io, "cannot write " + out_path);
    out << text << '\n';
}

/// 32-byte mock disk key: explicit hex, or drawn from the seed.
Bytes resolve_secret(const std::string& hex, std::uint64_t seed)
{
    if (!hex.empty()) {
        auto secret = from_hex(hex);
        if (secret.empty())
            throw Error(Errc::EmptySecret, "secret must not be empty");
        return secret;
    }
    SeededRng rng(seed ^ 0x5ec12e7ull);
    return rng.draw_bytes(32);
}

void print_transcript(const ScenarioReport& report)
{
    for (const auto& line : report.transcript)
        std::cerr << line << '\n';
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"SEV launch-measurement simulator and permutation-attack toolkit"};
    app.require_subcommand(1);

    std::string scheme_arg = "vulnerable";
    std::string image_path, manifest_path, plan_path, secret_hex, out_path, binary_path;
    std::uint64_t seed = 1;
    bool trace = false;
    std::size_t trials = 10;
    std::uint64_t base = 0;
    std::string size_arg, block_size_arg = "16";
    std::size_t image_size = kDefaultImageSize;

    auto* build = app.add_subcommand("build-image", "write the seeded synthetic firmware image");
    build->add_option("--seed", seed, "image seed")->required();
    build->add_option("--out", out_path, "image output path")->required();
    build->add_option("--manifest", manifest_path, "manifest path (default <out>.manifest.json)");
    build->add_option("--size", image_size, "image size in bytes (multiple of 4096, >= 8192)");
    build->add_option("--scheme", scheme_arg, "digest scheme recorded in the manifest");

    auto* honest = app.add_subcommand("honest", "run an honest launch from a manifest");
    honest->add_option("--image", image_path, "image path")->required();
    honest->add_option("--manifest", manifest_path, "launch manifest")->required();
    honest->add_option("--scheme", scheme_arg, "vulnerable | hpa | size | snp");
    honest->add_option("--secret", secret_hex, "secret as hex (default: 32 seeded bytes)");
    honest->add_option("--seed", seed, "SP/owner randomness seed");
    honest->add_flag("--trace", trace, "emulator transcript on stderr");
    honest->add_option("--out", out_path, "report path (default stdout)");

    auto* attack = app.add_subcommand("attack", "run the permutation attack end to end");
    attack->add_option("--image", image_path, "image path")->required();
    attack->add_option("--scheme", scheme_arg, "vulnerable | hpa | size | snp");
    attack->add_option("--plan", plan_path, "use this permutation plan instead of planning one");
    attack->add_option("--secret", secret_hex, "secret as hex (default: 32 seeded bytes)");
    attack->add_option("--seed", seed, "SP/owner randomness seed");
    attack->add_flag("--trace", trace, "emulator transcript on stderr");
    attack->add_option("--out", out_path, "report path (default stdout)");
    std::string plan_out;
    attack->add_option("--save-plan", plan_out, "write the permutation plan used");

    auto* mitig = app.add_subcommand("mitigations", "scheme x load-variant detection matrix");
    mitig->add_option("--image", image_path, "image path")->required();
    mitig->add_option("--trials", trials, "trials per cell")->check(CLI::PositiveNumber);
    mitig->add_option("--seed", seed, "trial seed");
    mitig->add_option("--out", out_path, "report path (default stdout)");

    auto* scan = app.add_subcommand("scan", "chain links and ROP gadgets in any binary");
    scan->add_option("--binary", binary_path, "file to scan")->required();
    scan->add_option("--base", base, "gva of the first byte");
    scan->add_option("--out", out_path, "report path (default stdout)");

    auto* blocks = app.add_subcommand("blocks", "blocks an image of this size splits into");
    blocks->add_option("--size", size_arg, "image size, e.g. 3.5MiB")->required();
    blocks->add_option("--block-size", block_size_arg, "block size, e.g. 16 or 4KiB");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // --help and friends keep their success code; real parse errors are usage errors.
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        const auto scheme = parse_scheme(scheme_arg);
        ScenarioOptions opts;
        opts.seed = seed;
        opts.transcript = trace;

        if (*build) {
            const auto img = build_test_image(seed, image_size);
            write_file(out_path, img.bytes);
            LaunchManifest m;
            m.image_path = out_path;
            m.image_sha256 = sha256(img.bytes);
            const GuestLayout layout;
            m.plan = contiguous_plan(img.bytes.size(), layout.image_gpa, layout.image_hpa(), scheme);
            save_manifest(manifest_path.empty() ? out_path + ".manifest.json" : manifest_path, m);
            std::cout << ground_truth_to_json(img.truth) << '\n';
            return kExitOk;
        }
        if (*honest) {
            const auto image = read_file(image_path);
            const auto m = load_manifest(manifest_path);
            if (m.image_sha256 != sha256(image))
                throw Error(Errc::PlanImageMismatch, "image does not match the manifest hash");
            opts.policy = m.policy;
            const auto report = run_honest_launch(image, m.plan, resolve_secret(secret_hex, seed), scheme, opts);
            if (trace)
                print_transcript(report);
            emit(report_to_json(report), out_path);
            return kExitOk;
        }
        if (*attack) {
            const auto image = read_file(image_path);
            std::optional<PermutationPlan> plan;
            if (!plan_path.empty()) {
                const auto text = read_file(plan_path);
                plan = plan_from_json(std::string(text.begin(), text.end()));
            }
            const auto report =
                run_permutation_attack(image, resolve_secret(secret_hex, seed), scheme, opts, plan);
            if (trace)
                print_transcript(report);
            if (!plan_out.empty() && report.plan)
                emit(plan_to_json(*report.plan), plan_out);
            emit(report_to_json(report), out_path);
            return report.attack_succeeded() ? kExitOk : kExitAttackFailed;
        }
        if (*mitig) {
            const auto image = read_file(image_path);
            emit(matrix_to_json(evaluate_mitigations(image, trials, seed)), out_path);
            return kExitOk;
        }
        if (*scan) {
            const auto bytes = read_file(binary_path);
            Bytes padded = bytes;
            padded.resize((bytes.size() + kBlockSize - 1) / kBlockSize * kBlockSize, 0);
            nlohmann::json links = nlohmann::json::object();
            for (auto kind : kStackHijackSequence)
                links[std::string(kind_name(kind))] =
                    nlohmann::json::parse(chain_to_json(scan_chain_links(padded, kind)));
            nlohmann::json doc = {
                {"size", bytes.size()},
                {"blocks", padded.size() / kBlockSize},
                {"chain_links", links},
                {"rop_gadgets", nlohmann::json::parse(gadgets_to_json(scan_rop_gadgets(bytes, base)))},
            };
            try {
                doc["hijack_chain"] = nlohmann::json::parse(
                    chain_to_json(build_block_chain(padded, kStackHijackSequence)));
            } catch (const Error& e) {
                if (e.code() != Errc::NoChainFound)
                    throw;
                doc["hijack_chain"] = nullptr;
            }
            emit(doc.dump(2), out_path);
            return kExitOk;
        }
        if (*blocks) {
            const auto size = parse_size(size_arg);
            const auto bs = parse_size(block_size_arg);
            nlohmann::json doc = {{"size", size}, {"block_size", bs}, {"blocks", block_count(size, bs)}};
            std::cout << doc.dump(2) << '\n';
            return kExitOk;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << errc_name(e.code()) << ": " << e.what() << '\n';
        if (e.code() == Errc::NoChainFound || e.code() == Errc::PlacementConflict ||
            e.code() == Errc::MissingGadgetKind)
            return kExitAttackFailed;
        return kExitUsage;
    }
    return kExitUsage;
}
