// Python bindings. Byte strings cross as `bytes`; structured results cross
// as the same JSON documents the CLI prints, decoded to dicts.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "sevsim/owner.hpp"
#include "sevsim/scenario.hpp"

namespace py = pybind11;
using namespace sevsim;

namespace {

Bytes to_bytes(const py::bytes& b)
{
    const std::string s = b;
    return Bytes(s.begin(), s.end());
}

template <typename Range>
py::bytes from_bytes(const Range& r)
{
    return py::bytes(reinterpret_cast<const char*>(r.data()), r.size());
}

template <std::size_t N>
std::array<std::uint8_t, N> to_array_checked(const py::bytes& b, const char* what)
{
    const auto v = to_bytes(b);
    if (v.size() != N)
        throw Error(Errc::InvalidArgument, std::string(what) + " must be " + std::to_string(N) + " bytes");
    std::array<std::uint8_t, N> out{};
    std::copy(v.begin(), v.end(), out.begin());
    return out;
}

py::object loads(const std::string& text)
{
    return py::module_::import("json").attr("loads")(text);
}

std::vector<LoadCall> to_calls(const std::vector<std::tuple<std::uint64_t, std::uint64_t, std::uint64_t>>& raw)
{
    std::vector<LoadCall> calls;
    for (const auto& [hpa, gpa, len] : raw)
        calls.push_back(LoadCall{hpa, gpa, len});
    return calls;
}

}  // namespace

PYBIND11_MODULE(sevsim, m)
{
    m.doc() = "SEV launch-measurement simulator and permutation-attack toolkit";

    static py::exception<Error> error(m, "SevsimError");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p)
                std::rethrow_exception(p);
        } catch (const Error& e) {
            auto exc = py::reinterpret_steal<py::object>(PyObject_CallFunction(error.ptr(), "s", e.what()));
            exc.attr("code") = std::string(errc_name(e.code()));
            PyErr_SetObject(error.ptr(), exc.ptr());
        }
    });

    py::enum_<DigestScheme>(m, "DigestScheme")
        .value("Vulnerable", DigestScheme::Vulnerable)
        .value("HpaBound", DigestScheme::HpaBound)
        .value("SizeBound", DigestScheme::SizeBound)
        .value("SnpStyle", DigestScheme::SnpStyle);

    m.def("parse_scheme", [](const std::string& s) { return parse_scheme(s); });
    m.def("scheme_name", [](DigestScheme s) { return std::string(scheme_name(s)); });

    m.def("sha256", [](const py::bytes& data) { return from_bytes(sha256(to_bytes(data))); });
    m.def(
        "launch_digest",
        [](DigestScheme scheme, const py::bytes& image,
           const std::vector<std::tuple<std::uint64_t, std::uint64_t, std::uint64_t>>& calls) {
            return from_bytes(expected_launch_digest(to_bytes(image), LoadPlan{to_calls(calls), scheme}));
        },
        py::arg("scheme"), py::arg("image"), py::arg("calls"),
        "Digest of image loaded by (hpa, gpa, length) calls in data order.");
    m.def(
        "contiguous_plan",
        [](std::size_t size, std::uint64_t gpa, std::uint64_t hpa) {
            std::vector<std::tuple<std::uint64_t, std::uint64_t, std::uint64_t>> out;
            for (const auto& c : contiguous_plan(size, gpa, hpa, DigestScheme::Vulnerable).entries)
                out.emplace_back(c.hpa, c.gpa, c.length);
            return out;
        },
        py::arg("size"), py::arg("gpa_base"), py::arg("hpa_base"));

    m.def("memcipher_encrypt", [](const py::bytes& block, std::uint64_t hpa, const py::bytes& vek) {
        return from_bytes(memcipher_encrypt(to_array_checked<16>(block, "block"), hpa, to_array_checked<16>(vek, "vek")));
    });
    m.def("memcipher_decrypt", [](const py::bytes& block, std::uint64_t hpa, const py::bytes& vek) {
        return from_bytes(memcipher_decrypt(to_array_checked<16>(block, "block"), hpa, to_array_checked<16>(vek, "vek")));
    });

    m.def(
        "decode",
        [](const py::bytes& code, std::size_t offset) {
            const auto ins = decode_at(to_bytes(code), offset);
            return py::make_tuple(std::string(kind_name(ins.kind)), ins.length, ins.disp);
        },
        py::arg("code"), py::arg("offset") = 0, "(kind, length, disp) of the instruction at offset.");
    m.def("copy_payload", [] { return from_bytes(copy_payload()); });
    m.def(
        "scan_rop_gadgets",
        [](const py::bytes& image, std::uint64_t base) {
            return loads(gadgets_to_json(scan_rop_gadgets(to_bytes(image), base)));
        },
        py::arg("image"), py::arg("base") = 0);
    m.def("hijack_chain", [](const py::bytes& image) {
        return loads(chain_to_json(build_block_chain(to_bytes(image), kStackHijackSequence)));
    });

    m.def(
        "build_test_image",
        [](std::uint64_t seed, std::size_t size) {
            const auto img = build_test_image(seed, size);
            return py::make_tuple(from_bytes(img.bytes), loads(ground_truth_to_json(img.truth)));
        },
        py::arg("seed"), py::arg("size") = kDefaultImageSize, "(image bytes, ground truth dict)");
    m.def(
        "plan_attack", [](const py::bytes& image) { return loads(plan_to_json(plan_attack(to_bytes(image)))); },
        py::arg("image"));
    m.def(
        "run_honest",
        [](const py::bytes& image, const py::bytes& secret, DigestScheme scheme, std::uint64_t seed) {
            const auto bytes = to_bytes(image);
            const GuestLayout layout;
            ScenarioOptions opts;
            opts.seed = seed;
            const auto plan = contiguous_plan(bytes.size(), layout.image_gpa, layout.image_hpa(), scheme);
            return loads(report_to_json(run_honest_launch(bytes, plan, to_bytes(secret), scheme, opts)));
        },
        py::arg("image"), py::arg("secret"), py::arg("scheme") = DigestScheme::Vulnerable, py::arg("seed") = 1);
    m.def(
        "run_attack",
        [](const py::bytes& image, const py::bytes& secret, DigestScheme scheme, std::uint64_t seed) {
            ScenarioOptions opts;
            opts.seed = seed;
            return loads(report_to_json(run_permutation_attack(to_bytes(image), to_bytes(secret), scheme, opts)));
        },
        py::arg("image"), py::arg("secret"), py::arg("scheme") = DigestScheme::Vulnerable, py::arg("seed") = 1);
    m.def(
        "evaluate_mitigations",
        [](const py::bytes& image, std::size_t trials, std::uint64_t seed) {
            return loads(matrix_to_json(evaluate_mitigations(to_bytes(image), trials, seed)));
        },
        py::arg("image"), py::arg("trials") = 5, py::arg("seed") = 1);

    m.def("block_count", &block_count, py::arg("image_size"), py::arg("block_size"));
    m.def("parse_size", [](const std::string& s) { return parse_size(s); });
}
