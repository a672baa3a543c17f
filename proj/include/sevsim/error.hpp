#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sevsim {

enum class Errc {
    InvalidArgument,
    LengthNotMultipleOf16,
    EmptyData,
    NoDataAbsorbed,
    InvalidPublicKey,
    BadHmac,
    BadLength,
    UnalignedAddress,
    UnmappedAddress,
    OutOfBounds,
    InvalidState,
    PlanImageMismatch,
    EmptySecret,
    OffsetOutOfRange,
    NoChainFound,
    PlacementConflict,
    MissingGadgetKind,
    Io,
};

std::string_view errc_name(Errc code);

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code)
    {
    }

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

}  // namespace sevsim
