#pragma once

#include <stdexcept>
#include <string>

namespace ttp {

// Base of every failure the library reports. `kind()` is a stable tag used by
// the CLI for structured diagnostics.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define TTP_DEFINE_ERROR(Name)                                                  \
    class Name : public Error {                                                 \
    public:                                                                     \
        explicit Name(const std::string& what) : Error(#Name, what) {}          \
    };

TTP_DEFINE_ERROR(MalformedFile)
TTP_DEFINE_ERROR(UnknownFormat)
TTP_DEFINE_ERROR(IoFailure)
TTP_DEFINE_ERROR(InsufficientSamples)
TTP_DEFINE_ERROR(StreamExhausted)
TTP_DEFINE_ERROR(ShapeMismatch)
TTP_DEFINE_ERROR(BadMagic)
TTP_DEFINE_ERROR(VersionMismatch)
TTP_DEFINE_ERROR(ChecksumMismatch)
TTP_DEFINE_ERROR(ZeroNormRow)
TTP_DEFINE_ERROR(BadClassIndex)
TTP_DEFINE_ERROR(DidNotConverge)
TTP_DEFINE_ERROR(NaNLoss)
TTP_DEFINE_ERROR(BudgetViolation)
TTP_DEFINE_ERROR(BadWindow)
TTP_DEFINE_ERROR(MissingTargetTag)
TTP_DEFINE_ERROR(InvalidArgument)

#undef TTP_DEFINE_ERROR

}  // namespace ttp
