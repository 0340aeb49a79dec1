#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace streetbase {

enum class ErrorCode {
    InvalidGeometry,
    OutOfRange,
    OffsetDegenerate,
    FilletTooLarge,
    EmptyVote,
    Conflict,
    NotFound,
    ConcurrentModification,
    ParseError,
    CyclicTriggerError,
    Misconfigured,
    Unsupported,
    AmbiguousEdit,
    DegenerateSection,
    NotOnRoad,
    Rejected,
};

std::string_view to_string(ErrorCode code);

// Every failure surfaced by the engine. The optional layer/feature pair
// locates the offending record and ends up in the HTTP error body.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message,
          std::optional<std::string> layer = std::nullopt,
          std::optional<std::int64_t> feature = std::nullopt)
        : std::runtime_error(message), code_(code), layer_(std::move(layer)), feature_(feature) {}

    ErrorCode code() const noexcept { return code_; }
    const std::optional<std::string>& layer() const noexcept { return layer_; }
    std::optional<std::int64_t> feature() const noexcept { return feature_; }

    Error with_location(std::string layer, std::optional<std::int64_t> feature) const {
        return Error(code_, what(), layer_ ? layer_ : std::optional<std::string>(std::move(layer)),
                     feature_ ? feature_ : feature);
    }

private:
    ErrorCode code_;
    std::optional<std::string> layer_;
    std::optional<std::int64_t> feature_;
};

} // namespace streetbase
