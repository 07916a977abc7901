#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace specdraft {

using TokenId = std::uint32_t;

/// Sentinel index used for "no parent" in flattened drafts.
inline constexpr std::int32_t kNoParent = -1;

/// Raised when a persisted artifact fails validation. `field()` names the
/// header field or section that was wrong.
class FormatError : public std::runtime_error {
public:
  FormatError(std::string field, const std::string& what)
      : std::runtime_error(what + " (field: " + field + ")"), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

private:
  std::string field_;
};

}  // namespace specdraft
