#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace pibench {

/// Exception carrying a stable machine-readable code ("empty-conversation",
/// "suffix-io", ...) alongside the human-readable detail.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& detail)
        : std::runtime_error(detail.empty() ? code : code + ": " + detail),
          code_(std::move(code)) {}

    explicit Error(std::string code) : Error(std::move(code), std::string{}) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

} // namespace pibench
