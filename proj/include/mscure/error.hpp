#pragma once

#include <stdexcept>
#include <string>

namespace mscure {

/// Error raised by any pipeline stage. `module()` names the stage that failed
/// so the CLI can report it in its machine-readable error document.
class Error : public std::runtime_error {
public:
    Error(std::string module, const std::string& message)
        : std::runtime_error(message), module_(std::move(module)) {}

    const std::string& module() const noexcept { return module_; }

private:
    std::string module_;
};

}  // namespace mscure
