#pragma once

#include <stdexcept>
#include <string>

namespace icdlaat {

/// Base class for all library errors. Subclasses name the failure kind;
/// the what() string carries the context (offending input, line, shapes).
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

} // namespace icdlaat
