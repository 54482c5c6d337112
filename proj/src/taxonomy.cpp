#include "icdlaat/taxonomy.hpp"

#include <cctype>

namespace icdlaat {

namespace {

bool is_upper_alnum(char c) {
    return (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

} // namespace

IcdCode parse_code(std::string_view text) {
    if (text.empty()) {
        throw MalformedCode("empty code string");
    }
    std::string norm;
    norm.reserve(text.size());
    for (char c : text) {
        norm.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    }
    // A single dot directly after the 3-char category prefix is stripped;
    // a dot anywhere else fails the pattern check below.
    if (norm.size() > 3 && norm[3] == '.') {
        norm.erase(3, 1);
    }
    if (norm.size() < 3 || norm.size() > 7) {
        throw MalformedCode("code '" + std::string(text) + "' has invalid length " +
                            std::to_string(norm.size()) + " after normalization");
    }
    const bool head_ok = (norm[0] >= 'A' && norm[0] <= 'Z') &&
                         (norm[1] >= '0' && norm[1] <= '9') &&
                         (norm[2] >= '0' && norm[2] <= '9');
    if (!head_ok) {
        throw MalformedCode("code '" + std::string(text) +
                            "' does not match letter-digit-digit prefix");
    }
    for (std::size_t i = 3; i < norm.size(); ++i) {
        if (!is_upper_alnum(norm[i])) {
            throw MalformedCode("code '" + std::string(text) +
                                "' has invalid character at position " + std::to_string(i));
        }
    }
    return IcdCode(std::move(norm));
}

IcdCode family_of(const IcdCode& code) {
    return parse_code(code.family());
}

bool is_valid_code(std::string_view text) {
    try {
        parse_code(text);
        return true;
    } catch (const MalformedCode&) {
        return false;
    }
}

} // namespace icdlaat
