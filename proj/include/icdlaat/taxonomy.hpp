#pragma once

#include <string>
#include <string_view>

#include "icdlaat/errors.hpp"

namespace icdlaat {

class MalformedCode : public Error {
public:
    using Error::Error;
};

/// A validated, normalized ICD-10 code. Normalized form is uppercase with the
/// dot after the category prefix removed: one letter, two digits, then up to
/// four alphanumerics (3-7 chars total).
class IcdCode {
public:
    const std::string& raw() const { return raw_; }

    /// 3-character code family (class-reduction unit).
    std::string family() const { return raw_.substr(0, 3); }

    bool operator==(const IcdCode&) const = default;
    auto operator<=>(const IcdCode&) const = default;

private:
    friend IcdCode parse_code(std::string_view text);
    explicit IcdCode(std::string raw) : raw_(std::move(raw)) {}
    std::string raw_;
};

/// Parse and normalize a code string. Accepts dotted ("E11.9") and undotted
/// ("E119") input; throws MalformedCode on anything not matching the pattern.
/// Idempotent: parsing an already-normalized raw string returns it unchanged.
IcdCode parse_code(std::string_view text);

/// Roll a code up to its 3-character family. Idempotent projection.
IcdCode family_of(const IcdCode& code);

bool is_valid_code(std::string_view text);

} // namespace icdlaat
