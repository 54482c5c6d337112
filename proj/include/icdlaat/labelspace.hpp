#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "icdlaat/corpus.hpp"
#include "icdlaat/errors.hpp"
#include "icdlaat/taxonomy.hpp"

namespace icdlaat {

class UnknownLabel : public Error {
public:
    using Error::Error;
};

enum class LabelMode { Raw, Family, TopK };

extern const char* const kOtherLabel; // "OTHER"

/// Multi-hot encoding of a stay's gold labels.
struct TargetVector {
    std::vector<std::uint8_t> bits;

    std::size_t count() const;
    std::vector<std::size_t> indices() const;
};

/// Ordered label vocabulary. Raw: one label per distinct normalized code.
/// Family: one label per distinct 3-char family. TopK: the K most frequent
/// codes plus the OTHER label at the last position.
class LabelSpace {
public:
    LabelMode mode() const { return mode_; }
    std::size_t top_k() const { return top_k_; } // 0 unless mode == TopK
    bool has_other() const { return mode_ == LabelMode::TopK; }
    bool family_rollup() const { return family_rollup_; }

    const std::vector<std::string>& labels() const { return labels_; }
    std::size_t size() const { return labels_.size(); }
    const std::string& label(std::size_t i) const { return labels_.at(i); }
    std::optional<std::size_t> index_of(const std::string& label) const;
    std::size_t other_index() const { return labels_.size() - 1; }

    /// Versioned text manifest, bit-exact round trip with parse_labelspace.
    std::string to_manifest() const;

    static LabelSpace from_parts(LabelMode mode, std::size_t top_k, bool family_rollup,
                                 std::vector<std::string> labels);

private:
    LabelMode mode_ = LabelMode::Raw;
    std::size_t top_k_ = 0;
    bool family_rollup_ = false;
    std::vector<std::string> labels_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Build a label space from corpus code frequencies. Raw/Family: labels sorted
/// lexicographically. TopK: the K most frequent codes (ties broken
/// lexicographically ascending) in descending-frequency order, then OTHER.
/// `family_rollup` rolls codes up to families before counting; it is implied
/// by Family mode and optional (default off) for TopK.
LabelSpace build_labelspace(const Corpus& corpus, LabelMode mode, std::size_t k = 0,
                            bool family_rollup = false);

/// Encode a gold code set against a space. In TopK mode the OTHER bit is set
/// iff at least one gold code falls outside the top-K set; in Raw/Family mode
/// a gold code missing from the space throws UnknownLabel.
TargetVector encode_targets(const std::set<IcdCode>& gold, const LabelSpace& space);

LabelSpace parse_labelspace(const std::string& manifest);
LabelSpace load_labelspace(const std::string& path);
void save_labelspace(const LabelSpace& space, const std::string& path);

} // namespace icdlaat
