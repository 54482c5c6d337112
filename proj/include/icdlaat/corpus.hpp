#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "icdlaat/errors.hpp"
#include "icdlaat/taxonomy.hpp"

namespace icdlaat {

class ParseError : public Error {
public:
    using Error::Error;
};
class DuplicateId : public Error {
public:
    DuplicateId(const std::string& what, std::size_t line) : Error(what), line(line) {}
    std::size_t line;
};
class EmptyDocumentList : public Error {
public:
    using Error::Error;
};
class EmptyCodeSet : public Error {
public:
    using Error::Error;
};
class EmptyCorpus : public Error {
public:
    using Error::Error;
};
class RatioSum : public Error {
public:
    using Error::Error;
};
class MinPartition : public Error {
public:
    using Error::Error;
};
class SpecInvariant : public Error {
public:
    using Error::Error;
};

/// One training example: a hospital stay grouping department documents with
/// its gold code set.
struct Stay {
    std::string id;
    std::vector<std::string> documents; // non-empty
    std::set<IcdCode> codes;            // non-empty, normalized
};

struct CorpusStats {
    std::size_t n_stays = 0;
    std::size_t n_documents = 0;
    std::size_t n_tokens = 0;
    double mean_sequence_length = 0.0; // tokens per stay
    std::size_t distinct_codes = 0;
    std::size_t total_code_assignments = 0;
};

class Corpus {
public:
    Corpus() = default;
    explicit Corpus(std::vector<Stay> stays) : stays_(std::move(stays)) {}

    const std::vector<Stay>& stays() const { return stays_; }
    std::size_t size() const { return stays_.size(); }
    bool empty() const { return stays_.empty(); }

    /// Recomputed from the stays on every call, never cached.
    CorpusStats stats() const;

    /// Per-code occurrence counts over all stays.
    std::map<IcdCode, std::size_t> code_counts() const;

private:
    std::vector<Stay> stays_;
};

/// Parameters of the synthetic corpus generator.
struct SynthSpec {
    std::size_t n_stays = 1000;
    std::size_t n_codes = 20;
    std::size_t mean_len = 200;        // tokens per stay
    double len_dispersion = 40.0;      // std dev of the length draw
    double zipf_s = 1.1;               // label-frequency skew exponent
    std::size_t keywords_per_code = 1;
    std::size_t noise_vocab = 2000;
    std::size_t codes_per_stay_min = 1;
    std::size_t codes_per_stay_max = 4;
    std::uint64_t seed = 1;

    /// Throws SpecInvariant when a field violates the construction contract.
    void validate() const;
};

/// A generated corpus together with the generation record needed to audit it:
/// the spec and the code -> keyword-tokens map.
struct SyntheticCorpus {
    Corpus corpus;
    SynthSpec spec;
    std::map<IcdCode, std::vector<std::string>> keywords;
};

// --- file formats ----------------------------------------------------------

/// Load a UTF-8 JSON Lines corpus: one object per line with exactly the
/// fields `id` (string), `documents` (array of strings, >=1), `codes`
/// (array of strings, >=1). Unknown fields are rejected.
Corpus load_corpus(const std::string& path);

void save_corpus(const Corpus& corpus, const std::string& path);

/// JSONL stays for scoring: same strict field rules as load_corpus except
/// that `codes` may be absent or empty.
std::vector<Stay> load_prediction_inputs(const std::string& path);

/// Serialize to the JSONL wire form (used by save_corpus and by the
/// byte-identical-rerun contract of the generator).
std::string corpus_to_jsonl(const Corpus& corpus);

/// Sidecar manifest for a synthetic corpus: the SynthSpec plus the
/// code -> keywords map, as JSON.
std::string synth_manifest_to_json(const SyntheticCorpus& sc);
SyntheticCorpus load_synth_manifest(const std::string& manifest_path,
                                    const std::string& corpus_path);

// --- operations ------------------------------------------------------------

/// Deterministic disjoint partition. Sizes floor-rounded, remainder to train.
/// Throws RatioSum when the ratios do not sum to 1 (or are non-positive) and
/// MinPartition when a positive ratio would receive zero stays on a corpus of
/// at least 3.
std::tuple<Corpus, Corpus, Corpus> split_corpus(const Corpus& corpus,
                                                double train_ratio,
                                                double val_ratio,
                                                double test_ratio,
                                                std::uint64_t seed);

/// Deterministic synthetic corpus. Every gold code's keyword tokens appear
/// verbatim in the stay, planted at positions uniform over the document;
/// remaining positions are noise tokens from a vocabulary disjoint from the
/// keyword vocabulary.
SyntheticCorpus generate_synthetic(const SynthSpec& spec);

/// Rule-based ceiling reference: predict a code iff all of its keywords occur
/// in the stay text. On generator output this achieves micro-F1 = 1.0.
std::vector<std::set<IcdCode>> keyword_oracle_predict(
    const Corpus& corpus, const std::map<IcdCode, std::vector<std::string>>& keywords);

/// Stay text fed to the models: documents joined by the reserved separator
/// token.
std::string stay_text(const Stay& stay);

extern const char* const kSeparatorToken; // "<sep>"

} // namespace icdlaat
