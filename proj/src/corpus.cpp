#include "icdlaat/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

#include "icdlaat/util.hpp"

namespace icdlaat {

using nlohmann::json;

const char* const kSeparatorToken = "<sep>";

std::string stay_text(const Stay& stay) {
    std::string out;
    for (std::size_t i = 0; i < stay.documents.size(); ++i) {
        if (i > 0) {
            out += ' ';
            out += kSeparatorToken;
            out += ' ';
        }
        out += stay.documents[i];
    }
    return out;
}

CorpusStats Corpus::stats() const {
    CorpusStats s;
    s.n_stays = stays_.size();
    std::set<IcdCode> distinct;
    for (const Stay& stay : stays_) {
        s.n_documents += stay.documents.size();
        std::size_t stay_tokens = 0;
        for (const std::string& doc : stay.documents) {
            stay_tokens += split_ws(doc).size();
        }
        s.n_tokens += stay_tokens;
        s.total_code_assignments += stay.codes.size();
        distinct.insert(stay.codes.begin(), stay.codes.end());
    }
    s.distinct_codes = distinct.size();
    s.mean_sequence_length =
        stays_.empty() ? 0.0
                       : static_cast<double>(s.n_tokens) / static_cast<double>(s.n_stays);
    return s;
}

std::map<IcdCode, std::size_t> Corpus::code_counts() const {
    std::map<IcdCode, std::size_t> counts;
    for (const Stay& stay : stays_) {
        for (const IcdCode& c : stay.codes) {
            ++counts[c];
        }
    }
    return counts;
}

// --- JSONL -----------------------------------------------------------------

namespace {

Stay parse_stay_line(const std::string& line, std::size_t line_no,
                     bool require_codes = true) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object()) {
        throw ParseError("line " + std::to_string(line_no) + ": not a JSON object");
    }
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (key != "id" && key != "documents" && key != "codes") {
            throw ParseError("line " + std::to_string(line_no) + ": unknown field '" + key +
                             "'");
        }
    }
    if (!j.contains("id") || !j["id"].is_string()) {
        throw ParseError("line " + std::to_string(line_no) + ": missing string field 'id'");
    }
    if (!j.contains("documents") || !j["documents"].is_array()) {
        throw ParseError("line " + std::to_string(line_no) +
                         ": missing array field 'documents'");
    }
    if (require_codes && (!j.contains("codes") || !j["codes"].is_array())) {
        throw ParseError("line " + std::to_string(line_no) + ": missing array field 'codes'");
    }
    if (j.contains("codes") && !j["codes"].is_array()) {
        throw ParseError("line " + std::to_string(line_no) + ": 'codes' must be an array");
    }

    Stay stay;
    stay.id = j["id"].get<std::string>();
    for (const auto& d : j["documents"]) {
        if (!d.is_string()) {
            throw ParseError("line " + std::to_string(line_no) +
                             ": 'documents' entries must be strings");
        }
        stay.documents.push_back(d.get<std::string>());
    }
    if (stay.documents.empty()) {
        throw EmptyDocumentList("line " + std::to_string(line_no) +
                                ": stay '" + stay.id + "' has no documents");
    }
    if (j.contains("codes")) {
        for (const auto& c : j["codes"]) {
            if (!c.is_string()) {
                throw ParseError("line " + std::to_string(line_no) +
                                 ": 'codes' entries must be strings");
            }
            try {
                stay.codes.insert(parse_code(c.get<std::string>()));
            } catch (const MalformedCode& e) {
                throw MalformedCode("line " + std::to_string(line_no) + ": " + e.what());
            }
        }
    }
    if (require_codes && stay.codes.empty()) {
        throw EmptyCodeSet("line " + std::to_string(line_no) + ": stay '" + stay.id +
                           "' has no codes");
    }
    return stay;
}

} // namespace

Corpus load_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError("cannot open corpus file: " + path);
    }
    std::vector<Stay> stays;
    std::unordered_set<std::string> seen_ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        Stay stay = parse_stay_line(line, line_no);
        if (!seen_ids.insert(stay.id).second) {
            throw DuplicateId("line " + std::to_string(line_no) + ": duplicate stay id '" +
                              stay.id + "'",
                              line_no);
        }
        stays.push_back(std::move(stay));
    }
    return Corpus(std::move(stays));
}

std::vector<Stay> load_prediction_inputs(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError("cannot open input file: " + path);
    }
    std::vector<Stay> stays;
    std::unordered_set<std::string> seen_ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        Stay stay = parse_stay_line(line, line_no, /*require_codes=*/false);
        if (!seen_ids.insert(stay.id).second) {
            throw DuplicateId("line " + std::to_string(line_no) + ": duplicate stay id '" +
                              stay.id + "'",
                              line_no);
        }
        stays.push_back(std::move(stay));
    }
    return stays;
}

std::string corpus_to_jsonl(const Corpus& corpus) {
    std::string out;
    for (const Stay& stay : corpus.stays()) {
        json j;
        j["id"] = stay.id;
        j["documents"] = stay.documents;
        json codes = json::array();
        for (const IcdCode& c : stay.codes) {
            codes.push_back(c.raw());
        }
        j["codes"] = codes;
        out += j.dump();
        out += '\n';
    }
    return out;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
    write_text_file(path, corpus_to_jsonl(corpus));
}

std::string synth_manifest_to_json(const SyntheticCorpus& sc) {
    json spec;
    spec["n_stays"] = sc.spec.n_stays;
    spec["n_codes"] = sc.spec.n_codes;
    spec["mean_len"] = sc.spec.mean_len;
    spec["len_dispersion"] = sc.spec.len_dispersion;
    spec["zipf_s"] = sc.spec.zipf_s;
    spec["keywords_per_code"] = sc.spec.keywords_per_code;
    spec["noise_vocab"] = sc.spec.noise_vocab;
    spec["codes_per_stay_min"] = sc.spec.codes_per_stay_min;
    spec["codes_per_stay_max"] = sc.spec.codes_per_stay_max;
    spec["seed"] = sc.spec.seed;
    json keywords;
    for (const auto& [code, kws] : sc.keywords) {
        keywords[code.raw()] = kws;
    }
    json j;
    j["spec"] = spec;
    j["keywords"] = keywords;
    return j.dump(2) + "\n";
}

SyntheticCorpus load_synth_manifest(const std::string& manifest_path,
                                    const std::string& corpus_path) {
    json j;
    try {
        j = json::parse(read_text_file(manifest_path));
    } catch (const json::exception& e) {
        throw ParseError(std::string("manifest parse error: ") + e.what());
    }
    SyntheticCorpus sc;
    const json& spec = j.at("spec");
    sc.spec.n_stays = spec.at("n_stays").get<std::size_t>();
    sc.spec.n_codes = spec.at("n_codes").get<std::size_t>();
    sc.spec.mean_len = spec.at("mean_len").get<std::size_t>();
    sc.spec.len_dispersion = spec.at("len_dispersion").get<double>();
    sc.spec.zipf_s = spec.at("zipf_s").get<double>();
    sc.spec.keywords_per_code = spec.at("keywords_per_code").get<std::size_t>();
    sc.spec.noise_vocab = spec.at("noise_vocab").get<std::size_t>();
    sc.spec.codes_per_stay_min = spec.at("codes_per_stay_min").get<std::size_t>();
    sc.spec.codes_per_stay_max = spec.at("codes_per_stay_max").get<std::size_t>();
    sc.spec.seed = spec.at("seed").get<std::uint64_t>();
    for (const auto& [code, kws] : j.at("keywords").items()) {
        sc.keywords[parse_code(code)] = kws.get<std::vector<std::string>>();
    }
    sc.corpus = load_corpus(corpus_path);
    return sc;
}

// --- split -----------------------------------------------------------------

std::tuple<Corpus, Corpus, Corpus> split_corpus(const Corpus& corpus, double train_ratio,
                                                double val_ratio, double test_ratio,
                                                std::uint64_t seed) {
    if (train_ratio <= 0.0 || val_ratio <= 0.0 || test_ratio <= 0.0) {
        throw RatioSum("split ratios must each be > 0");
    }
    const double sum = train_ratio + val_ratio + test_ratio;
    if (std::abs(sum - 1.0) > 1e-9) {
        throw RatioSum("split ratios sum to " + std::to_string(sum) + ", expected 1");
    }
    const std::size_t n = corpus.size();
    std::size_t n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * val_ratio));
    std::size_t n_test =
        static_cast<std::size_t>(std::floor(static_cast<double>(n) * test_ratio));
    std::size_t n_train = n - n_val - n_test; // floor(train) plus the remainder
    if (n >= 3 && (n_train == 0 || n_val == 0 || n_test == 0)) {
        throw MinPartition("split of " + std::to_string(n) +
                           " stays leaves an empty partition; choose larger ratios");
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order);

    std::vector<Stay> train, val, test;
    for (std::size_t i = 0; i < n; ++i) {
        const Stay& s = corpus.stays()[order[i]];
        if (i < n_train) {
            train.push_back(s);
        } else if (i < n_train + n_val) {
            val.push_back(s);
        } else {
            test.push_back(s);
        }
    }
    return {Corpus(std::move(train)), Corpus(std::move(val)), Corpus(std::move(test))};
}

// --- synthetic generation --------------------------------------------------

void SynthSpec::validate() const {
    if (n_stays < 1 || n_codes < 1 || mean_len < 1 || keywords_per_code < 1 ||
        noise_vocab < 1 || codes_per_stay_min < 1) {
        throw SpecInvariant("all synthetic-spec counts must be >= 1");
    }
    if (codes_per_stay_max < codes_per_stay_min) {
        throw SpecInvariant("codes_per_stay_max < codes_per_stay_min");
    }
    if (len_dispersion <= 0.0) {
        throw SpecInvariant("len_dispersion must be > 0");
    }
    if (zipf_s <= 0.0) {
        throw SpecInvariant("zipf_s must be > 0");
    }
    if (mean_len < codes_per_stay_max * keywords_per_code) {
        throw SpecInvariant("mean_len " + std::to_string(mean_len) +
                            " is below codes_per_stay_max * keywords_per_code = " +
                            std::to_string(codes_per_stay_max * keywords_per_code));
    }
    if (n_codes > 7800) {
        throw SpecInvariant("code inventory limited to 7800 synthetic codes");
    }
    if (keywords_per_code > 26) {
        throw SpecInvariant("keywords_per_code limited to 26");
    }
}

namespace {

// Synthetic code inventory: three sibling codes per 3-char family, so family
// rollup genuinely merges labels ("A000","A001","A002" -> "A00").
std::string synth_code_string(std::size_t i) {
    const std::size_t fam = i / 3;
    char buf[8];
    std::snprintf(buf, sizeof(buf), "%c%02zu%zu", static_cast<char>('A' + fam % 26),
                  (fam / 26) % 100, i % 3);
    return std::string(buf);
}

} // namespace

SyntheticCorpus generate_synthetic(const SynthSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);

    std::vector<IcdCode> codes;
    codes.reserve(spec.n_codes);
    SyntheticCorpus out;
    out.spec = spec;
    for (std::size_t i = 0; i < spec.n_codes; ++i) {
        IcdCode code = parse_code(synth_code_string(i));
        std::vector<std::string> kws;
        for (std::size_t k = 0; k < spec.keywords_per_code; ++k) {
            kws.push_back("kw" + std::to_string(i) + std::string(1, static_cast<char>('a' + k)));
        }
        out.keywords[code] = std::move(kws);
        codes.push_back(std::move(code));
    }

    // Zipf(s) over the inventory: weight of rank i is (i+1)^-s.
    std::vector<double> cumulative(spec.n_codes);
    double total = 0.0;
    for (std::size_t i = 0; i < spec.n_codes; ++i) {
        total += std::pow(static_cast<double>(i + 1), -spec.zipf_s);
        cumulative[i] = total;
    }
    auto draw_code_index = [&]() -> std::size_t {
        const double u = rng.uniform_real() * total;
        return static_cast<std::size_t>(
            std::lower_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
    };

    std::vector<Stay> stays;
    stays.reserve(spec.n_stays);
    for (std::size_t s = 0; s < spec.n_stays; ++s) {
        const std::size_t span = spec.codes_per_stay_max - spec.codes_per_stay_min + 1;
        std::size_t want = spec.codes_per_stay_min + rng.uniform(span);
        want = std::min(want, spec.n_codes);

        std::set<std::size_t> chosen;
        std::size_t attempts = 0;
        while (chosen.size() < want) {
            chosen.insert(draw_code_index());
            if (++attempts > 1000 * want) {
                // Heavily skewed draw keeps colliding; fill from the head of
                // the inventory to stay deterministic.
                for (std::size_t i = 0; chosen.size() < want; ++i) {
                    chosen.insert(i);
                }
            }
        }

        const std::size_t planted = chosen.size() * spec.keywords_per_code;
        const double draw =
            static_cast<double>(spec.mean_len) + spec.len_dispersion * rng.normal();
        std::size_t length = static_cast<std::size_t>(
            std::llround(std::max(draw, static_cast<double>(std::max<std::size_t>(planted, 1)))));

        std::vector<std::string> tokens(length);
        for (std::string& t : tokens) {
            t = "n" + std::to_string(rng.uniform(spec.noise_vocab));
        }
        // Distinct keyword positions, uniform over the whole document.
        std::vector<std::size_t> positions(length);
        std::iota(positions.begin(), positions.end(), 0);
        for (std::size_t i = 0; i < planted; ++i) {
            std::swap(positions[i], positions[i + rng.uniform(length - i)]);
        }
        std::size_t slot = 0;
        for (std::size_t code_idx : chosen) {
            for (const std::string& kw : out.keywords.at(codes[code_idx])) {
                tokens[positions[slot++]] = kw;
            }
        }

        // Split the token stream into 1-3 department documents.
        std::size_t n_docs = 1 + rng.uniform(3);
        n_docs = std::min(n_docs, length);
        std::set<std::size_t> cuts;
        while (cuts.size() + 1 < n_docs) {
            cuts.insert(1 + rng.uniform(length - 1));
        }
        Stay stay;
        char id_buf[16];
        std::snprintf(id_buf, sizeof(id_buf), "s%06zu", s);
        stay.id = id_buf;
        std::size_t start = 0;
        auto flush_doc = [&](std::size_t end) {
            std::string doc;
            for (std::size_t i = start; i < end; ++i) {
                if (i > start) {
                    doc += ' ';
                }
                doc += tokens[i];
            }
            stay.documents.push_back(std::move(doc));
            start = end;
        };
        for (std::size_t cut : cuts) {
            flush_doc(cut);
        }
        flush_doc(length);
        for (std::size_t code_idx : chosen) {
            stay.codes.insert(codes[code_idx]);
        }
        stays.push_back(std::move(stay));
    }
    out.corpus = Corpus(std::move(stays));
    return out;
}

std::vector<std::set<IcdCode>> keyword_oracle_predict(
    const Corpus& corpus, const std::map<IcdCode, std::vector<std::string>>& keywords) {
    std::vector<std::set<IcdCode>> predictions;
    predictions.reserve(corpus.size());
    for (const Stay& stay : corpus.stays()) {
        std::unordered_set<std::string> present;
        for (const std::string& doc : stay.documents) {
            for (std::string& tok : split_ws(doc)) {
                present.insert(std::move(tok));
            }
        }
        std::set<IcdCode> pred;
        for (const auto& [code, kws] : keywords) {
            bool all = true;
            for (const std::string& kw : kws) {
                if (!present.count(kw)) {
                    all = false;
                    break;
                }
            }
            if (all) {
                pred.insert(code);
            }
        }
        predictions.push_back(std::move(pred));
    }
    return predictions;
}

} // namespace icdlaat
