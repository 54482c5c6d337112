#include "icdlaat/labelspace.hpp"

#include <algorithm>
#include <sstream>

#include "icdlaat/util.hpp"

namespace icdlaat {

const char* const kOtherLabel = "OTHER";

std::size_t TargetVector::count() const {
    std::size_t n = 0;
    for (auto b : bits) {
        n += b != 0;
    }
    return n;
}

std::vector<std::size_t> TargetVector::indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < bits.size(); ++i) {
        if (bits[i]) {
            out.push_back(i);
        }
    }
    return out;
}

std::optional<std::size_t> LabelSpace::index_of(const std::string& label) const {
    auto it = index_.find(label);
    if (it == index_.end()) {
        return std::nullopt;
    }
    return it->second;
}

LabelSpace LabelSpace::from_parts(LabelMode mode, std::size_t top_k, bool family_rollup,
                                  std::vector<std::string> labels) {
    LabelSpace s;
    s.mode_ = mode;
    s.top_k_ = mode == LabelMode::TopK ? top_k : 0;
    s.family_rollup_ = mode == LabelMode::Family || family_rollup;
    s.labels_ = std::move(labels);
    for (std::size_t i = 0; i < s.labels_.size(); ++i) {
        if (!s.index_.emplace(s.labels_[i], i).second) {
            throw Error("duplicate label '" + s.labels_[i] + "' in label space");
        }
    }
    if (mode == LabelMode::TopK &&
        (s.labels_.empty() || s.labels_.back() != kOtherLabel)) {
        throw Error("top-K label space must end with " + std::string(kOtherLabel));
    }
    return s;
}

LabelSpace build_labelspace(const Corpus& corpus, LabelMode mode, std::size_t k,
                            bool family_rollup) {
    if (corpus.empty()) {
        throw EmptyCorpus("cannot build a label space from an empty corpus");
    }
    const bool rollup = mode == LabelMode::Family || family_rollup;
    std::map<IcdCode, std::size_t> counts;
    for (const auto& [code, n] : corpus.code_counts()) {
        counts[rollup ? family_of(code) : code] += n;
    }

    std::vector<std::string> labels;
    if (mode == LabelMode::Raw || mode == LabelMode::Family) {
        for (const auto& [code, n] : counts) {
            (void)n;
            labels.push_back(code.raw());
        }
        // std::map iteration is already lexicographic.
    } else {
        if (k < 1) {
            throw Error("top-K label space requires K >= 1");
        }
        std::vector<std::pair<std::string, std::size_t>> ranked;
        ranked.reserve(counts.size());
        for (const auto& [code, n] : counts) {
            ranked.emplace_back(code.raw(), n);
        }
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) {
                return a.second > b.second;
            }
            return a.first < b.first;
        });
        const std::size_t take = std::min(k, ranked.size());
        for (std::size_t i = 0; i < take; ++i) {
            labels.push_back(ranked[i].first);
        }
        labels.push_back(kOtherLabel);
    }
    return LabelSpace::from_parts(mode, k, family_rollup, std::move(labels));
}

TargetVector encode_targets(const std::set<IcdCode>& gold, const LabelSpace& space) {
    if (gold.empty()) {
        throw Error("cannot encode an empty gold code set");
    }
    TargetVector t;
    t.bits.assign(space.size(), 0);
    for (const IcdCode& code : gold) {
        const std::string label =
            space.family_rollup() ? family_of(code).raw() : code.raw();
        if (auto idx = space.index_of(label)) {
            t.bits[*idx] = 1;
        } else if (space.mode() == LabelMode::TopK) {
            t.bits[space.other_index()] = 1;
        } else {
            throw UnknownLabel("gold code '" + label +
                               "' is not in the label space (train/eval vocabulary mismatch)");
        }
    }
    return t;
}

std::string LabelSpace::to_manifest() const {
    std::ostringstream out;
    out << "labelspace v1 ";
    switch (mode_) {
    case LabelMode::Raw:
        out << "raw";
        break;
    case LabelMode::Family:
        out << "family";
        break;
    case LabelMode::TopK:
        out << (family_rollup_ ? "family-topk:" : "topk:") << top_k_;
        break;
    }
    out << ' ' << labels_.size() << '\n';
    for (const std::string& l : labels_) {
        out << l << '\n';
    }
    return out.str();
}

LabelSpace parse_labelspace(const std::string& manifest) {
    std::istringstream in(manifest);
    std::string magic, version, mode_token;
    std::size_t size = 0;
    if (!(in >> magic >> version >> mode_token >> size) || magic != "labelspace") {
        throw ParseError("invalid label space manifest header");
    }
    if (version != "v1") {
        throw ParseError("unsupported label space manifest version '" + version + "'");
    }
    LabelMode mode;
    std::size_t k = 0;
    bool rollup = false;
    if (mode_token == "raw") {
        mode = LabelMode::Raw;
    } else if (mode_token == "family") {
        mode = LabelMode::Family;
    } else if (mode_token.rfind("topk:", 0) == 0 || mode_token.rfind("family-topk:", 0) == 0) {
        mode = LabelMode::TopK;
        rollup = mode_token.rfind("family-topk:", 0) == 0;
        const std::string k_str = mode_token.substr(mode_token.find(':') + 1);
        try {
            k = std::stoul(k_str);
        } catch (const std::exception&) {
            throw ParseError("invalid K in label space mode '" + mode_token + "'");
        }
    } else {
        throw ParseError("unknown label space mode '" + mode_token + "'");
    }
    std::string line;
    std::getline(in, line); // consume end of header line
    std::vector<std::string> labels;
    while (std::getline(in, line)) {
        if (!line.empty()) {
            labels.push_back(line);
        }
    }
    if (labels.size() != size) {
        throw ParseError("label space manifest declares " + std::to_string(size) +
                         " labels, found " + std::to_string(labels.size()));
    }
    return LabelSpace::from_parts(mode, k, rollup, std::move(labels));
}

LabelSpace load_labelspace(const std::string& path) {
    return parse_labelspace(read_text_file(path));
}

void save_labelspace(const LabelSpace& space, const std::string& path) {
    write_text_file(path, space.to_manifest());
}

} // namespace icdlaat
