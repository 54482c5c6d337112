#include "icdlaat/encoder.hpp"

#include <array>
#include <set>
#include <sstream>

namespace icdlaat {

namespace {

const std::array<std::string, 4> kReserved = {"<pad>", "<unk>", "<cls>", "<sep>"};

} // namespace

Vocab::Vocab() {
    for (const auto& t : kReserved) {
        index_.emplace(t, static_cast<int>(tokens_.size()));
        tokens_.push_back(t);
    }
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
    Vocab v;
    if (tokens.size() < kReserved.size()) {
        throw Error("vocab must contain the reserved tokens");
    }
    for (std::size_t i = 0; i < kReserved.size(); ++i) {
        if (tokens[i] != kReserved[i]) {
            throw Error("vocab reserved token mismatch at index " + std::to_string(i) +
                        ": " + tokens[i]);
        }
    }
    for (std::size_t i = kReserved.size(); i < tokens.size(); ++i) {
        auto [_, inserted] = v.index_.emplace(tokens[i], static_cast<int>(i));
        if (!inserted) {
            throw Error("duplicate vocab token: " + tokens[i]);
        }
        v.tokens_.push_back(tokens[i]);
    }
    return v;
}

int Vocab::lookup(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw Error("vocab id out of range: " + std::to_string(id));
    }
    return tokens_[static_cast<std::size_t>(id)];
}

std::string Vocab::to_manifest() const {
    std::ostringstream out;
    out << "vocab v1 " << tokens_.size() << "\n";
    for (const auto& t : tokens_) {
        out << t << "\n";
    }
    return out.str();
}

Vocab Vocab::parse_manifest(const std::string& text) {
    std::istringstream in(text);
    std::string word, version;
    std::size_t count = 0;
    if (!(in >> word >> version >> count) || word != "vocab" || version != "v1") {
        throw Error("malformed vocab manifest header");
    }
    std::vector<std::string> tokens;
    std::string line;
    std::getline(in, line); // rest of header line
    while (std::getline(in, line)) {
        if (!line.empty()) {
            tokens.push_back(line);
        }
    }
    if (tokens.size() != count) {
        throw Error("vocab manifest declares " + std::to_string(count) +
                    " tokens but contains " + std::to_string(tokens.size()));
    }
    return from_tokens(std::move(tokens));
}

Vocab build_vocab(const Corpus& corpus) {
    std::set<std::string> seen;
    for (const auto& stay : corpus.stays()) {
        for (const auto& doc : stay.documents) {
            for (auto& tok : split_ws(to_lower(doc))) {
                bool reserved = false;
                for (const auto& r : kReserved) {
                    reserved = reserved || tok == r;
                }
                if (!reserved) {
                    seen.insert(std::move(tok));
                }
            }
        }
    }
    std::vector<std::string> tokens(kReserved.begin(), kReserved.end());
    tokens.insert(tokens.end(), seen.begin(), seen.end());
    return Vocab::from_tokens(std::move(tokens));
}

std::vector<int> tokenize(std::string_view text, const Vocab& vocab) {
    std::vector<int> ids;
    for (const auto& tok : split_ws(to_lower(std::string(text)))) {
        ids.push_back(vocab.lookup(tok));
    }
    return ids;
}

std::size_t Segment::content_len() const {
    std::size_t n = 0;
    for (std::size_t i = 1; i < mask.size(); ++i) {
        n += mask[i] ? 1 : 0;
    }
    return n;
}

std::vector<Segment> segment(const std::vector<int>& ids, std::size_t max_len) {
    if (max_len < 4) {
        throw Error("segment length limit must be at least 4, got " +
                    std::to_string(max_len));
    }
    const std::size_t chunk = max_len - 1;
    std::vector<Segment> out;
    std::size_t pos = 0;
    do {
        const std::size_t take = std::min(chunk, ids.size() - pos);
        Segment seg;
        seg.ids.reserve(max_len);
        seg.mask.reserve(max_len);
        seg.ids.push_back(Vocab::kCls);
        seg.mask.push_back(1);
        for (std::size_t i = 0; i < take; ++i) {
            seg.ids.push_back(ids[pos + i]);
            seg.mask.push_back(1);
        }
        while (seg.ids.size() < max_len) {
            seg.ids.push_back(Vocab::kPad);
            seg.mask.push_back(0);
        }
        out.push_back(std::move(seg));
        pos += take;
    } while (pos < ids.size());
    return out;
}

void EncoderConfig::validate() const {
    if (d_model == 0 || n_heads == 0 || n_layers == 0 || d_ff == 0) {
        throw Error("encoder dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
        throw Error("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                    std::to_string(n_heads));
    }
    if (max_segment_len < 4) {
        throw Error("max segment length must be at least 4, got " +
                    std::to_string(max_segment_len));
    }
}

std::string to_string(DocStrategy strategy) {
    switch (strategy) {
    case DocStrategy::Truncate:
        return "truncate";
    case DocStrategy::HierSegments:
        return "hier-segments";
    case DocStrategy::StackedTokens:
        return "stacked-tokens";
    }
    throw Error("unknown document strategy");
}

DocStrategy doc_strategy_from_string(std::string_view name) {
    if (name == "truncate") {
        return DocStrategy::Truncate;
    }
    if (name == "hier-segments") {
        return DocStrategy::HierSegments;
    }
    if (name == "stacked-tokens") {
        return DocStrategy::StackedTokens;
    }
    throw Error("unknown document strategy: " + std::string(name));
}

} // namespace icdlaat
