#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "icdlaat/autodiff.hpp"
#include "icdlaat/corpus.hpp"
#include "icdlaat/errors.hpp"
#include "icdlaat/util.hpp"

namespace icdlaat {

class SegmentTooLong : public Error {
public:
    using Error::Error;
};

/// Token vocabulary. Reserved tokens occupy fixed indices 0-3; lookups of
/// unknown tokens resolve to UNK.
class Vocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kCls = 2;
    static constexpr int kSep = 3;

    Vocab();
    static Vocab from_tokens(std::vector<std::string> tokens);

    int lookup(std::string_view token) const;
    const std::string& token(int id) const;
    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    std::string to_manifest() const;
    static Vocab parse_manifest(const std::string& text);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

/// Reserved tokens first, then all distinct corpus tokens in lexicographic
/// order (lowercased, whitespace-split).
Vocab build_vocab(const Corpus& corpus);

/// Lowercase, whitespace-split, per-token vocab lookup with UNK fallback.
std::vector<int> tokenize(std::string_view text, const Vocab& vocab);

struct Segment {
    std::vector<int> ids;
    std::vector<std::uint8_t> mask; // 1 = real token, 0 = PAD

    /// Real tokens excluding the leading CLS.
    std::size_t content_len() const;
};

/// Split into segments of max_len - 1 content tokens, CLS prepended, all
/// padded to max_len. Empty input yields one CLS + all-PAD segment.
std::vector<Segment> segment(const std::vector<int>& ids, std::size_t max_len);

struct EncoderConfig {
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t n_layers = 2;
    std::size_t d_ff = 128;
    std::size_t max_segment_len = 128; // L

    void validate() const;
};

inline constexpr float kAttentionMaskBias = -1e9f;
inline constexpr double kLayerNormEps = 1e-5;

template <typename S>
struct EncoderLayerWeights {
    ad::Tensor<S> wqkv, bqkv;         // (d, 3d), (3d): fused query/key/value projection
    ad::Tensor<S> wo, bo;             // (d, d), (d)
    ad::Tensor<S> ln1_gain, ln1_bias; // (d)
    ad::Tensor<S> w1, b1;             // (d, d_ff), (d_ff)
    ad::Tensor<S> w2, b2;             // (d_ff, d), (d)
    ad::Tensor<S> ln2_gain, ln2_bias; // (d)
};

template <typename S>
struct EncoderWeights {
    EncoderConfig config;
    ad::Tensor<S> embedding;  // (vocab, d)
    ad::Tensor<S> positional; // (L, d)
    std::vector<EncoderLayerWeights<S>> layers;

    static EncoderWeights init(const EncoderConfig& config, std::size_t vocab_size,
                               Rng& rng);
    std::vector<std::pair<std::string, ad::Tensor<S>*>> named_params();
};

template <typename S>
EncoderWeights<S> EncoderWeights<S>::init(const EncoderConfig& config,
                                          std::size_t vocab_size, Rng& rng) {
    config.validate();
    const S scale = S(0.02);
    auto randn = [&](ad::Shape shape) {
        std::vector<S> v(ad::shape_numel(shape));
        for (auto& x : v) {
            x = static_cast<S>(rng.normal()) * scale;
        }
        return ad::Tensor<S>::leaf(std::move(shape), std::move(v), true);
    };
    auto fill = [&](ad::Shape shape, S value) {
        std::vector<S> v(ad::shape_numel(shape), value);
        return ad::Tensor<S>::leaf(std::move(shape), std::move(v), true);
    };
    const std::size_t d = config.d_model, dff = config.d_ff, L = config.max_segment_len;
    EncoderWeights w;
    w.config = config;
    w.embedding = randn({vocab_size, d});
    w.positional = randn({L, d});
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        EncoderLayerWeights<S> lw;
        lw.wqkv = randn({d, 3 * d});
        lw.bqkv = fill({3 * d}, S(0));
        lw.wo = randn({d, d});
        lw.bo = fill({d}, S(0));
        lw.ln1_gain = fill({d}, S(1));
        lw.ln1_bias = fill({d}, S(0));
        lw.w1 = randn({d, dff});
        lw.b1 = fill({dff}, S(0));
        lw.w2 = randn({dff, d});
        lw.b2 = fill({d}, S(0));
        lw.ln2_gain = fill({d}, S(1));
        lw.ln2_bias = fill({d}, S(0));
        w.layers.push_back(std::move(lw));
    }
    return w;
}

template <typename S>
std::vector<std::pair<std::string, ad::Tensor<S>*>> EncoderWeights<S>::named_params() {
    std::vector<std::pair<std::string, ad::Tensor<S>*>> out;
    out.emplace_back("encoder.embedding", &embedding);
    out.emplace_back("encoder.positional", &positional);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string p = "encoder.layer" + std::to_string(l) + ".";
        auto& lw = layers[l];
        out.emplace_back(p + "wqkv", &lw.wqkv);
        out.emplace_back(p + "bqkv", &lw.bqkv);
        out.emplace_back(p + "wo", &lw.wo);
        out.emplace_back(p + "bo", &lw.bo);
        out.emplace_back(p + "ln1_gain", &lw.ln1_gain);
        out.emplace_back(p + "ln1_bias", &lw.ln1_bias);
        out.emplace_back(p + "w1", &lw.w1);
        out.emplace_back(p + "b1", &lw.b1);
        out.emplace_back(p + "w2", &lw.w2);
        out.emplace_back(p + "b2", &lw.b2);
        out.emplace_back(p + "ln2_gain", &lw.ln2_gain);
        out.emplace_back(p + "ln2_bias", &lw.ln2_bias);
    }
    return out;
}

/// Debug hook receiving each head's attention matrix (queries x keys).
template <typename S>
using AttentionObserver =
    std::function<void(std::size_t layer, std::size_t seg, std::size_t head,
                       const ad::Tensor<S>& attention)>;

/// Encode equal-length segments jointly; returns (n_segments * len, d_model)
/// with per-segment attention (tokens never attend across segments, and PAD
/// key positions are masked out).
template <typename S>
ad::Tensor<S> encode_segments(const std::vector<Segment>& segs,
                              const EncoderWeights<S>& w,
                              const AttentionObserver<S>* observer = nullptr) {
    const EncoderConfig& cfg = w.config;
    const std::size_t L = cfg.max_segment_len;
    if (segs.empty()) {
        throw Error("encode_segments requires at least one segment");
    }
    const std::size_t slen = segs[0].ids.size();
    std::vector<int> ids;
    std::vector<int> pos_ids;
    std::vector<ad::Tensor<S>> mask_bias;
    for (const auto& seg : segs) {
        if (seg.ids.size() > L) {
            throw SegmentTooLong("segment of length " + std::to_string(seg.ids.size()) +
                                 " exceeds limit " + std::to_string(L));
        }
        if (seg.ids.size() != slen || seg.mask.size() != seg.ids.size()) {
            throw Error("encode_segments requires equal-length segments with masks");
        }
        ids.insert(ids.end(), seg.ids.begin(), seg.ids.end());
        for (std::size_t i = 0; i < slen; ++i) {
            pos_ids.push_back(static_cast<int>(i));
        }
        std::vector<S> bias(slen);
        for (std::size_t i = 0; i < slen; ++i) {
            bias[i] = seg.mask[i] ? S(0) : static_cast<S>(kAttentionMaskBias);
        }
        mask_bias.push_back(ad::Tensor<S>::leaf({slen}, std::move(bias), false));
    }

    const std::size_t n_seg = segs.size();
    const std::size_t d = cfg.d_model;
    const std::size_t dh = d / cfg.n_heads;
    const S scale = S(1) / static_cast<S>(std::sqrt(static_cast<double>(dh)));

    auto x = ad::add(ad::embedding_lookup(w.embedding, std::move(ids)),
                     ad::embedding_lookup(w.positional, std::move(pos_ids)));
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const auto& lw = w.layers[l];
        auto qkv = ad::add(ad::matmul(x, lw.wqkv), lw.bqkv);
        std::vector<ad::Tensor<S>> seg_ctx;
        for (std::size_t s = 0; s < n_seg; ++s) {
            auto qkv_s = ad::slice(qkv, 0, s * slen, slen);
            std::vector<ad::Tensor<S>> head_ctx;
            for (std::size_t h = 0; h < cfg.n_heads; ++h) {
                auto q = ad::slice(qkv_s, 1, h * dh, dh);
                auto k = ad::slice(qkv_s, 1, d + h * dh, dh);
                auto v = ad::slice(qkv_s, 1, 2 * d + h * dh, dh);
                auto scores = ad::mul_scalar(ad::matmul(q, ad::transpose(k)), scale);
                auto a = ad::softmax_axis(ad::add(scores, mask_bias[s]), 1);
                if (observer) {
                    (*observer)(l, s, h, a);
                }
                head_ctx.push_back(ad::matmul(a, v));
            }
            seg_ctx.push_back(
                ad::concat(std::span<const ad::Tensor<S>>(head_ctx), 1));
        }
        auto ctx = n_seg == 1 ? seg_ctx[0]
                              : ad::concat(std::span<const ad::Tensor<S>>(seg_ctx), 0);
        auto attn = ad::add(ad::matmul(ctx, lw.wo), lw.bo);
        x = ad::layer_norm(ad::add(x, attn), lw.ln1_gain, lw.ln1_bias,
                           static_cast<S>(kLayerNormEps));
        auto ff = ad::add(
            ad::matmul(ad::relu(ad::add(ad::matmul(x, lw.w1), lw.b1)), lw.w2), lw.b2);
        x = ad::layer_norm(ad::add(x, ff), lw.ln2_gain, lw.ln2_bias,
                           static_cast<S>(kLayerNormEps));
    }
    return x;
}

/// Token representations for one segment: (segment length, d_model).
template <typename S>
ad::Tensor<S> encode_segment(const Segment& seg, const EncoderWeights<S>& w,
                             const AttentionObserver<S>* observer = nullptr) {
    return encode_segments(std::vector<Segment>{seg}, w, observer);
}

enum class DocStrategy { Truncate, HierSegments, StackedTokens };

std::string to_string(DocStrategy strategy);
DocStrategy doc_strategy_from_string(std::string_view name);

template <typename S>
struct DocEncoding {
    DocStrategy strategy = DocStrategy::Truncate;
    std::vector<Segment> segments;
    /// Truncate: full first-segment H. StackedTokens: all content rows (CLS
    /// row of the first segment when the stay has no content tokens).
    ad::Tensor<S> h;
    std::vector<ad::Tensor<S>> segment_reps; // HierSegments only
    std::vector<int> content_ids;            // token ids aligned with stacked rows
};

/// Strategy-shaped encoding of an already-segmented stay.
template <typename S>
DocEncoding<S> encode_segmented(std::vector<Segment> segments,
                                const EncoderWeights<S>& w, DocStrategy strategy,
                                const AttentionObserver<S>* observer = nullptr) {
    DocEncoding<S> out;
    out.strategy = strategy;
    out.segments = std::move(segments);
    if (out.segments.empty()) {
        throw Error("encode_segmented requires at least one segment");
    }
    const std::size_t L = w.config.max_segment_len;

    if (strategy == DocStrategy::Truncate) {
        out.h = encode_segment(out.segments[0], w, observer);
        const auto& seg = out.segments[0];
        for (std::size_t i = 1; i < 1 + seg.content_len(); ++i) {
            out.content_ids.push_back(seg.ids[i]);
        }
        return out;
    }

    auto x = encode_segments(out.segments, w, observer);
    if (strategy == DocStrategy::HierSegments) {
        for (std::size_t s = 0; s < out.segments.size(); ++s) {
            const std::size_t clen = out.segments[s].content_len();
            // Empty segments (whole stay empty) fall back to the CLS row.
            auto rows = clen > 0 ? ad::slice(x, 0, s * L + 1, clen)
                                 : ad::slice(x, 0, s * L, 1);
            out.segment_reps.push_back(ad::reduce_mean(rows, 0));
        }
        return out;
    }

    std::vector<ad::Tensor<S>> blocks;
    for (std::size_t s = 0; s < out.segments.size(); ++s) {
        const std::size_t clen = out.segments[s].content_len();
        if (clen == 0) {
            continue;
        }
        blocks.push_back(ad::slice(x, 0, s * L + 1, clen));
        for (std::size_t i = 1; i < 1 + clen; ++i) {
            out.content_ids.push_back(out.segments[s].ids[i]);
        }
    }
    if (blocks.empty()) {
        out.h = ad::slice(x, 0, 0, 1);
        out.content_ids.push_back(Vocab::kCls);
    } else {
        out.h = blocks.size() == 1
                    ? blocks[0]
                    : ad::concat(std::span<const ad::Tensor<S>>(blocks), 0);
    }
    return out;
}

template <typename S>
DocEncoding<S> encode_document(std::string_view stay_text, const EncoderWeights<S>& w,
                               DocStrategy strategy, const Vocab& vocab,
                               const AttentionObserver<S>* observer = nullptr) {
    return encode_segmented(segment(tokenize(stay_text, vocab), w.config.max_segment_len),
                            w, strategy, observer);
}

} // namespace icdlaat
