#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "icdlaat/autodiff.hpp"
#include "icdlaat/corpus.hpp"
#include "icdlaat/encoder.hpp"
#include "icdlaat/errors.hpp"
#include "icdlaat/heads.hpp"
#include "icdlaat/labelspace.hpp"
#include "icdlaat/metrics.hpp"
#include "icdlaat/util.hpp"

namespace icdlaat {

class LabelSpaceMismatch : public Error {
public:
    using Error::Error;
};
class Io : public Error {
public:
    using Error::Error;
};
class VersionMismatch : public Error {
public:
    using Error::Error;
};
class ChecksumMismatch : public Error {
public:
    using Error::Error;
};

enum class TrainStrategy { Truncate, HierMean, HierMax, Laat };

std::string to_string(TrainStrategy strategy);
TrainStrategy train_strategy_from_string(std::string_view name);
DocStrategy doc_strategy_for(TrainStrategy strategy);

enum class Precision { F32, F64 };

std::string to_string(Precision precision);
Precision precision_from_string(std::string_view name);

struct EpochStats {
    std::size_t epoch = 0; // 1-based
    double train_loss = 0.0;
    double val_precision = 0.0;
    double val_recall = 0.0;
    double val_f1 = 0.0;
};

struct TrainConfig {
    TrainStrategy strategy = TrainStrategy::Laat;
    double learning_rate = 1e-3;
    std::size_t batch_size = 16;
    std::size_t max_epochs = 20;
    std::size_t patience = 5;
    std::uint64_t seed = 1;
    Precision precision = Precision::F32;
    double threshold = 0.5; // validation decision threshold
    EncoderConfig encoder;
    std::size_t d_attn = 0; // 0 means d_model
    bool laat_bias = true;
    /// Observational per-epoch hook; not part of the canonical config text,
    /// so it never affects fingerprints or reproducibility.
    std::function<void(const EpochStats&)> on_epoch;

    void validate() const;
    /// Canonical flat text form; hashed into the model fingerprint.
    std::string canonical_text() const;
};

/// A trained (or initialized) classifier: vocabulary, label space, encoder
/// and head parameters. The head kind follows the strategy: LAAT uses
/// LaatParams, the pooled strategies use LinearHeadParams.
template <typename S>
struct ModelT {
    Vocab vocab;
    LabelSpace space;
    TrainConfig config;
    EncoderWeights<S> encoder;
    LaatParams<S> laat;
    LinearHeadParams<S> linear;
    std::string fingerprint;
    std::size_t best_epoch = 0;

    static ModelT init(const TrainConfig& config, Vocab vocab, LabelSpace space,
                       Rng& rng);
    std::vector<std::pair<std::string, ad::Tensor<S>*>> named_params();
    bool uses_laat() const { return config.strategy == TrainStrategy::Laat; }
};

using Model = ModelT<float>;

template <typename S>
struct StayScores {
    ad::Tensor<S> logits;
    ad::Tensor<S> attention;      // LAAT only; undefined otherwise
    std::vector<int> content_ids; // rows of the attention matrix
};

/// Mean over every (label, example) entry of the stable binary cross-entropy
/// with logits: max(z,0) - z t + log(1 + exp(-|z|)).
template <typename S>
ad::Tensor<S> bce_loss(const ad::Tensor<S>& logits,
                       const std::vector<std::uint8_t>& targets);

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename S>
struct AdamState {
    std::vector<std::vector<S>> m;
    std::vector<std::vector<S>> v;
    std::size_t t = 0;
};

/// One bias-corrected Adam update from the gradients currently held by the
/// parameter tensors. Parameters with no accumulated gradient read as zero.
template <typename S>
void adam_step(std::span<ad::Tensor<S>* const> params, AdamState<S>& state,
               const AdamHyper& hyper);

template <typename S>
struct TrainResult {
    ModelT<S> model;
    std::vector<EpochStats> history;
    std::size_t best_epoch = 0; // 1-based epoch of the returned snapshot
    double best_f1 = 0.0;
};

template <typename S>
TrainResult<S> train(const Corpus& train_corpus, const Corpus& val_corpus,
                     const LabelSpace& space, const TrainConfig& config);

/// Forward pass for one stay (already segmented).
template <typename S>
StayScores<S> score_segmented(const ModelT<S>& model, std::vector<Segment> segments);

template <typename S>
StayScores<S> score_stay(const ModelT<S>& model, std::string_view text);

/// Detached copy: same values, requires_grad off everywhere (fast inference).
template <typename S>
ModelT<S> detach_model(const ModelT<S>& model);

template <typename S>
EvalReport evaluate(const ModelT<S>& model, const Corpus& corpus, double threshold,
                    bool exclude_other);

/// Model file round trip; logits are bit-identical after load.
void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

/// Trailing checksum of a model file, "%016x"; doubles as the served
/// model-version fingerprint.
std::string model_file_fingerprint(const std::string& path);

// --- implementation --------------------------------------------------------

template <typename S>
ModelT<S> ModelT<S>::init(const TrainConfig& config, Vocab vocab, LabelSpace space,
                          Rng& rng) {
    config.validate();
    if (space.size() == 0) {
        throw LabelSpaceMismatch("label space is empty");
    }
    ModelT m;
    m.config = config;
    m.vocab = std::move(vocab);
    m.space = std::move(space);
    m.encoder = EncoderWeights<S>::init(config.encoder, m.vocab.size(), rng);
    const std::size_t d = config.encoder.d_model;
    const std::size_t d_attn = config.d_attn == 0 ? d : config.d_attn;
    if (m.uses_laat()) {
        m.laat = LaatParams<S>::init(d, d_attn, m.space.size(), config.laat_bias, rng);
    } else {
        m.linear = LinearHeadParams<S>::init(d, m.space.size(), rng);
    }
    Fnv1a64 h;
    h.update(config.canonical_text());
    h.update(m.vocab.to_manifest());
    h.update(m.space.to_manifest());
    m.fingerprint = to_hex16(h.digest());
    return m;
}

template <typename S>
std::vector<std::pair<std::string, ad::Tensor<S>*>> ModelT<S>::named_params() {
    auto out = encoder.named_params();
    auto head = uses_laat() ? laat.named_params() : linear.named_params();
    out.insert(out.end(), head.begin(), head.end());
    return out;
}

template <typename S>
ad::Tensor<S> bce_loss(const ad::Tensor<S>& logits,
                       const std::vector<std::uint8_t>& targets) {
    if (logits.numel() != targets.size() || logits.numel() == 0) {
        throw ad::ShapeMismatch("bce_loss logits " + ad::shape_str(logits.shape()) +
                                " vs " + std::to_string(targets.size()) + " targets");
    }
    const std::size_t n = logits.numel();
    S total = S(0);
    for (std::size_t i = 0; i < n; ++i) {
        const S z = logits.values()[i];
        const S t = targets[i] ? S(1) : S(0);
        total += std::max(z, S(0)) - z * t + std::log1p(std::exp(-std::abs(z)));
    }
    std::vector<S> out{total / static_cast<S>(n)};
    return ad::custom_op<S>(
        {1}, std::move(out), {logits}, [n, targets](ad::Node<S>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            const S g = self.grad[0] / static_cast<S>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const S t = targets[i] ? S(1) : S(0);
                p.grad[i] += g * (ad::stable_sigmoid(p.values[i]) - t);
            }
        });
}

template <typename S>
void adam_step(std::span<ad::Tensor<S>* const> params, AdamState<S>& state,
               const AdamHyper& hyper) {
    if (state.m.empty()) {
        for (auto* p : params) {
            state.m.emplace_back(p->numel(), S(0));
            state.v.emplace_back(p->numel(), S(0));
        }
    }
    if (state.m.size() != params.size()) {
        throw ad::ShapeMismatch("adam state tracks " + std::to_string(state.m.size()) +
                                " tensors, got " + std::to_string(params.size()));
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.t));
    const S b1 = static_cast<S>(hyper.beta1), b2 = static_cast<S>(hyper.beta2);
    const S lr = static_cast<S>(hyper.lr), eps = static_cast<S>(hyper.eps);
    const S c1 = static_cast<S>(1.0 / bc1), c2 = static_cast<S>(1.0 / bc2);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& vals = params[pi]->values_mut();
        const auto& grad = params[pi]->grad();
        auto& m = state.m[pi];
        auto& v = state.v[pi];
        if (m.size() != vals.size()) {
            throw ad::ShapeMismatch("adam moment size " + std::to_string(m.size()) +
                                    " vs parameter size " + std::to_string(vals.size()));
        }
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const S g = grad.empty() ? S(0) : grad[i];
            m[i] = b1 * m[i] + (S(1) - b1) * g;
            v[i] = b2 * v[i] + (S(1) - b2) * g * g;
            const S mhat = m[i] * c1;
            const S vhat = v[i] * c2;
            vals[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

template <typename S>
StayScores<S> score_segmented(const ModelT<S>& model, std::vector<Segment> segments) {
    const DocStrategy ds = doc_strategy_for(model.config.strategy);
    auto enc = encode_segmented(std::move(segments), model.encoder, ds);
    StayScores<S> out;
    out.content_ids = std::move(enc.content_ids);
    switch (model.config.strategy) {
    case TrainStrategy::Laat: {
        auto scores = laat_scores(enc.h, model.laat);
        out.logits = std::move(scores.logits);
        out.attention = std::move(scores.attention);
        break;
    }
    case TrainStrategy::HierMean:
        out.logits = linear_scores(
            aggregate_mean(std::span<const ad::Tensor<S>>(enc.segment_reps)),
            model.linear);
        break;
    case TrainStrategy::HierMax:
        out.logits = linear_scores(
            aggregate_max(std::span<const ad::Tensor<S>>(enc.segment_reps)),
            model.linear);
        break;
    case TrainStrategy::Truncate: {
        // Pool the first segment's content rows (CLS row when empty).
        const std::size_t clen = enc.segments[0].content_len();
        auto rows = clen > 0 ? ad::slice(enc.h, 0, 1, clen) : ad::slice(enc.h, 0, 0, 1);
        out.logits = linear_scores(ad::reduce_mean(rows, 0), model.linear);
        break;
    }
    }
    return out;
}

template <typename S>
StayScores<S> score_stay(const ModelT<S>& model, std::string_view text) {
    return score_segmented(
        model, segment(tokenize(text, model.vocab), model.config.encoder.max_segment_len));
}

template <typename S>
ModelT<S> detach_model(const ModelT<S>& model) {
    ModelT<S> out = model;
    auto src = const_cast<ModelT<S>&>(model).named_params();
    auto dst = out.named_params();
    for (std::size_t i = 0; i < src.size(); ++i) {
        *dst[i].second = ad::Tensor<S>::leaf(src[i].second->shape(),
                                             src[i].second->values(), false);
    }
    return out;
}

/// Precision conversion (e.g. a 64-bit-trained model into the 32-bit file
/// format). Values are cast elementwise; structure and metadata carry over.
template <typename To, typename From>
ModelT<To> model_cast(const ModelT<From>& src) {
    Rng rng(0);
    ModelT<To> dst = ModelT<To>::init(src.config, src.vocab, src.space, rng);
    dst.fingerprint = src.fingerprint;
    dst.best_epoch = src.best_epoch;
    auto s = const_cast<ModelT<From>&>(src).named_params();
    auto d = dst.named_params();
    for (std::size_t i = 0; i < s.size(); ++i) {
        std::vector<To> v(s[i].second->numel());
        for (std::size_t j = 0; j < v.size(); ++j) {
            v[j] = static_cast<To>(s[i].second->values()[j]);
        }
        *d[i].second = ad::Tensor<To>::leaf(s[i].second->shape(), std::move(v), true);
    }
    return dst;
}

namespace detail {

/// Gold label-index sets for every stay; UnknownLabel becomes
/// LabelSpaceMismatch with the stay id attached.
inline std::vector<std::set<std::size_t>> gold_index_sets(const Corpus& corpus,
                                                          const LabelSpace& space) {
    std::vector<std::set<std::size_t>> out;
    out.reserve(corpus.size());
    for (const auto& stay : corpus.stays()) {
        try {
            const auto tv = encode_targets(stay.codes, space);
            auto idx = tv.indices();
            out.emplace_back(idx.begin(), idx.end());
        } catch (const UnknownLabel& e) {
            throw LabelSpaceMismatch("stay '" + stay.id + "': " + e.what());
        }
    }
    return out;
}

} // namespace detail

template <typename S>
EvalReport evaluate(const ModelT<S>& model, const Corpus& corpus, double threshold,
                    bool exclude_other) {
    if (corpus.empty()) {
        throw EmptyCorpus("cannot evaluate on an empty corpus");
    }
    const auto golds = detail::gold_index_sets(corpus, model.space);
    const ModelT<S> frozen = detach_model(model);
    std::vector<std::set<std::size_t>> preds;
    preds.reserve(corpus.size());
    for (const auto& stay : corpus.stays()) {
        auto scores = score_stay(frozen, stay_text(stay));
        std::vector<double> probs(scores.logits.numel());
        for (std::size_t i = 0; i < probs.size(); ++i) {
            probs[i] =
                static_cast<double>(ad::stable_sigmoid(scores.logits.values()[i]));
        }
        auto on = decide(probs, threshold);
        preds.emplace_back(on.begin(), on.end());
    }
    return micro_prf(preds, golds, exclude_other, model.space);
}

template <typename S>
TrainResult<S> train(const Corpus& train_corpus, const Corpus& val_corpus,
                     const LabelSpace& space, const TrainConfig& config) {
    config.validate();
    if (train_corpus.empty()) {
        throw EmptyCorpus("training corpus is empty");
    }
    if (val_corpus.empty()) {
        throw EmptyCorpus("validation corpus is empty");
    }

    Rng rng(config.seed);
    TrainResult<S> result{
        ModelT<S>::init(config, build_vocab(train_corpus), space, rng), {}, 0, 0.0};
    ModelT<S>& model = result.model;
    const std::size_t L = config.encoder.max_segment_len;

    struct Prepped {
        std::vector<Segment> segments;
        std::vector<std::uint8_t> targets;
    };
    std::vector<Prepped> prepped;
    prepped.reserve(train_corpus.size());
    const auto train_golds = detail::gold_index_sets(train_corpus, space);
    for (std::size_t i = 0; i < train_corpus.size(); ++i) {
        const auto& stay = train_corpus.stays()[i];
        Prepped p;
        p.segments = segment(tokenize(stay_text(stay), model.vocab), L);
        p.targets.assign(space.size(), 0);
        for (std::size_t g : train_golds[i]) {
            p.targets[g] = 1;
        }
        prepped.push_back(std::move(p));
    }
    // Validation target encoding is checked up front so a mismatch fails
    // before any training work.
    (void)detail::gold_index_sets(val_corpus, space);

    auto named = model.named_params();
    std::vector<ad::Tensor<S>*> params;
    for (auto& [name, t] : named) {
        params.push_back(t);
    }
    AdamState<S> adam;
    AdamHyper hyper;
    hyper.lr = config.learning_rate;

    std::vector<std::vector<S>> best_values;
    std::size_t epochs_since_best = 0;
    std::vector<std::size_t> order(prepped.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }

    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            for (auto* p : params) {
                p->zero_grad();
            }
            ad::Tensor<S> batch_sum;
            for (std::size_t bi = start; bi < end; ++bi) {
                const Prepped& p = prepped[order[bi]];
                auto scores = score_segmented(model, p.segments);
                auto loss = bce_loss(scores.logits, p.targets);
                loss_sum += static_cast<double>(loss.item());
                batch_sum = batch_sum.defined() ? ad::add(batch_sum, loss) : loss;
            }
            auto batch_loss =
                ad::mul_scalar(batch_sum, S(1) / static_cast<S>(end - start));
            ad::backward(batch_loss);
            adam_step(std::span<ad::Tensor<S>* const>(params), adam, hyper);
        }

        const EvalReport val =
            evaluate(model, val_corpus, config.threshold, /*exclude_other=*/false);
        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(prepped.size());
        stats.val_precision = val.precision;
        stats.val_recall = val.recall;
        stats.val_f1 = val.f1;
        result.history.push_back(stats);
        if (config.on_epoch) {
            config.on_epoch(stats);
        }

        if (result.history.size() == 1 || val.f1 > result.best_f1) {
            result.best_f1 = val.f1;
            result.best_epoch = epoch;
            epochs_since_best = 0;
            best_values.clear();
            for (auto* p : params) {
                best_values.push_back(p->values());
            }
        } else {
            epochs_since_best += 1;
            if (epochs_since_best >= config.patience) {
                break;
            }
        }
    }

    for (std::size_t i = 0; i < params.size(); ++i) {
        params[i]->values_mut() = best_values[i];
        params[i]->zero_grad();
    }
    model.best_epoch = result.best_epoch;
    return result;
}

} // namespace icdlaat
