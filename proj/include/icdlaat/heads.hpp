#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "icdlaat/autodiff.hpp"
#include "icdlaat/errors.hpp"
#include "icdlaat/util.hpp"

namespace icdlaat {

class EmptySequence : public Error {
public:
    using Error::Error;
};

/// Label-aware attention head. Scores a token matrix H (rows = tokens) as
///   Z = tanh(V Ht), A = row-softmax(W Z), D = Ht At, logit_i = <D[:,i], U[:,i]> + b_i
/// where each row of A is a distribution over tokens.
template <typename S>
struct LaatParams {
    ad::Tensor<S> v; // (d_attn, d_model)
    ad::Tensor<S> w; // (n_labels, d_attn)
    ad::Tensor<S> u; // (d_model, n_labels)
    ad::Tensor<S> b; // (n_labels)
    bool use_bias = true;

    static LaatParams init(std::size_t d_model, std::size_t d_attn, std::size_t n_labels,
                           bool use_bias, Rng& rng);
    std::vector<std::pair<std::string, ad::Tensor<S>*>> named_params();
};

template <typename S>
struct LinearHeadParams {
    ad::Tensor<S> m; // (n_labels, d_model)
    ad::Tensor<S> b; // (n_labels)

    static LinearHeadParams init(std::size_t d_model, std::size_t n_labels, Rng& rng);
    std::vector<std::pair<std::string, ad::Tensor<S>*>> named_params();
};

template <typename S>
LaatParams<S> LaatParams<S>::init(std::size_t d_model, std::size_t d_attn,
                                  std::size_t n_labels, bool use_bias, Rng& rng) {
    const S scale = S(0.02);
    auto randn = [&](ad::Shape shape) {
        std::vector<S> v(ad::shape_numel(shape));
        for (auto& x : v) {
            x = static_cast<S>(rng.normal()) * scale;
        }
        return ad::Tensor<S>::leaf(std::move(shape), std::move(v), true);
    };
    LaatParams p;
    p.v = randn({d_attn, d_model});
    p.w = randn({n_labels, d_attn});
    p.u = randn({d_model, n_labels});
    p.b = ad::Tensor<S>::zeros({n_labels}, use_bias);
    p.use_bias = use_bias;
    return p;
}

template <typename S>
std::vector<std::pair<std::string, ad::Tensor<S>*>> LaatParams<S>::named_params() {
    std::vector<std::pair<std::string, ad::Tensor<S>*>> out;
    out.emplace_back("head.laat.v", &v);
    out.emplace_back("head.laat.w", &w);
    out.emplace_back("head.laat.u", &u);
    if (use_bias) {
        out.emplace_back("head.laat.b", &b);
    }
    return out;
}

template <typename S>
LinearHeadParams<S> LinearHeadParams<S>::init(std::size_t d_model, std::size_t n_labels,
                                              Rng& rng) {
    std::vector<S> mv(n_labels * d_model);
    for (auto& x : mv) {
        x = static_cast<S>(rng.normal()) * S(0.02);
    }
    LinearHeadParams p;
    p.m = ad::Tensor<S>::leaf({n_labels, d_model}, std::move(mv), true);
    p.b = ad::Tensor<S>::zeros({n_labels}, true);
    return p;
}

template <typename S>
std::vector<std::pair<std::string, ad::Tensor<S>*>> LinearHeadParams<S>::named_params() {
    return {{"head.linear.m", &m}, {"head.linear.b", &b}};
}

/// Elementwise arithmetic mean of d_model vectors.
template <typename S>
ad::Tensor<S> aggregate_mean(std::span<const ad::Tensor<S>> segment_reps) {
    if (segment_reps.empty()) {
        throw EmptySequence("aggregate_mean over zero segments");
    }
    return ad::reduce_mean(ad::stack_rows(segment_reps), 0);
}

/// Elementwise maximum of d_model vectors.
template <typename S>
ad::Tensor<S> aggregate_max(std::span<const ad::Tensor<S>> segment_reps) {
    if (segment_reps.empty()) {
        throw EmptySequence("aggregate_max over zero segments");
    }
    return ad::reduce_max(ad::stack_rows(segment_reps), 0);
}

/// logits = M doc_vec + b.
template <typename S>
ad::Tensor<S> linear_scores(const ad::Tensor<S>& doc_vec,
                            const LinearHeadParams<S>& params) {
    if (doc_vec.rank() != 1 || doc_vec.numel() != params.m.dim(1)) {
        throw ad::ShapeMismatch("linear head " + ad::shape_str(params.m.shape()) +
                                " cannot score document vector " +
                                ad::shape_str(doc_vec.shape()));
    }
    const std::size_t d = doc_vec.numel();
    auto col = ad::reshape(doc_vec, {d, 1});
    auto logits = ad::reshape(ad::matmul(params.m, col), {params.m.dim(0)});
    return ad::add(logits, params.b);
}

template <typename S>
struct LaatScores {
    ad::Tensor<S> logits;    // (n_labels)
    ad::Tensor<S> attention; // A: (n_labels, n_tokens), rows are distributions
};

template <typename S>
LaatScores<S> laat_scores(const ad::Tensor<S>& h, const LaatParams<S>& params) {
    if (h.rank() != 2 || h.dim(0) < 1 || h.dim(1) != params.v.dim(1)) {
        throw ad::ShapeMismatch("LAAT head V " + ad::shape_str(params.v.shape()) +
                                " cannot attend over H " + ad::shape_str(h.shape()));
    }
    auto ht = ad::transpose(h);                          // (d, n)
    auto z = ad::tanh(ad::matmul(params.v, ht));         // (d_attn, n)
    auto a = ad::softmax_axis(ad::matmul(params.w, z), 1); // (n_labels, n)
    auto d = ad::matmul(ht, ad::transpose(a));           // (d, n_labels)
    auto logits = ad::reduce_sum(ad::mul(d, params.u), 0);
    if (params.use_bias) {
        logits = ad::add(logits, params.b);
    }
    return {std::move(logits), std::move(a)};
}

} // namespace icdlaat
