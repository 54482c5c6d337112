#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "icdlaat/corpus.hpp"
#include "icdlaat/labelspace.hpp"
#include "icdlaat/trainer.hpp"

using namespace icdlaat;

namespace {

// scratch file helper; deletes on scope exit
struct TempFile {
    std::string path;
    explicit TempFile(const std::string& suffix = ".bin") {
        static int counter = 0;
        path = (std::filesystem::temp_directory_path() /
                ("icdlaat_trainer_test_" + std::to_string(::getpid()) + "_" +
                 std::to_string(counter++) + suffix))
                   .string();
    }
    ~TempFile() { std::remove(path.c_str()); }

    std::string read() const {
        std::ifstream in(path, std::ios::binary);
        std::ostringstream buf;
        buf << in.rdbuf();
        return buf.str();
    }
    void write(const std::string& bytes) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << bytes;
    }
};

ad::Tensor<double> logits_leaf(std::vector<double> v) {
    const std::size_t n = v.size();
    return ad::Tensor<double>::leaf({n}, std::move(v), true);
}

// elementwise reference: mean of max(z,0) - z t + log1p(exp(-|z|))
double bce_oracle(const std::vector<double>& z, const std::vector<std::uint8_t>& t) {
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        total += std::max(z[i], 0.0) - z[i] * (t[i] ? 1.0 : 0.0) +
                 std::log1p(std::exp(-std::abs(z[i])));
    }
    return total / static_cast<double>(z.size());
}

// small keyword-separable corpus for the learning tests
SyntheticCorpus tiny_synth(std::uint64_t seed) {
    SynthSpec spec;
    spec.n_stays = 100;
    spec.n_codes = 6;
    spec.mean_len = 30;
    spec.len_dispersion = 5.0;
    spec.keywords_per_code = 2;
    spec.noise_vocab = 60;
    spec.codes_per_stay_min = 1;
    spec.codes_per_stay_max = 2;
    spec.seed = seed;
    return generate_synthetic(spec);
}

TrainConfig tiny_config() {
    TrainConfig c;
    c.strategy = TrainStrategy::Laat;
    c.learning_rate = 1e-2;
    c.batch_size = 8;
    c.max_epochs = 20;
    c.patience = 20;
    c.seed = 3;
    c.precision = Precision::F32;
    c.encoder.d_model = 16;
    c.encoder.n_heads = 2;
    c.encoder.n_layers = 1;
    c.encoder.d_ff = 32;
    c.encoder.max_segment_len = 16;
    return c;
}

// corpus with a fixed vocabulary and three raw labels, for model plumbing tests
Corpus three_label_corpus() {
    std::vector<Stay> stays;
    stays.push_back({"s1", {"fever cough alpha"}, {parse_code("A00")}});
    stays.push_back({"s2", {"rash beta", "cough gamma"},
                     {parse_code("B01"), parse_code("C02")}});
    stays.push_back({"s3", {"fever rash delta"}, {parse_code("A00"), parse_code("C02")}});
    return Corpus(std::move(stays));
}

template <typename S>
bool params_identical(ModelT<S>& a, ModelT<S>& b) {
    auto pa = a.named_params();
    auto pb = b.named_params();
    if (pa.size() != pb.size()) {
        return false;
    }
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (pa[i].first != pb[i].first || pa[i].second->values() != pb[i].second->values()) {
            return false;
        }
    }
    return true;
}

Model fresh_model(const TrainConfig& config, const Corpus& corpus, std::uint64_t seed) {
    Rng rng(seed);
    return Model::init(config, build_vocab(corpus),
                       build_labelspace(corpus, LabelMode::Raw), rng);
}

} // namespace

TEST_CASE("bce matches closed forms") {
    // logit 0 against target 1 costs exactly ln 2
    auto z0 = logits_leaf({0.0});
    CHECK(bce_loss(z0, {1}).item() == doctest::Approx(0.6931471805599453).epsilon(1e-15));
    auto z0b = logits_leaf({0.0});
    CHECK(bce_loss(z0b, {0}).item() == doctest::Approx(0.6931471805599453).epsilon(1e-15));

    // confident correct logit: softplus(-20)
    auto z20 = logits_leaf({20.0});
    CHECK(bce_loss(z20, {1}).item() ==
          doctest::Approx(2.0611536181902037e-9).epsilon(1e-12));
    auto zn20 = logits_leaf({-20.0});
    CHECK(bce_loss(zn20, {0}).item() ==
          doctest::Approx(2.0611536181902037e-9).epsilon(1e-12));

    // confident wrong logit costs roughly the logit itself
    auto zw = logits_leaf({-30.0});
    CHECK(bce_loss(zw, {1}).item() == doctest::Approx(30.0).epsilon(1e-9));
}

TEST_CASE("bce agrees with the elementwise oracle on random batches") {
    Rng rng(11);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> z(6);
        std::vector<std::uint8_t> t(6);
        for (std::size_t i = 0; i < z.size(); ++i) {
            z[i] = 20.0 * rng.uniform_real() - 10.0;
            t[i] = rng.uniform_real() < 0.5 ? 0 : 1;
        }
        auto zt = ad::Tensor<double>::leaf({2, 3}, z, true);
        const double got = bce_loss(zt, t).item();
        CHECK(got == doctest::Approx(bce_oracle(z, t)).epsilon(1e-12));
        CHECK(got >= 0.0);
    }
}

TEST_CASE("bce vanishes when every logit saturates correctly") {
    auto z = logits_leaf({30.0, -30.0, 30.0, -30.0});
    CHECK(bce_loss(z, {1, 0, 1, 0}).item() < 1e-9);
}

TEST_CASE("bce rejects length mismatches and empty input") {
    auto z = logits_leaf({0.5, -0.5, 1.0});
    CHECK_THROWS_AS(bce_loss(z, {1, 0}), ad::ShapeMismatch);
    CHECK_THROWS_AS(bce_loss(z, {1, 0, 1, 1}), ad::ShapeMismatch);
    auto empty = ad::Tensor<double>::leaf({0}, {}, true);
    CHECK_THROWS_AS(bce_loss(empty, {}), ad::ShapeMismatch);
}

TEST_CASE("bce gradient is (sigmoid(z) - t) / n") {
    auto z = logits_leaf({1.5, -0.75, 0.0, 4.0});
    const std::vector<std::uint8_t> t{1, 0, 1, 0};
    auto loss = bce_loss(z, t);
    ad::backward(loss);
    for (std::size_t i = 0; i < 4; ++i) {
        const double want =
            (1.0 / (1.0 + std::exp(-z.values()[i])) - (t[i] ? 1.0 : 0.0)) / 4.0;
        CHECK(z.grad()[i] == doctest::Approx(want).epsilon(1e-12));
    }

    std::vector<ad::Tensor<double>> params{z};
    auto f = [&] { return bce_loss(z, t); };
    CHECK(ad::grad_check<double>(f, params, 1e-5) < 1e-8);
}

TEST_CASE("adam leaves parameters untouched when no gradient accumulated") {
    auto p = logits_leaf({1.0, -2.0, 3.0});
    const auto before = p.values();
    std::vector<ad::Tensor<double>*> params{&p};
    AdamState<double> state;
    adam_step(std::span<ad::Tensor<double>* const>(params), state, AdamHyper{});
    CHECK(p.values() == before);
    CHECK(state.t == 1);
}

TEST_CASE("adam first step moves each coordinate by almost exactly lr") {
    // bias correction makes mhat/sqrt(vhat) = g/|g| on step one
    auto p = logits_leaf({0.5, -1.5, 2.5});
    auto loss = ad::sum_all(ad::mul(p, logits_leaf({3.0, -0.25, 10.0})));
    ad::backward(loss);
    std::vector<ad::Tensor<double>*> params{&p};
    AdamState<double> state;
    AdamHyper hyper;
    hyper.lr = 1e-3;
    adam_step(std::span<ad::Tensor<double>* const>(params), state, hyper);
    CHECK(p.values()[0] == doctest::Approx(0.5 - 1e-3).epsilon(1e-6));
    CHECK(p.values()[1] == doctest::Approx(-1.5 + 1e-3).epsilon(1e-6));
    CHECK(p.values()[2] == doctest::Approx(2.5 - 1e-3).epsilon(1e-6));
}

TEST_CASE("adam under a constant gradient settles at lr * sign") {
    auto p = logits_leaf({0.0});
    std::vector<ad::Tensor<double>*> params{&p};
    AdamState<double> state;
    AdamHyper hyper;
    hyper.lr = 1e-3;
    const int steps = 200;
    for (int i = 0; i < steps; ++i) {
        p.zero_grad();
        auto loss = ad::mul_scalar(p, 0.5); // d loss / d p = 0.5 every step
        ad::backward(loss);
        adam_step(std::span<ad::Tensor<double>* const>(params), state, hyper);
    }
    CHECK(p.values()[0] == doctest::Approx(-steps * 1e-3).epsilon(1e-4));
    CHECK(state.t == static_cast<std::size_t>(steps));
}

TEST_CASE("adam rejects a parameter list that does not match its state") {
    auto a = logits_leaf({1.0});
    auto b = logits_leaf({2.0});
    std::vector<ad::Tensor<double>*> both{&a, &b};
    AdamState<double> state;
    adam_step(std::span<ad::Tensor<double>* const>(both), state, AdamHyper{});
    std::vector<ad::Tensor<double>*> one{&a};
    CHECK_THROWS_AS(adam_step(std::span<ad::Tensor<double>* const>(one), state, AdamHyper{}),
                    ad::ShapeMismatch);
}

TEST_CASE("config validation rejects out-of-range settings") {
    TrainConfig good = tiny_config();
    CHECK_NOTHROW(good.validate());

    TrainConfig c = good;
    c.learning_rate = 0.0;
    CHECK_THROWS_AS(c.validate(), Error);

    c = good;
    c.patience = c.max_epochs + 1;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("patience"), Error);

    c = good;
    c.threshold = 1.5;
    CHECK_THROWS_AS(c.validate(), Error);

    c = good;
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), Error);

    c = good;
    c.encoder.d_model = 15; // not divisible by n_heads
    CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("canonical config text changes with the settings it covers") {
    TrainConfig a = tiny_config();
    const std::string ta = a.canonical_text();
    CHECK(ta.find("strategy=laat\n") != std::string::npos);
    CHECK(ta.find("precision=f32\n") != std::string::npos);
    CHECK(ta.find("encoder.d_model=16\n") != std::string::npos);

    TrainConfig b = a;
    b.learning_rate = 2e-2;
    CHECK(a.canonical_text() != b.canonical_text());
    TrainConfig c = a;
    CHECK(a.canonical_text() == c.canonical_text());
}

TEST_CASE("strategy names and document strategies line up") {
    for (auto s : {TrainStrategy::Truncate, TrainStrategy::HierMean,
                   TrainStrategy::HierMax, TrainStrategy::Laat}) {
        CHECK(train_strategy_from_string(to_string(s)) == s);
    }
    CHECK_THROWS_AS(train_strategy_from_string("bagging"), Error);
    CHECK(doc_strategy_for(TrainStrategy::Truncate) == DocStrategy::Truncate);
    CHECK(doc_strategy_for(TrainStrategy::HierMean) == DocStrategy::HierSegments);
    CHECK(doc_strategy_for(TrainStrategy::HierMax) == DocStrategy::HierSegments);
    CHECK(doc_strategy_for(TrainStrategy::Laat) == DocStrategy::StackedTokens);

    CHECK(precision_from_string(to_string(Precision::F32)) == Precision::F32);
    CHECK(precision_from_string(to_string(Precision::F64)) == Precision::F64);
    CHECK_THROWS_AS(precision_from_string("f16"), Error);
}

TEST_CASE("every strategy scores a stay into one logit per label") {
    const Corpus corpus = three_label_corpus();
    const std::string text = "fever cough rash and more words than one segment holds";
    for (auto s : {TrainStrategy::Truncate, TrainStrategy::HierMean,
                   TrainStrategy::HierMax, TrainStrategy::Laat}) {
        TrainConfig c = tiny_config();
        c.strategy = s;
        c.encoder.max_segment_len = 8; // forces two segments
        Model model = fresh_model(c, corpus, 5);
        auto scores = score_stay(model, text);
        REQUIRE(scores.logits.numel() == model.space.size());
        for (float v : scores.logits.values()) {
            CHECK(std::isfinite(v));
        }
        if (s == TrainStrategy::Laat) {
            // attention rows cover the stacked content tokens and sum to one
            REQUIRE(scores.attention.shape() ==
                    std::vector<std::size_t>{model.space.size(), scores.content_ids.size()});
            for (std::size_t i = 0; i < model.space.size(); ++i) {
                double row = 0.0;
                for (std::size_t j = 0; j < scores.content_ids.size(); ++j) {
                    row += scores.attention.values()[i * scores.content_ids.size() + j];
                }
                CHECK(row == doctest::Approx(1.0).epsilon(1e-5));
            }
        }
    }
}

TEST_CASE("detached models score identically without tracking gradients") {
    Model model = fresh_model(tiny_config(), three_label_corpus(), 9);
    Model frozen = detach_model(model);
    for (auto& [name, t] : frozen.named_params()) {
        CHECK_FALSE(t->requires_grad());
    }
    auto a = score_stay(model, "fever cough");
    auto b = score_stay(frozen, "fever cough");
    CHECK(a.logits.values() == b.logits.values());
}

TEST_CASE("whole-model gradients pass a finite-difference check") {
    // double-precision desk-size model: 1 layer, 2 heads, 2 segments, 3 labels
    const Corpus corpus = three_label_corpus();
    TrainConfig c = tiny_config();
    c.precision = Precision::F64;
    c.encoder.d_model = 8;
    c.encoder.d_ff = 16;
    c.encoder.max_segment_len = 8;
    Rng rng(21);
    auto model = ModelT<double>::init(c, build_vocab(corpus),
                                      build_labelspace(corpus, LabelMode::Raw), rng);

    // re-draw weights at unit scale (training init leaves q/k grads at noise floor)
    for (auto& [name, t] : model.named_params()) {
        const bool is_gain = name.find("gain") != std::string::npos;
        for (auto& v : t->values_mut()) {
            v = is_gain ? 0.7 + 0.6 * rng.uniform_real() : 1.4 * rng.uniform_real() - 0.7;
        }
    }

    const auto segments =
        segment(tokenize("fever cough rash beta gamma delta fever rash alpha cough",
                         model.vocab),
                c.encoder.max_segment_len);
    REQUIRE(segments.size() == 2);
    const std::vector<std::uint8_t> targets{1, 0, 1};

    std::vector<ad::Tensor<double>> params;
    for (auto& [name, t] : model.named_params()) {
        params.push_back(*t);
    }
    auto f = [&] { return bce_loss(score_segmented(model, segments).logits, targets); };
    const double err = ad::grad_check<double>(f, params, 1e-4);
    CHECK(err < 1e-3);
}

TEST_CASE("training fits a keyword-separable corpus") {
    const auto synth = tiny_synth(7);
    auto [tr, va, te] = split_corpus(synth.corpus, 0.8, 0.1, 0.1, 42);
    const LabelSpace space = build_labelspace(synth.corpus, LabelMode::Raw);

    const auto result = train<float>(tr, va, space, tiny_config());

    REQUIRE_FALSE(result.history.empty());
    CHECK(result.best_f1 >= 0.90);

    // history rows are consecutive 1-based epochs with finite losses
    for (std::size_t i = 0; i < result.history.size(); ++i) {
        CHECK(result.history[i].epoch == i + 1);
        CHECK(std::isfinite(result.history[i].train_loss));
        CHECK(result.history[i].train_loss >= 0.0);
    }
    // loss comes down on separable data
    CHECK(result.history.back().train_loss < result.history.front().train_loss);

    // best_epoch is the first strict maximum of validation F1
    std::size_t arg = 0;
    for (std::size_t i = 1; i < result.history.size(); ++i) {
        if (result.history[i].val_f1 > result.history[arg].val_f1) {
            arg = i;
        }
    }
    CHECK(result.best_epoch == arg + 1);
    CHECK(result.best_f1 == result.history[arg].val_f1);
    CHECK(result.model.best_epoch == result.best_epoch);

    // the returned snapshot reproduces the recorded best F1 exactly
    const auto re = evaluate(result.model, va, 0.5, /*exclude_other=*/false);
    CHECK(re.f1 == result.best_f1);
}

TEST_CASE("training is bit-identical across reruns of one seed") {
    const auto synth = tiny_synth(13);
    auto [tr, va, te] = split_corpus(synth.corpus, 0.8, 0.1, 0.1, 42);
    const LabelSpace space = build_labelspace(synth.corpus, LabelMode::Raw);
    TrainConfig c = tiny_config();
    c.max_epochs = 4;
    c.patience = 4;

    auto r1 = train<float>(tr, va, space, c);
    auto r2 = train<float>(tr, va, space, c);
    REQUIRE(r1.history.size() == r2.history.size());
    for (std::size_t i = 0; i < r1.history.size(); ++i) {
        CHECK(r1.history[i].train_loss == r2.history[i].train_loss);
        CHECK(r1.history[i].val_f1 == r2.history[i].val_f1);
        CHECK(r1.history[i].val_precision == r2.history[i].val_precision);
        CHECK(r1.history[i].val_recall == r2.history[i].val_recall);
    }
    CHECK(r1.best_epoch == r2.best_epoch);
    CHECK(params_identical(r1.model, r2.model));

    TrainConfig other = c;
    other.seed = c.seed + 1;
    auto r3 = train<float>(tr, va, space, other);
    bool differs = r3.history.size() != r1.history.size();
    for (std::size_t i = 0; !differs && i < r1.history.size(); ++i) {
        differs = r1.history[i].train_loss != r3.history[i].train_loss;
    }
    CHECK(differs);
}

TEST_CASE("a stalled run stops after patience non-improving epochs") {
    const auto synth = tiny_synth(17);
    auto [tr, va, te] = split_corpus(synth.corpus, 0.8, 0.1, 0.1, 42);
    const LabelSpace space = build_labelspace(synth.corpus, LabelMode::Raw);
    TrainConfig c = tiny_config();
    c.learning_rate = 1e-12; // perpetual stall: epoch 1 stays the best
    c.max_epochs = 8;
    c.patience = 1;

    const auto result = train<float>(tr, va, space, c);
    CHECK(result.best_epoch == 1);
    CHECK(result.history.size() == 2); // epoch 2 fails to improve, then stop
}

TEST_CASE("history length never exceeds best epoch plus patience") {
    const auto synth = tiny_synth(19);
    auto [tr, va, te] = split_corpus(synth.corpus, 0.8, 0.1, 0.1, 42);
    const LabelSpace space = build_labelspace(synth.corpus, LabelMode::Raw);
    TrainConfig c = tiny_config();
    c.max_epochs = 6;
    c.patience = 2;
    const auto result = train<float>(tr, va, space, c);
    CHECK(result.history.size() <= result.best_epoch + c.patience);
    CHECK(result.history.size() <= c.max_epochs);
}

TEST_CASE("training rejects empty corpora and foreign labels") {
    const auto synth = tiny_synth(23);
    auto [tr, va, te] = split_corpus(synth.corpus, 0.8, 0.1, 0.1, 42);
    const LabelSpace space = build_labelspace(synth.corpus, LabelMode::Raw);
    TrainConfig c = tiny_config();
    c.max_epochs = 1;
    c.patience = 1;

    CHECK_THROWS_AS(train<float>(Corpus{}, va, space, c), EmptyCorpus);
    CHECK_THROWS_AS(train<float>(tr, Corpus{}, space, c), EmptyCorpus);

    // a gold code outside the label space names the offending stay
    std::vector<Stay> odd;
    odd.push_back({"odd-stay", {"some text"}, {parse_code("Z99")}});
    Corpus foreign(std::move(odd));
    CHECK_THROWS_WITH_AS(train<float>(foreign, va, space, c),
                         doctest::Contains("odd-stay"), LabelSpaceMismatch);
    CHECK_THROWS_AS(train<float>(tr, foreign, space, c), LabelSpaceMismatch);

    Model model = fresh_model(c, three_label_corpus(), 2);
    CHECK_THROWS_AS(evaluate(model, Corpus{}, 0.5, false), EmptyCorpus);
    CHECK_THROWS_AS(evaluate(model, foreign, 0.5, false), LabelSpaceMismatch);
}

TEST_CASE("model files round-trip with bit-identical logits") {
    Model model = fresh_model(tiny_config(), three_label_corpus(), 31);
    model.best_epoch = 4;
    TempFile file;
    save_model(model, file.path);
    Model loaded = load_model(file.path);

    CHECK(loaded.fingerprint == model.fingerprint);
    CHECK(loaded.best_epoch == 4);
    CHECK(loaded.space.labels() == model.space.labels());
    CHECK(params_identical(model, loaded));

    for (const char* text : {"fever cough", "rash beta gamma", "", "unseen words only"}) {
        auto a = score_stay(model, text);
        auto b = score_stay(loaded, text);
        CHECK(a.logits.values() == b.logits.values());
    }
}

TEST_CASE("identical saves produce identical bytes and fingerprints") {
    Model model = fresh_model(tiny_config(), three_label_corpus(), 37);
    TempFile f1, f2;
    save_model(model, f1.path);
    save_model(model, f2.path);
    CHECK(f1.read() == f2.read());
    const std::string fp = model_file_fingerprint(f1.path);
    CHECK(fp.size() == 16);
    CHECK(fp == model_file_fingerprint(f2.path));
}

TEST_CASE("a truncated model file fails its checksum") {
    Model model = fresh_model(tiny_config(), three_label_corpus(), 41);
    TempFile file;
    save_model(model, file.path);
    const std::string bytes = file.read();
    file.write(bytes.substr(0, bytes.size() - 5));
    CHECK_THROWS_AS(load_model(file.path), ChecksumMismatch);
}

TEST_CASE("a corrupted tensor byte fails the checksum") {
    Model model = fresh_model(tiny_config(), three_label_corpus(), 43);
    TempFile file;
    save_model(model, file.path);
    std::string bytes = file.read();
    bytes[bytes.size() / 2] = static_cast<char>(bytes[bytes.size() / 2] ^ 0x40);
    file.write(bytes);
    CHECK_THROWS_AS(load_model(file.path), ChecksumMismatch);
}

TEST_CASE("an unsupported version wins over the stale checksum") {
    Model model = fresh_model(tiny_config(), three_label_corpus(), 47);
    TempFile file;
    save_model(model, file.path);
    std::string bytes = file.read();
    const std::string v1 = "icdlaat-model v1\n";
    REQUIRE(bytes.compare(0, v1.size(), v1) == 0);
    file.write("icdlaat-model v99\n" + bytes.substr(v1.size()));
    CHECK_THROWS_AS(load_model(file.path), VersionMismatch);
}

TEST_CASE("non-model files are reported as such") {
    TempFile file;
    file.write("hello, this is not a model\nat all\n");
    CHECK_THROWS_AS(load_model(file.path), Io);
    CHECK_THROWS_AS(load_model("/nonexistent/path/model.bin"), Io);
}

TEST_CASE("precision cast keeps structure and casts values elementwise") {
    const Corpus corpus = three_label_corpus();
    TrainConfig c = tiny_config();
    c.precision = Precision::F64;
    Rng rng(53);
    auto wide = ModelT<double>::init(c, build_vocab(corpus),
                                     build_labelspace(corpus, LabelMode::Raw), rng);
    wide.best_epoch = 7;

    auto narrow = model_cast<float>(wide);
    CHECK(narrow.fingerprint == wide.fingerprint);
    CHECK(narrow.best_epoch == 7);
    auto ws = wide.named_params();
    auto ns = narrow.named_params();
    REQUIRE(ws.size() == ns.size());
    for (std::size_t i = 0; i < ws.size(); ++i) {
        CHECK(ws[i].first == ns[i].first);
        REQUIRE(ws[i].second->numel() == ns[i].second->numel());
        for (std::size_t j = 0; j < ws[i].second->numel(); ++j) {
            CHECK(ns[i].second->values()[j] ==
                  static_cast<float>(ws[i].second->values()[j]));
        }
    }

    // float -> double -> float is lossless
    Model base = fresh_model(tiny_config(), corpus, 59);
    auto back = model_cast<float>(model_cast<double>(base));
    CHECK(params_identical(base, back));
}
