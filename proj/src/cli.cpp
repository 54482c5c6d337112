#include "icdlaat/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "icdlaat/corpus.hpp"
#include "icdlaat/labelspace.hpp"
#include "icdlaat/metrics.hpp"
#include "icdlaat/trainer.hpp"
#include "icdlaat/util.hpp"

#include "CLI11.hpp"
#include "httplib.h" // after the Eigen-bearing headers: its system includes
                     // leak macros that break Eigen parsing
#include "json.hpp"

namespace icdlaat {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

/// Bad flag values, invalid configs: exit code 2.
class UsageError : public Error {
public:
    using Error::Error;
};

// --- layered configuration -------------------------------------------------
//
// Precedence: command-line flags > ICDLAAT_* environment variables > config
// file entries (flat dotted keys) > built-in defaults.

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) {
        return "";
    }
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw UsageError("cannot open config file: " + path);
    }
    std::map<std::string, std::string> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') {
            continue;
        }
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw UsageError("config file " + path + " line " + std::to_string(line_no) +
                             ": expected key = value");
        }
        out[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
    }
    return out;
}

std::string env_name_for(const std::string& dotted_key) {
    std::string out = "ICDLAAT_";
    for (char c : dotted_key) {
        out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    }
    return out;
}

template <typename T>
bool parse_value(const std::string& text, T& out) {
    if constexpr (std::is_same_v<T, std::string>) {
        out = text;
        return true;
    } else if constexpr (std::is_same_v<T, bool>) {
        if (text == "true" || text == "1" || text == "yes") {
            out = true;
            return true;
        }
        if (text == "false" || text == "0" || text == "no") {
            out = false;
            return true;
        }
        return false;
    } else {
        std::istringstream in(text);
        T v{};
        in >> v;
        if (in.fail()) {
            return false;
        }
        // trailing junk rejected
        std::string rest;
        in >> rest;
        if (!rest.empty()) {
            return false;
        }
        out = v;
        return true;
    }
}

/// Ties CLI11 options to dotted config keys and applies env/file fallbacks
/// for options not given on the command line.
class OptionSet {
public:
    explicit OptionSet(CLI::App* cmd) : cmd_(cmd) {
        cmd->add_option("--config", config_path_, "flat key = value config file");
    }

    template <typename T>
    CLI::Option* add(const std::string& flag, T& target, const std::string& key,
                     const std::string& desc) {
        CLI::Option* opt = cmd_->add_option(flag, target, desc);
        entries_.push_back({opt, key,
                            [&target](const std::string& text) {
                                return parse_value(text, target);
                            },
                            [&target]() { return json(target); }});
        return opt;
    }

    CLI::Option* add_flag(const std::string& flag, bool& target, const std::string& key,
                          const std::string& desc) {
        CLI::Option* opt = cmd_->add_flag(flag, target, desc);
        entries_.push_back({opt, key,
                            [&target](const std::string& text) {
                                return parse_value(text, target);
                            },
                            [&target]() { return json(target); }});
        return opt;
    }

    /// Apply env/file values to options the command line left untouched, then
    /// snapshot the fully resolved configuration.
    json resolve() {
        std::map<std::string, std::string> file_values;
        if (!config_path_.empty()) {
            file_values = parse_config_file(config_path_);
        }
        json resolved = json::object();
        for (auto& e : entries_) {
            if (e.opt->count() == 0) {
                const char* env = std::getenv(env_name_for(e.key).c_str());
                if (env != nullptr) {
                    if (!e.parse(env)) {
                        throw UsageError("invalid value for " + env_name_for(e.key) +
                                         ": " + env);
                    }
                } else if (auto it = file_values.find(e.key); it != file_values.end()) {
                    if (!e.parse(it->second)) {
                        throw UsageError("invalid config value for " + e.key + ": " +
                                         it->second);
                    }
                }
            }
            resolved[e.key] = e.get();
        }
        return resolved;
    }

private:
    struct Entry {
        CLI::Option* opt;
        std::string key;
        std::function<bool(const std::string&)> parse;
        std::function<json()> get;
    };
    CLI::App* cmd_;
    std::string config_path_;
    std::vector<Entry> entries_;
};

// --- run manifests ---------------------------------------------------------

class RunClock {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_)
            .count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void write_run_manifest(const std::string& path, const std::string& command,
                        const json& config, const std::vector<std::string>& inputs,
                        const std::vector<std::string>& artifacts, const RunClock& clock,
                        const json& extra = json::object()) {
    json j;
    j["command"] = command;
    j["config"] = config;
    json in = json::object();
    for (const auto& p : inputs) {
        in[p] = digest_file(p);
    }
    j["inputs"] = in;
    j["artifacts"] = artifacts;
    j["wall_clock_sec"] = clock.seconds();
    for (const auto& [k, v] : extra.items()) {
        j[k] = v;
    }
    write_text_file(path, j.dump(2) + "\n");
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw Error("cannot create directory '" + dir + "': " + ec.message());
    }
}

std::string join_path(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

// --- gen -------------------------------------------------------------------

struct GenArgs {
    std::string out;
    SynthSpec spec;
    OptionSet* opts = nullptr;
};

void setup_gen(CLI::App* cmd, GenArgs& a, OptionSet& opts) {
    opts.add("-o,--out", a.out, "gen.out", "output directory")->required();
    opts.add("--stays", a.spec.n_stays, "gen.stays", "number of stays");
    opts.add("--codes", a.spec.n_codes, "gen.codes", "number of distinct codes");
    opts.add("--mean-len", a.spec.mean_len, "gen.mean_len", "mean tokens per stay");
    opts.add("--len-dispersion", a.spec.len_dispersion, "gen.len_dispersion",
             "std dev of stay length");
    opts.add("--zipf-s", a.spec.zipf_s, "gen.zipf_s", "code frequency skew exponent");
    opts.add("--keywords-per-code", a.spec.keywords_per_code, "gen.keywords_per_code",
             "keyword tokens planted per code");
    opts.add("--noise-vocab", a.spec.noise_vocab, "gen.noise_vocab",
             "noise vocabulary size");
    opts.add("--codes-min", a.spec.codes_per_stay_min, "gen.codes_min",
             "min codes per stay");
    opts.add("--codes-max", a.spec.codes_per_stay_max, "gen.codes_max",
             "max codes per stay");
    opts.add("--seed", a.spec.seed, "gen.seed", "generator seed");
}

int cmd_gen(GenArgs& a) {
    RunClock clock;
    const json config = a.opts->resolve();
    try {
        a.spec.validate();
    } catch (const SpecInvariant& e) {
        throw UsageError(e.what());
    }
    const SyntheticCorpus sc = generate_synthetic(a.spec);
    ensure_dir(a.out);
    const std::string corpus_path = join_path(a.out, "corpus.jsonl");
    const std::string spec_path = join_path(a.out, "spec.manifest");
    save_corpus(sc.corpus, corpus_path);
    write_text_file(spec_path, synth_manifest_to_json(sc));

    const CorpusStats stats = sc.corpus.stats();
    json extra;
    extra["seeds"] = {{"generator", a.spec.seed}};
    extra["metrics"] = {{"stays", stats.n_stays},
                        {"documents", stats.n_documents},
                        {"mean_sequence_length", stats.mean_sequence_length},
                        {"distinct_codes", stats.distinct_codes}};
    write_run_manifest(join_path(a.out, "gen.manifest.json"), "gen", config, {},
                       {corpus_path, spec_path}, clock, extra);
    std::cout << "wrote " << corpus_path << " (" << stats.n_stays << " stays, "
              << stats.distinct_codes << " codes)\n";
    return 0;
}

// --- labels ----------------------------------------------------------------

struct LabelsArgs {
    std::string corpus;
    std::string mode = "raw";
    std::size_t k = 0;
    bool family_rollup = false;
    std::string out = "labelspace.manifest";
    OptionSet* opts = nullptr;
};

void setup_labels(CLI::App* cmd, LabelsArgs& a, OptionSet& opts) {
    opts.add("--corpus", a.corpus, "labels.corpus", "input corpus (JSONL)")->required();
    opts.add("--mode", a.mode, "labels.mode", "raw | family | topk");
    opts.add("--k", a.k, "labels.k", "label count for topk mode");
    opts.add_flag("--family-rollup", a.family_rollup, "labels.family_rollup",
                  "roll codes up to families before ranking (topk mode)");
    opts.add("-o,--out", a.out, "labels.out", "output manifest path");
}

int cmd_labels(LabelsArgs& a) {
    RunClock clock;
    const json config = a.opts->resolve();
    LabelMode mode;
    if (a.mode == "raw") {
        mode = LabelMode::Raw;
    } else if (a.mode == "family") {
        mode = LabelMode::Family;
    } else if (a.mode == "topk") {
        mode = LabelMode::TopK;
        if (a.k < 1) {
            throw UsageError("topk mode requires --k >= 1");
        }
    } else {
        throw UsageError("unknown label mode: " + a.mode);
    }
    const Corpus corpus = load_corpus(a.corpus);
    const LabelSpace space = build_labelspace(corpus, mode, a.k, a.family_rollup);
    if (mode == LabelMode::TopK && space.size() < a.k + 1) {
        std::cerr << "warning: corpus has only " << space.size() - 1
                  << " distinct codes; label space is smaller than K=" << a.k << "\n";
    }
    const fs::path out_path(a.out);
    if (out_path.has_parent_path()) {
        ensure_dir(out_path.parent_path().string());
    }
    save_labelspace(space, a.out);

    json extra;
    extra["metrics"] = {{"labels", space.size()}};
    extra["labelspace_digest"] = to_hex16(fnv1a64(space.to_manifest()));
    const std::string manifest_path =
        (out_path.has_parent_path() ? out_path.parent_path() / "labels.manifest.json"
                                    : fs::path("labels.manifest.json"))
            .string();
    write_run_manifest(manifest_path, "labels", config, {a.corpus}, {a.out}, clock,
                       extra);
    std::cout << "wrote " << a.out << " (" << space.size() << " labels)\n";
    return 0;
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
    std::string corpus;
    std::string labels;
    std::string out;
    std::string strategy = "laat";
    std::string precision = "f32";
    TrainConfig config;
    double val_ratio = 0.1;
    double test_ratio = 0.1;
    std::uint64_t split_seed = 42;
    OptionSet* opts = nullptr;
};

void setup_train(CLI::App* cmd, TrainArgs& a, OptionSet& opts) {
    opts.add("--corpus", a.corpus, "train.corpus", "corpus to split and train on")
        ->required();
    opts.add("--labels", a.labels, "train.labels", "label space manifest")->required();
    opts.add("-o,--out", a.out, "train.out", "output directory")->required();
    opts.add("--strategy", a.strategy, "train.strategy",
             "truncate | hier-mean | hier-max | laat");
    opts.add("--lr", a.config.learning_rate, "train.learning_rate", "Adam learning rate");
    opts.add("--batch-size", a.config.batch_size, "train.batch_size", "stays per step");
    opts.add("--max-epochs", a.config.max_epochs, "train.max_epochs", "epoch budget");
    opts.add("--patience", a.config.patience, "train.patience",
             "epochs without val improvement before stopping");
    opts.add("--seed", a.config.seed, "train.seed", "training seed");
    opts.add("--precision", a.precision, "train.precision", "f32 | f64");
    opts.add("--threshold", a.config.threshold, "train.threshold",
             "validation decision threshold");
    opts.add("--d-attn", a.config.d_attn, "train.d_attn",
             "LAAT attention width (0 = d_model)");
    opts.add("--laat-bias", a.config.laat_bias, "train.laat_bias",
             "per-label bias on LAAT scores");
    opts.add("--d-model", a.config.encoder.d_model, "train.encoder.d_model",
             "encoder width");
    opts.add("--n-heads", a.config.encoder.n_heads, "train.encoder.n_heads",
             "attention heads");
    opts.add("--n-layers", a.config.encoder.n_layers, "train.encoder.n_layers",
             "encoder layers");
    opts.add("--d-ff", a.config.encoder.d_ff, "train.encoder.d_ff",
             "feed-forward width");
    opts.add("--segment-len", a.config.encoder.max_segment_len,
             "train.encoder.max_segment_len", "max tokens per segment (L)");
    opts.add("--val-ratio", a.val_ratio, "train.val_ratio", "validation split ratio");
    opts.add("--test-ratio", a.test_ratio, "train.test_ratio", "test split ratio");
    opts.add("--split-seed", a.split_seed, "train.split_seed", "corpus split seed");
}

json history_to_json(const std::vector<EpochStats>& history, std::size_t best_epoch,
                     double best_f1) {
    json epochs = json::array();
    for (const auto& e : history) {
        epochs.push_back({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"val_precision", e.val_precision},
                          {"val_recall", e.val_recall},
                          {"val_f1", e.val_f1}});
    }
    return {{"epochs", epochs}, {"best_epoch", best_epoch}, {"best_f1", best_f1}};
}

int cmd_train(TrainArgs& a) {
    RunClock clock;
    const json config_json = a.opts->resolve();
    try {
        a.config.strategy = train_strategy_from_string(a.strategy);
        a.config.precision = precision_from_string(a.precision);
        a.config.validate();
        if (a.val_ratio <= 0.0 || a.test_ratio < 0.0 ||
            a.val_ratio + a.test_ratio >= 1.0) {
            throw Error("split ratios must satisfy 0 < val, 0 <= test, val+test < 1");
        }
    } catch (const Error& e) {
        throw UsageError(e.what());
    }

    const Corpus corpus = load_corpus(a.corpus);
    const LabelSpace space = load_labelspace(a.labels);
    auto [train_split, val_split, test_split] = split_corpus(
        corpus, 1.0 - a.val_ratio - a.test_ratio, a.val_ratio, a.test_ratio,
        a.split_seed);

    Model model;
    std::vector<EpochStats> history;
    std::size_t best_epoch = 0;
    double best_f1 = 0.0;
    a.config.on_epoch = [](const EpochStats& e) {
        std::fprintf(stderr, "epoch %zu: loss %.6f val P %.4f R %.4f F1 %.4f\n", e.epoch,
                     e.train_loss, e.val_precision, e.val_recall, e.val_f1);
    };
    if (a.config.precision == Precision::F32) {
        auto result = train<float>(train_split, val_split, space, a.config);
        model = std::move(result.model);
        history = std::move(result.history);
        best_epoch = result.best_epoch;
        best_f1 = result.best_f1;
    } else {
        auto result = train<double>(train_split, val_split, space, a.config);
        model = model_cast<float>(result.model);
        history = std::move(result.history);
        best_epoch = result.best_epoch;
        best_f1 = result.best_f1;
    }

    ensure_dir(a.out);
    const std::string model_path = join_path(a.out, "model.bin");
    const std::string history_path = join_path(a.out, "history.json");
    save_model(model, model_path);
    write_text_file(history_path,
                    history_to_json(history, best_epoch, best_f1).dump(2) + "\n");

    json extra;
    extra["seeds"] = {{"train", a.config.seed}, {"split", a.split_seed}};
    extra["vocab_digest"] = to_hex16(fnv1a64(model.vocab.to_manifest()));
    extra["labelspace_digest"] = to_hex16(fnv1a64(space.to_manifest()));
    extra["model_fingerprint"] = model_file_fingerprint(model_path);
    extra["metrics"] = {{"best_epoch", best_epoch},
                        {"best_val_f1", best_f1},
                        {"epochs_run", history.size()},
                        {"train_stays", train_split.size()},
                        {"val_stays", val_split.size()},
                        {"test_stays", test_split.size()}};
    write_run_manifest(join_path(a.out, "train.manifest.json"), "train", config_json,
                       {a.corpus, a.labels}, {model_path, history_path}, clock, extra);
    std::cout << "best val F1 " << best_f1 << " at epoch " << best_epoch << "; wrote "
              << model_path << "\n";
    return 0;
}

// --- eval ------------------------------------------------------------------

struct EvalArgs {
    std::string model;
    std::string corpus;
    double threshold = 0.5;
    bool exclude_other = false;
    std::uint64_t seed = 0;
    std::string out = ".";
    OptionSet* opts = nullptr;
};

void setup_eval(CLI::App* cmd, EvalArgs& a, OptionSet& opts) {
    opts.add("--model", a.model, "eval.model", "model file")->required();
    opts.add("--corpus", a.corpus, "eval.corpus", "corpus to score")->required();
    opts.add("--threshold", a.threshold, "eval.threshold", "decision threshold");
    opts.add_flag("--exclude-other", a.exclude_other, "eval.exclude_other",
                  "drop the OTHER label from scoring");
    opts.add("--seed", a.seed, "eval.seed", "recorded for bookkeeping (eval is deterministic)");
    opts.add("-o,--out", a.out, "eval.out", "report/manifest directory");
}

int cmd_eval(EvalArgs& a) {
    RunClock clock;
    const json config = a.opts->resolve();
    const Model model = load_model(a.model);
    const Corpus corpus = load_corpus(a.corpus);
    const EvalReport report = evaluate(model, corpus, a.threshold, a.exclude_other);
    std::cout << report.to_text();

    ensure_dir(a.out);
    const std::string report_path = join_path(a.out, "eval.report.json");
    write_text_file(report_path, report.to_json() + "\n");
    json extra;
    extra["vocab_digest"] = to_hex16(fnv1a64(model.vocab.to_manifest()));
    extra["labelspace_digest"] = to_hex16(fnv1a64(model.space.to_manifest()));
    extra["model_fingerprint"] = model_file_fingerprint(a.model);
    extra["metrics"] = {{"precision", report.precision},
                        {"recall", report.recall},
                        {"f1", report.f1}};
    write_run_manifest(join_path(a.out, "eval.manifest.json"), "eval", config,
                       {a.model, a.corpus}, {report_path}, clock, extra);
    return 0;
}

// --- predict ---------------------------------------------------------------

struct PredictArgs {
    std::string model;
    std::string in;
    std::string text;
    double threshold = 0.5;
    std::size_t top_tokens = 0;
    bool exclude_other = false;
    std::uint64_t seed = 0;
    std::string out = ".";
    OptionSet* opts = nullptr;
};

void setup_predict(CLI::App* cmd, PredictArgs& a, OptionSet& opts) {
    opts.add("--model", a.model, "predict.model", "model file")->required();
    opts.add("--in", a.in, "predict.in", "JSONL input (id + documents per line)");
    opts.add("--text", a.text, "predict.text", "score one raw text instead of a file");
    opts.add("--threshold", a.threshold, "predict.threshold", "decision threshold");
    opts.add("--top-tokens", a.top_tokens, "predict.top_tokens",
             "per-label attention tokens to emit (LAAT models)");
    opts.add_flag("--exclude-other", a.exclude_other, "predict.exclude_other",
                  "drop the OTHER label from output");
    opts.add("--seed", a.seed, "predict.seed",
             "recorded for bookkeeping (prediction is deterministic)");
    opts.add("-o,--out", a.out, "predict.out", "manifest directory");
}

json predict_one(const Model& model, const std::string& id, const std::string& text,
                 const PredictArgs& a) {
    auto scores = score_stay(model, text);
    std::vector<double> probs(scores.logits.numel());
    for (std::size_t i = 0; i < probs.size(); ++i) {
        probs[i] = static_cast<double>(ad::stable_sigmoid(scores.logits.values()[i]));
    }
    json codes = json::array();
    json attention = json::object();
    for (std::size_t i : decide(probs, a.threshold)) {
        const std::string& label = model.space.label(i);
        if (a.exclude_other && model.space.has_other() && i == model.space.other_index()) {
            continue;
        }
        codes.push_back({{"code", label}, {"score", probs[i]}});
        if (a.top_tokens > 0 && model.uses_laat()) {
            const std::size_t n_tok = scores.attention.dim(1);
            std::vector<std::size_t> order(n_tok);
            for (std::size_t t = 0; t < n_tok; ++t) {
                order[t] = t;
            }
            const auto& av = scores.attention.values();
            std::stable_sort(order.begin(), order.end(),
                             [&](std::size_t x, std::size_t y) {
                                 return av[i * n_tok + x] > av[i * n_tok + y];
                             });
            json toks = json::array();
            for (std::size_t r = 0; r < std::min(a.top_tokens, n_tok); ++r) {
                toks.push_back(
                    {{"token", model.vocab.token(scores.content_ids[order[r]])},
                     {"weight", static_cast<double>(av[i * n_tok + order[r]])}});
            }
            attention[label] = toks;
        }
    }
    json j;
    j["id"] = id;
    j["codes"] = codes;
    if (a.top_tokens > 0 && model.uses_laat()) {
        j["attention"] = attention;
    }
    return j;
}

int cmd_predict(PredictArgs& a) {
    RunClock clock;
    const json config = a.opts->resolve();
    if (a.in.empty() == a.text.empty()) {
        throw UsageError("predict needs exactly one of --in or --text");
    }
    const Model model = detach_model(load_model(a.model));
    std::size_t n = 0;
    if (!a.text.empty()) {
        std::cout << predict_one(model, "text", a.text, a).dump() << "\n";
        n = 1;
    } else {
        for (const Stay& stay : load_prediction_inputs(a.in)) {
            std::cout << predict_one(model, stay.id, stay_text(stay), a).dump() << "\n";
            ++n;
        }
    }
    ensure_dir(a.out);
    json extra;
    extra["model_fingerprint"] = model_file_fingerprint(a.model);
    extra["metrics"] = {{"stays_scored", n}};
    std::vector<std::string> inputs{a.model};
    if (!a.in.empty()) {
        inputs.push_back(a.in);
    }
    write_run_manifest(join_path(a.out, "predict.manifest.json"), "predict", config,
                       inputs, {}, clock, extra);
    return 0;
}

// --- serve -----------------------------------------------------------------

struct ServeArgs {
    std::string model;
    std::string host = "127.0.0.1";
    int port = 8080;
    double threshold = 0.5;
    std::size_t max_body = 1 << 20;
    std::string out = ".";
    OptionSet* opts = nullptr;
};

void setup_serve(CLI::App* cmd, ServeArgs& a, OptionSet& opts) {
    opts.add("--model", a.model, "serve.model", "model file")->required();
    opts.add("--host", a.host, "serve.host", "bind address");
    opts.add("--port", a.port, "serve.port", "bind port");
    opts.add("--threshold", a.threshold, "serve.threshold", "decision threshold");
    opts.add("--max-body-bytes", a.max_body, "serve.max_body_bytes",
             "request body size limit");
    opts.add("-o,--out", a.out, "serve.out", "manifest directory");
}

int cmd_serve(ServeArgs& a) {
    RunClock clock;
    const json config = a.opts->resolve();
    const Model model = detach_model(load_model(a.model));
    const std::string fingerprint = model_file_fingerprint(a.model);

    httplib::Server server;
    server.set_payload_max_length(a.max_body);
    server.Get("/health", [&](const httplib::Request&, httplib::Response& res) {
        const json j{{"status", "ok"}, {"model_fingerprint", fingerprint}};
        res.set_content(j.dump(), "application/json");
    });
    server.Post("/predict", [&](const httplib::Request& req, httplib::Response& res) {
        auto fail = [&](const std::string& message) {
            res.status = 400;
            res.set_content(json{{"error", message}}.dump(), "application/json");
        };
        json body;
        try {
            body = json::parse(req.body);
        } catch (const json::exception& e) {
            return fail("request body is not valid JSON: " + std::string(e.what()));
        }
        if (!body.is_object()) {
            return fail("request body must be a JSON object");
        }
        for (const auto& [key, value] : body.items()) {
            (void)value;
            if (key != "documents") {
                return fail("unknown field '" + key + "'");
            }
        }
        if (!body.contains("documents") || !body["documents"].is_array() ||
            body["documents"].empty()) {
            return fail("'documents' must be a non-empty array of strings");
        }
        std::string text;
        for (const auto& doc : body["documents"]) {
            if (!doc.is_string()) {
                return fail("'documents' must be a non-empty array of strings");
            }
            if (!text.empty()) {
                text += ' ';
                text += kSeparatorToken;
                text += ' ';
            }
            text += doc.get<std::string>();
        }
        auto scores = score_stay(model, text);
        json codes = json::array();
        for (std::size_t i = 0; i < scores.logits.numel(); ++i) {
            const double p =
                static_cast<double>(ad::stable_sigmoid(scores.logits.values()[i]));
            if (p >= a.threshold) {
                codes.push_back({{"code", model.space.label(i)}, {"score", p}});
            }
        }
        const json out{{"codes", codes}, {"model_version", fingerprint}};
        res.set_content(out.dump(), "application/json");
    });

    ensure_dir(a.out);
    json extra;
    extra["model_fingerprint"] = fingerprint;
    extra["bind"] = a.host + ":" + std::to_string(a.port);
    write_run_manifest(join_path(a.out, "serve.manifest.json"), "serve", config,
                       {a.model}, {}, clock, extra);
    std::cout << "serving on http://" << a.host << ":" << a.port << "\n" << std::flush;
    if (!server.listen(a.host, a.port)) {
        std::cerr << "error: failed to bind " << a.host << ":" << a.port << "\n";
        return 1;
    }
    return 0;
}

// --- top level -------------------------------------------------------------

} // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"ICD-10 code association pipeline"};
    app.require_subcommand(1);

    GenArgs gen_args;
    LabelsArgs labels_args;
    TrainArgs train_args;
    EvalArgs eval_args;
    PredictArgs predict_args;
    ServeArgs serve_args;

    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic corpus");
    OptionSet gen_opts(gen);
    setup_gen(gen, gen_args, gen_opts);
    gen_args.opts = &gen_opts;

    CLI::App* labels = app.add_subcommand("labels", "build a label space");
    OptionSet labels_opts(labels);
    setup_labels(labels, labels_args, labels_opts);
    labels_args.opts = &labels_opts;

    CLI::App* train_cmd = app.add_subcommand("train", "train a classifier");
    OptionSet train_opts(train_cmd);
    setup_train(train_cmd, train_args, train_opts);
    train_args.opts = &train_opts;

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a model on a corpus");
    OptionSet eval_opts(eval_cmd);
    setup_eval(eval_cmd, eval_args, eval_opts);
    eval_args.opts = &eval_opts;

    CLI::App* predict = app.add_subcommand("predict", "score stays with a model");
    OptionSet predict_opts(predict);
    setup_predict(predict, predict_args, predict_opts);
    predict_args.opts = &predict_opts;

    CLI::App* serve = app.add_subcommand("serve", "batch prediction HTTP service");
    OptionSet serve_opts(serve);
    setup_serve(serve, serve_args, serve_opts);
    serve_args.opts = &serve_opts;

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) {
            return cmd_gen(gen_args);
        }
        if (labels->parsed()) {
            return cmd_labels(labels_args);
        }
        if (train_cmd->parsed()) {
            return cmd_train(train_args);
        }
        if (eval_cmd->parsed()) {
            return cmd_eval(eval_args);
        }
        if (predict->parsed()) {
            return cmd_predict(predict_args);
        }
        if (serve->parsed()) {
            return cmd_serve(serve_args);
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const SpecInvariant& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

} // namespace icdlaat
