#include "icdlaat/trainer.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace icdlaat {

std::string to_string(TrainStrategy strategy) {
    switch (strategy) {
    case TrainStrategy::Truncate:
        return "truncate";
    case TrainStrategy::HierMean:
        return "hier-mean";
    case TrainStrategy::HierMax:
        return "hier-max";
    case TrainStrategy::Laat:
        return "laat";
    }
    throw Error("unknown training strategy");
}

TrainStrategy train_strategy_from_string(std::string_view name) {
    if (name == "truncate") {
        return TrainStrategy::Truncate;
    }
    if (name == "hier-mean") {
        return TrainStrategy::HierMean;
    }
    if (name == "hier-max") {
        return TrainStrategy::HierMax;
    }
    if (name == "laat") {
        return TrainStrategy::Laat;
    }
    throw Error("unknown training strategy: " + std::string(name));
}

DocStrategy doc_strategy_for(TrainStrategy strategy) {
    switch (strategy) {
    case TrainStrategy::Truncate:
        return DocStrategy::Truncate;
    case TrainStrategy::HierMean:
    case TrainStrategy::HierMax:
        return DocStrategy::HierSegments;
    case TrainStrategy::Laat:
        return DocStrategy::StackedTokens;
    }
    throw Error("unknown training strategy");
}

std::string to_string(Precision precision) {
    return precision == Precision::F32 ? "f32" : "f64";
}

Precision precision_from_string(std::string_view name) {
    if (name == "f32") {
        return Precision::F32;
    }
    if (name == "f64") {
        return Precision::F64;
    }
    throw Error("unknown precision: " + std::string(name));
}

void TrainConfig::validate() const {
    if (learning_rate <= 0.0) {
        throw Error("learning rate must be positive");
    }
    if (batch_size < 1 || max_epochs < 1 || patience < 1) {
        throw Error("batch size, max epochs and patience must be at least 1");
    }
    if (patience > max_epochs) {
        throw Error("patience " + std::to_string(patience) + " exceeds max epochs " +
                    std::to_string(max_epochs));
    }
    if (threshold < 0.0 || threshold > 1.0) {
        throw Error("decision threshold must lie in [0, 1]");
    }
    encoder.validate();
}

std::string TrainConfig::canonical_text() const {
    char num[64];
    std::ostringstream out;
    auto put_real = [&](const char* key, double v) {
        std::snprintf(num, sizeof num, "%.17g", v);
        out << key << "=" << num << "\n";
    };
    out << "strategy=" << to_string(strategy) << "\n";
    put_real("learning_rate", learning_rate);
    out << "batch_size=" << batch_size << "\n";
    out << "max_epochs=" << max_epochs << "\n";
    out << "patience=" << patience << "\n";
    out << "seed=" << seed << "\n";
    out << "precision=" << to_string(precision) << "\n";
    put_real("threshold", threshold);
    out << "encoder.d_model=" << encoder.d_model << "\n";
    out << "encoder.n_heads=" << encoder.n_heads << "\n";
    out << "encoder.n_layers=" << encoder.n_layers << "\n";
    out << "encoder.d_ff=" << encoder.d_ff << "\n";
    out << "encoder.max_segment_len=" << encoder.max_segment_len << "\n";
    out << "d_attn=" << d_attn << "\n";
    out << "laat_bias=" << (laat_bias ? "true" : "false") << "\n";
    return out.str();
}

// --- model file ------------------------------------------------------------
//
//   icdlaat-model v1\n
//   <manifest byte length, decimal>\n
//   <manifest JSON>
//   <tensor data, raw little-endian float32 in directory order>
//   <8-byte little-endian FNV-1a 64 checksum of all preceding bytes>

namespace {

constexpr const char* kModelMagic = "icdlaat-model v";

nlohmann::json config_to_json(const TrainConfig& c) {
    return {
        {"strategy", to_string(c.strategy)},
        {"learning_rate", c.learning_rate},
        {"batch_size", c.batch_size},
        {"max_epochs", c.max_epochs},
        {"patience", c.patience},
        {"seed", c.seed},
        {"precision", to_string(c.precision)},
        {"threshold", c.threshold},
        {"d_attn", c.d_attn},
        {"laat_bias", c.laat_bias},
        {"encoder",
         {{"d_model", c.encoder.d_model},
          {"n_heads", c.encoder.n_heads},
          {"n_layers", c.encoder.n_layers},
          {"d_ff", c.encoder.d_ff},
          {"max_segment_len", c.encoder.max_segment_len}}},
    };
}

TrainConfig config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.strategy = train_strategy_from_string(j.at("strategy").get<std::string>());
    c.learning_rate = j.at("learning_rate").get<double>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.max_epochs = j.at("max_epochs").get<std::size_t>();
    c.patience = j.at("patience").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.precision = precision_from_string(j.at("precision").get<std::string>());
    c.threshold = j.at("threshold").get<double>();
    c.d_attn = j.at("d_attn").get<std::size_t>();
    c.laat_bias = j.at("laat_bias").get<bool>();
    const auto& e = j.at("encoder");
    c.encoder.d_model = e.at("d_model").get<std::size_t>();
    c.encoder.n_heads = e.at("n_heads").get<std::size_t>();
    c.encoder.n_layers = e.at("n_layers").get<std::size_t>();
    c.encoder.d_ff = e.at("d_ff").get<std::size_t>();
    c.encoder.max_segment_len = e.at("max_segment_len").get<std::size_t>();
    return c;
}

std::string read_binary_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Io("cannot open '" + path + "' for reading");
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) {
        throw Io("failed reading '" + path + "'");
    }
    return buf.str();
}

} // namespace

void save_model(const Model& model, const std::string& path) {
    auto& mutable_model = const_cast<Model&>(model);
    auto named = mutable_model.named_params();

    nlohmann::json manifest;
    manifest["fingerprint"] = model.fingerprint;
    manifest["best_epoch"] = model.best_epoch;
    manifest["config"] = config_to_json(model.config);
    manifest["vocab_manifest"] = model.vocab.to_manifest();
    manifest["labelspace_manifest"] = model.space.to_manifest();
    nlohmann::json tensors = nlohmann::json::array();
    std::size_t offset = 0;
    for (auto& [name, t] : named) {
        tensors.push_back({{"name", name}, {"shape", t->shape()}, {"offset", offset}});
        offset += t->numel() * sizeof(float);
    }
    manifest["tensors"] = tensors;
    const std::string manifest_text = manifest.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Io("cannot open '" + path + "' for writing");
    }
    Fnv1a64 hash;
    auto emit = [&](const void* data, std::size_t n) {
        hash.update(data, n);
        out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    };
    const std::string header =
        std::string(kModelMagic) + "1\n" + std::to_string(manifest_text.size()) + "\n";
    emit(header.data(), header.size());
    emit(manifest_text.data(), manifest_text.size());
    for (auto& [name, t] : named) {
        emit(t->values().data(), t->numel() * sizeof(float));
    }
    const std::uint64_t digest = hash.digest();
    unsigned char tail[8];
    for (int i = 0; i < 8; ++i) {
        tail[i] = static_cast<unsigned char>((digest >> (8 * i)) & 0xff);
    }
    out.write(reinterpret_cast<const char*>(tail), 8);
    out.flush();
    if (!out) {
        throw Io("failed writing model file '" + path + "'");
    }
}

Model load_model(const std::string& path) {
    const std::string bytes = read_binary_file(path);

    // Header and version come first: a wrong-version file is reported as such
    // even though its checksum no longer matches.
    const std::size_t magic_len = std::strlen(kModelMagic);
    const std::size_t header_end = bytes.find('\n');
    if (header_end == std::string::npos || bytes.compare(0, magic_len, kModelMagic) != 0) {
        throw Io("'" + path + "' is not a model file");
    }
    const std::string version = bytes.substr(magic_len, header_end - magic_len);
    if (version != "1") {
        throw VersionMismatch("model file version " + version +
                              " is not supported (expected 1)");
    }

    if (bytes.size() < header_end + 1 + 8) {
        throw ChecksumMismatch("model file '" + path + "' is truncated");
    }
    Fnv1a64 hash;
    hash.update(bytes.data(), bytes.size() - 8);
    std::uint64_t stored = 0;
    for (int i = 7; i >= 0; --i) {
        stored = (stored << 8) |
                 static_cast<unsigned char>(bytes[bytes.size() - 8 + static_cast<std::size_t>(i)]);
    }
    if (stored != hash.digest()) {
        throw ChecksumMismatch("model file '" + path + "' failed checksum verification");
    }

    const std::size_t len_end = bytes.find('\n', header_end + 1);
    if (len_end == std::string::npos) {
        throw Io("model file '" + path + "' has no manifest length");
    }
    std::size_t manifest_len = 0;
    try {
        manifest_len = std::stoul(bytes.substr(header_end + 1, len_end - header_end - 1));
    } catch (const std::exception&) {
        throw Io("model file '" + path + "' has a malformed manifest length");
    }
    const std::size_t manifest_start = len_end + 1;
    const std::size_t data_start = manifest_start + manifest_len;
    const std::size_t data_end = bytes.size() - 8;
    if (data_start > data_end) {
        throw Io("model manifest overruns the file");
    }

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.substr(manifest_start, manifest_len));
    } catch (const std::exception& e) {
        throw Io("malformed model manifest: " + std::string(e.what()));
    }

    try {
        const TrainConfig config = config_from_json(manifest.at("config"));
        Vocab vocab = Vocab::parse_manifest(manifest.at("vocab_manifest").get<std::string>());
        LabelSpace space =
            parse_labelspace(manifest.at("labelspace_manifest").get<std::string>());
        Rng rng(0);
        Model model = Model::init(config, std::move(vocab), std::move(space), rng);
        model.fingerprint = manifest.at("fingerprint").get<std::string>();
        model.best_epoch = manifest.at("best_epoch").get<std::size_t>();

        std::map<std::string, std::pair<std::vector<std::size_t>, std::size_t>> directory;
        for (const auto& entry : manifest.at("tensors")) {
            directory[entry.at("name").get<std::string>()] = {
                entry.at("shape").get<std::vector<std::size_t>>(),
                entry.at("offset").get<std::size_t>()};
        }
        for (auto& [name, t] : model.named_params()) {
            auto it = directory.find(name);
            if (it == directory.end()) {
                throw Io("model file is missing tensor '" + name + "'");
            }
            if (it->second.first != t->shape()) {
                throw Io("tensor '" + name + "' has shape " +
                         ad::shape_str(it->second.first) + ", expected " +
                         ad::shape_str(t->shape()));
            }
            const std::size_t want = t->numel() * sizeof(float);
            const std::size_t at = data_start + it->second.second;
            if (at + want > data_end) {
                throw Io("tensor '" + name + "' overruns the model file");
            }
            std::memcpy(t->values_mut().data(), bytes.data() + at, want);
        }
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw Io("malformed model manifest: " + std::string(e.what()));
    }
}

std::string model_file_fingerprint(const std::string& path) {
    const std::string bytes = read_binary_file(path);
    if (bytes.size() < 8) {
        throw Io("'" + path + "' is too short to be a model file");
    }
    std::uint64_t stored = 0;
    for (int i = 7; i >= 0; --i) {
        stored = (stored << 8) |
                 static_cast<unsigned char>(bytes[bytes.size() - 8 + static_cast<std::size_t>(i)]);
    }
    return to_hex16(stored);
}

} // namespace icdlaat
