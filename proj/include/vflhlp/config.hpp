#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vflhlp/common.hpp"
#include "vflhlp/data.hpp"
#include "vflhlp/federated.hpp"
#include "vflhlp/nn.hpp"
#include "vflhlp/ssl.hpp"
#include "vflhlp/supervised.hpp"
#include "vflhlp/synth.hpp"

namespace vflhlp {

using json = nlohmann::json;

struct CsvField {
    std::string name;
    FieldKind kind = FieldKind::categorical;
    std::size_t party = 1;

    friend bool operator==(const CsvField&, const CsvField&) = default;
};

struct CsvSource {
    std::string train;
    std::string validation;  // optional
    std::string test;        // optional
    std::string id_column = "id";
    std::string label_column = "label";
    std::vector<CsvField> fields;

    friend bool operator==(const CsvSource&, const CsvSource&) = default;
};

enum class DatasetKind { synthetic, csv };

struct DatasetSection {
    DatasetKind kind = DatasetKind::synthetic;
    SynthConfig synthetic;
    CsvSource csv;

    std::size_t parties() const {
        if (kind == DatasetKind::synthetic) return synthetic.parties.size();
        std::size_t k = 0;
        for (const auto& f : csv.fields) k = std::max(k, f.party);
        return k;
    }

    friend bool operator==(const DatasetSection&, const DatasetSection&) = default;
};

struct PartitionSection {
    std::size_t parties = 3;
    std::size_t local_count = 5000;
    std::vector<std::size_t> aligned_counts{50, 100, 200, 400, 800};
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};

    friend bool operator==(const PartitionSection&, const PartitionSection&) = default;
};

struct EncoderLayout {
    std::vector<std::size_t> hidden;
    std::size_t rep_dim = 16;

    friend bool operator==(const EncoderLayout&, const EncoderLayout&) = default;
};

struct ModelSection {
    std::size_t embed_dim = 8;
    std::vector<EncoderLayout> encoders;  // one per party
    std::optional<std::size_t> head_input;  // checked against the sum of rep dims when given

    std::size_t head_in() const {
        std::size_t total = 0;
        for (const auto& e : encoders) total += e.rep_dim;
        return total;
    }

    friend bool operator==(const ModelSection&, const ModelSection&) = default;
};

struct PretrainSection {
    SslConfig ssl;
    SupervisedConfig supervised;

    friend bool operator==(const PretrainSection&, const PretrainSection&) = default;
};

struct DownstreamSection {
    std::vector<TrainMode> modes{TrainMode::vanilla_vfl, TrainMode::vflhlp};
    DownstreamConfig train;          // seed is set per cell
    std::vector<double> beta_sweep;  // empty = train.beta only

    std::vector<double> betas() const { return beta_sweep.empty() ? std::vector<double>{train.beta} : beta_sweep; }

    friend bool operator==(const DownstreamSection&, const DownstreamSection&) = default;
};

struct RunConfig {
    std::string preset;  // informational; values below are already resolved
    DatasetSection dataset;
    PartitionSection partition;
    ModelSection model;
    PretrainSection pretrain;
    DownstreamSection downstream;
    std::string output_dir = "vflhlp-out";
    std::size_t threads = 1;

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// ---------------------------------------------------------------------------
// JSON mapping

namespace detail {

/// Reads a JSON object while tracking which keys were consumed.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    const json& at(const std::string& key) {
        seen_.insert(key);
        if (!j_.contains(key)) throw ConfigError(path_ + "." + key + ": missing");
        return j_.at(key);
    }

    template <class T>
    void get(const std::string& key, T& out) {
        if (!has(key)) return;
        out = convert<T>(at(key), path_ + "." + key);
    }

    std::string child(const std::string& key) const { return path_ + "." + key; }

    void finish() const {
        for (const auto& [key, _] : j_.items()) {
            if (!seen_.count(key)) throw ConfigError(path_ + ": unknown key '" + key + "'");
        }
    }

    template <class T>
    static T convert(const json& v, const std::string& path) {
        try {
            if constexpr (std::is_same_v<T, double>) {
                if (!v.is_number()) throw ConfigError(path + ": expected a number");
            } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
                if (!v.is_number_unsigned()) throw ConfigError(path + ": expected a non-negative integer");
            } else if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw ConfigError(path + ": expected a boolean");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw ConfigError(path + ": expected a string");
            }
            return v.get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(path + ": " + e.what());
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

template <class T>
std::vector<T> read_array(const json& v, const std::string& path) {
    if (!v.is_array()) throw ConfigError(path + ": expected an array");
    std::vector<T> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(ObjectReader::convert<T>(v[i], path + "[" + std::to_string(i) + "]"));
    }
    return out;
}

inline std::string optimizer_name(nn::OptimizerKind k) { return k == nn::OptimizerKind::adam ? "adam" : "sgd"; }

inline nn::OptimizerKind parse_optimizer(const std::string& s, const std::string& path) {
    if (s == "adam") return nn::OptimizerKind::adam;
    if (s == "sgd") return nn::OptimizerKind::sgd;
    throw ConfigError(path + ": unknown optimizer '" + s + "' (expected adam or sgd)");
}

inline FieldKind parse_field_kind(const std::string& s, const std::string& path) {
    if (s == "categorical") return FieldKind::categorical;
    if (s == "numerical") return FieldKind::numerical;
    throw ConfigError(path + ": unknown field kind '" + s + "'");
}

inline json optimizer_json(const nn::OptimizerConfig& o) {
    return {{"kind", optimizer_name(o.kind)}, {"lr", o.lr}};
}

inline void read_optimizer(ObjectReader& r, const std::string& key, nn::OptimizerConfig& o) {
    if (!r.has(key)) return;
    ObjectReader sub(r.at(key), r.child(key));
    if (sub.has("kind")) o.kind = parse_optimizer(ObjectReader::convert<std::string>(sub.at("kind"), sub.child("kind")), sub.child("kind"));
    sub.get("lr", o.lr);
    sub.finish();
}

}  // namespace detail

inline json to_json(const RunConfig& c) {
    json j;
    if (!c.preset.empty()) j["preset"] = c.preset;

    json ds;
    {
        const auto& s = c.dataset.synthetic;
        json parties = json::array();
        for (const auto& p : s.parties) parties.push_back({{"categorical", p.categorical}, {"numerical", p.numerical}});
        ds["synthetic"] = {{"pool", s.pool},
                           {"validation", s.validation},
                           {"test", s.test},
                           {"parties", parties},
                           {"cardinality", s.cardinality},
                           {"latent_dim", s.latent_dim},
                           {"party_weights", s.party_weights},
                           {"feature_noise", s.feature_noise},
                           {"noise", s.noise},
                           {"seed", s.seed}};
    }
    {
        const auto& s = c.dataset.csv;
        json fields = json::array();
        for (const auto& f : s.fields) fields.push_back({{"name", f.name}, {"kind", to_string(f.kind)}, {"party", f.party}});
        ds["csv"] = {{"train", s.train},
                     {"validation", s.validation},
                     {"test", s.test},
                     {"id_column", s.id_column},
                     {"label_column", s.label_column},
                     {"fields", fields}};
    }
    ds["kind"] = c.dataset.kind == DatasetKind::synthetic ? "synthetic" : "csv";
    j["dataset"] = ds;

    j["partition"] = {{"parties", c.partition.parties},
                      {"local_count", c.partition.local_count},
                      {"aligned_counts", c.partition.aligned_counts},
                      {"seeds", c.partition.seeds}};

    json encoders = json::array();
    for (const auto& e : c.model.encoders) encoders.push_back({{"hidden", e.hidden}, {"rep_dim", e.rep_dim}});
    j["model"] = {{"embed_dim", c.model.embed_dim}, {"encoders", encoders}};
    if (c.model.head_input) j["model"]["head_input"] = *c.model.head_input;

    const auto& ssl = c.pretrain.ssl;
    const auto& sup = c.pretrain.supervised;
    j["pretrain"] = {{"ssl",
                      {{"corruption_rate", ssl.corruption_rate},
                       {"temperature", ssl.temperature},
                       {"epochs", ssl.epochs},
                       {"batch", ssl.batch},
                       {"optimizer", detail::optimizer_json(ssl.optimizer)},
                       {"projection_hidden", ssl.projection_hidden}}},
                     {"supervised",
                      {{"epochs", sup.epochs},
                       {"batch", sup.batch},
                       {"optimizer", detail::optimizer_json(sup.optimizer)},
                       {"val_fraction", sup.val_fraction}}}};

    const auto& d = c.downstream;
    json modes = json::array();
    for (auto m : d.modes) modes.push_back(to_string(m));
    j["downstream"] = {{"modes", modes},
                       {"beta", d.train.beta},
                       {"beta_sweep", d.beta_sweep},
                       {"optimizer", detail::optimizer_name(d.train.optimizer)},
                       {"server_lr", d.train.server_lr},
                       {"party_lr", d.train.party_lr},
                       {"epochs", d.train.epochs},
                       {"batch", d.train.batch},
                       {"warm_start_active", d.train.warm_start_active}};
    j["output_dir"] = c.output_dir;
    j["threads"] = c.threads;
    return j;
}

inline void validate(const RunConfig& c) {
    const std::size_t K = c.partition.parties;
    if (K < 1 || K > 255) throw ConfigError("partition.parties must lie in [1, 255]");
    if (c.dataset.kind == DatasetKind::csv) {
        for (const auto& f : c.dataset.csv.fields) {
            if (f.party < 1 || f.party > K) {
                throw ConfigError("dataset.csv field '" + f.name + "' is assigned to party " + std::to_string(f.party) +
                                  " but partition.parties is " + std::to_string(K));
            }
        }
    }
    if (c.dataset.parties() != K) {
        throw ConfigError("dataset defines " + std::to_string(c.dataset.parties()) + " parties but partition.parties is " +
                          std::to_string(K));
    }
    if (c.dataset.kind == DatasetKind::synthetic) {
        validate(c.dataset.synthetic);
    } else {
        if (c.dataset.csv.train.empty()) throw ConfigError("dataset.csv.train: a training file is required");
        FeatureSchema schema;
        for (const auto& f : c.dataset.csv.fields) schema.fields.push_back({f.name, f.kind, 0, f.party});
        schema.validate(K);
    }
    if (c.partition.aligned_counts.empty()) throw ConfigError("partition.aligned_counts must not be empty");
    if (c.partition.seeds.empty()) throw ConfigError("partition.seeds must not be empty");
    for (auto a : c.partition.aligned_counts) {
        if (a == 0) throw ConfigError("partition.aligned_counts entries must be positive");
        if (c.partition.local_count != 0 && a > c.partition.local_count) {
            throw ConfigError("aligned count " + std::to_string(a) + " exceeds partition.local_count");
        }
    }
    if (c.model.encoders.size() != K) {
        throw ConfigError("model.encoders lists " + std::to_string(c.model.encoders.size()) + " encoders for " +
                          std::to_string(K) + " parties");
    }
    for (const auto& e : c.model.encoders) {
        if (e.rep_dim == 0) throw ConfigError("model.encoders: rep_dim must be positive");
        for (auto h : e.hidden) {
            if (h == 0) throw ConfigError("model.encoders: hidden widths must be positive");
        }
    }
    if (c.model.embed_dim == 0) throw ConfigError("model.embed_dim must be positive");
    if (c.model.head_input && *c.model.head_input != c.model.head_in()) {
        throw ConfigError("model.head_input " + std::to_string(*c.model.head_input) + " != sum of rep dims " +
                          std::to_string(c.model.head_in()));
    }
    const auto& ssl = c.pretrain.ssl;
    if (!(ssl.corruption_rate >= 0.0 && ssl.corruption_rate <= 1.0)) {
        throw ConfigError("pretrain.ssl.corruption_rate must lie in [0, 1]");
    }
    if (!(ssl.temperature > 0.0)) throw ConfigError("pretrain.ssl.temperature must be positive");
    if (ssl.batch == 0 || c.pretrain.supervised.batch == 0 || c.downstream.train.batch == 0) {
        throw ConfigError("batch sizes must be positive");
    }
    const auto& sup = c.pretrain.supervised;
    if (!(sup.val_fraction >= 0.0 && sup.val_fraction < 1.0)) {
        throw ConfigError("pretrain.supervised.val_fraction must lie in [0, 1)");
    }
    if (c.downstream.modes.empty()) throw ConfigError("downstream.modes must not be empty");
    for (double b : c.downstream.betas()) {
        if (!(b >= 0.0)) throw ConfigError("downstream: beta must be non-negative");
    }
    for (double lr : {ssl.optimizer.lr, sup.optimizer.lr, c.downstream.train.server_lr, c.downstream.train.party_lr}) {
        if (!(lr > 0.0)) throw ConfigError("learning rates must be positive");
    }
    if (c.threads == 0) throw ConfigError("threads must be positive");
}

/// Parses a fully resolved config document (no preset lookup); every key is
/// optional and unknown keys are rejected.
inline RunConfig from_json_resolved(const json& j, RunConfig c) {
    using detail::ObjectReader;
    ObjectReader root(j, "config");
    root.get("preset", c.preset);

    if (root.has("dataset")) {
        ObjectReader ds(root.at("dataset"), "dataset");
        if (ds.has("kind")) {
            const auto kind = ObjectReader::convert<std::string>(ds.at("kind"), "dataset.kind");
            if (kind == "synthetic") {
                c.dataset.kind = DatasetKind::synthetic;
            } else if (kind == "csv") {
                c.dataset.kind = DatasetKind::csv;
            } else {
                throw ConfigError("dataset.kind: expected synthetic or csv, got '" + kind + "'");
            }
        }
        if (ds.has("synthetic")) {
            ObjectReader s(ds.at("synthetic"), "dataset.synthetic");
            auto& sc = c.dataset.synthetic;
            s.get("pool", sc.pool);
            s.get("validation", sc.validation);
            s.get("test", sc.test);
            if (s.has("parties")) {
                const json& arr = s.at("parties");
                if (!arr.is_array()) throw ConfigError("dataset.synthetic.parties: expected an array");
                sc.parties.clear();
                for (std::size_t i = 0; i < arr.size(); ++i) {
                    ObjectReader p(arr[i], "dataset.synthetic.parties[" + std::to_string(i) + "]");
                    PartyFieldCounts counts;
                    p.get("categorical", counts.categorical);
                    p.get("numerical", counts.numerical);
                    p.finish();
                    sc.parties.push_back(counts);
                }
            }
            s.get("cardinality", sc.cardinality);
            s.get("latent_dim", sc.latent_dim);
            if (s.has("party_weights")) {
                sc.party_weights = detail::read_array<double>(s.at("party_weights"), s.child("party_weights"));
            }
            s.get("feature_noise", sc.feature_noise);
            s.get("noise", sc.noise);
            s.get("seed", sc.seed);
            s.finish();
        }
        if (ds.has("csv")) {
            ObjectReader s(ds.at("csv"), "dataset.csv");
            auto& cs = c.dataset.csv;
            s.get("train", cs.train);
            s.get("validation", cs.validation);
            s.get("test", cs.test);
            s.get("id_column", cs.id_column);
            s.get("label_column", cs.label_column);
            if (s.has("fields")) {
                const json& arr = s.at("fields");
                if (!arr.is_array()) throw ConfigError("dataset.csv.fields: expected an array");
                cs.fields.clear();
                for (std::size_t i = 0; i < arr.size(); ++i) {
                    const std::string path = "dataset.csv.fields[" + std::to_string(i) + "]";
                    ObjectReader f(arr[i], path);
                    CsvField field;
                    field.name = ObjectReader::convert<std::string>(f.at("name"), path + ".name");
                    if (f.has("kind")) {
                        field.kind = detail::parse_field_kind(
                            ObjectReader::convert<std::string>(f.at("kind"), path + ".kind"), path + ".kind");
                    }
                    field.party = ObjectReader::convert<std::size_t>(f.at("party"), path + ".party");
                    f.finish();
                    cs.fields.push_back(field);
                }
            }
            s.finish();
        }
        ds.finish();
    }

    if (root.has("partition")) {
        ObjectReader p(root.at("partition"), "partition");
        p.get("parties", c.partition.parties);
        p.get("local_count", c.partition.local_count);
        if (p.has("aligned_counts")) {
            c.partition.aligned_counts = detail::read_array<std::size_t>(p.at("aligned_counts"), "partition.aligned_counts");
        }
        if (p.has("seeds")) c.partition.seeds = detail::read_array<std::uint64_t>(p.at("seeds"), "partition.seeds");
        p.finish();
    }

    if (root.has("model")) {
        ObjectReader m(root.at("model"), "model");
        m.get("embed_dim", c.model.embed_dim);
        if (m.has("encoders")) {
            const json& arr = m.at("encoders");
            if (!arr.is_array()) throw ConfigError("model.encoders: expected an array");
            c.model.encoders.clear();
            for (std::size_t i = 0; i < arr.size(); ++i) {
                const std::string path = "model.encoders[" + std::to_string(i) + "]";
                ObjectReader e(arr[i], path);
                EncoderLayout layout;
                if (e.has("hidden")) layout.hidden = detail::read_array<std::size_t>(e.at("hidden"), path + ".hidden");
                e.get("rep_dim", layout.rep_dim);
                e.finish();
                c.model.encoders.push_back(layout);
            }
        }
        if (m.has("head_input")) c.model.head_input = ObjectReader::convert<std::size_t>(m.at("head_input"), "model.head_input");
        m.finish();
    }

    if (root.has("pretrain")) {
        ObjectReader p(root.at("pretrain"), "pretrain");
        if (p.has("ssl")) {
            ObjectReader s(p.at("ssl"), "pretrain.ssl");
            auto& ssl = c.pretrain.ssl;
            s.get("corruption_rate", ssl.corruption_rate);
            s.get("temperature", ssl.temperature);
            s.get("epochs", ssl.epochs);
            s.get("batch", ssl.batch);
            detail::read_optimizer(s, "optimizer", ssl.optimizer);
            if (s.has("projection_hidden")) {
                ssl.projection_hidden = detail::read_array<std::size_t>(s.at("projection_hidden"), s.child("projection_hidden"));
            }
            s.finish();
        }
        if (p.has("supervised")) {
            ObjectReader s(p.at("supervised"), "pretrain.supervised");
            auto& sup = c.pretrain.supervised;
            s.get("epochs", sup.epochs);
            s.get("batch", sup.batch);
            detail::read_optimizer(s, "optimizer", sup.optimizer);
            s.get("val_fraction", sup.val_fraction);
            s.finish();
        }
        p.finish();
    }

    if (root.has("downstream")) {
        ObjectReader d(root.at("downstream"), "downstream");
        auto& ds = c.downstream;
        if (d.has("modes")) {
            ds.modes.clear();
            for (const auto& name : detail::read_array<std::string>(d.at("modes"), "downstream.modes")) {
                ds.modes.push_back(parse_mode(name));
            }
        }
        d.get("beta", ds.train.beta);
        if (d.has("beta_sweep")) ds.beta_sweep = detail::read_array<double>(d.at("beta_sweep"), "downstream.beta_sweep");
        if (d.has("optimizer")) {
            ds.train.optimizer = detail::parse_optimizer(
                ObjectReader::convert<std::string>(d.at("optimizer"), "downstream.optimizer"), "downstream.optimizer");
        }
        d.get("server_lr", ds.train.server_lr);
        d.get("party_lr", ds.train.party_lr);
        d.get("epochs", ds.train.epochs);
        d.get("batch", ds.train.batch);
        d.get("warm_start_active", ds.train.warm_start_active);
        d.finish();
    }

    root.get("output_dir", c.output_dir);
    root.get("threads", c.threads);
    root.finish();
    return c;
}

// ---------------------------------------------------------------------------
// Presets

/// Desk-scale synthetic setting used by the acceptance suite: three parties
/// with eight categorical fields each, 5000 local samples per party.
inline RunConfig preset_standard() {
    RunConfig c;
    c.preset = "standard";
    auto& s = c.dataset.synthetic;
    s.pool = 15000;
    s.validation = 1000;
    s.test = 4000;
    s.parties = {{8, 0}, {8, 0}, {8, 0}};
    s.cardinality = 8;
    s.latent_dim = 3;
    s.party_weights = {1.5, 1.0, 1.0};
    s.feature_noise = 0.5;
    s.noise = 1.0;
    s.seed = 7;
    c.partition = {3, 5000, {50, 100, 200, 400, 800}, {1, 2, 3, 4, 5}};
    c.model.embed_dim = 4;
    c.model.encoders.assign(3, EncoderLayout{{32}, 8});

    auto& ssl = c.pretrain.ssl;
    ssl.corruption_rate = 0.3;
    ssl.temperature = 0.2;
    ssl.epochs = 30;
    ssl.batch = 128;
    ssl.optimizer = {nn::OptimizerKind::adam, 3e-3};
    auto& sup = c.pretrain.supervised;
    sup.epochs = 10;
    sup.batch = 128;
    sup.optimizer = {nn::OptimizerKind::adam, 3e-3};
    sup.val_fraction = 0.1;

    auto& d = c.downstream;
    d.modes = {TrainMode::vanilla_vfl, TrainMode::vflhlp, TrainMode::vflhlp_a, TrainMode::vflhlp_p, TrainMode::local_a};
    d.train.beta = 1.0;
    d.train.optimizer = nn::OptimizerKind::sgd;
    d.train.server_lr = 0.3;
    d.train.party_lr = 0.005;
    d.train.epochs = 40;
    d.train.batch = 16;
    return c;
}

/// Three parties holding 7 | 7 | 8 categorical fields, embedding width 8,
/// encoders 64 -> 64 -> 16 and a 48 -> 1 head.
inline RunConfig preset_avazu_like() {
    RunConfig c = preset_standard();
    c.preset = "avazu-like";
    auto& s = c.dataset.synthetic;
    s.parties = {{7, 0}, {7, 0}, {8, 0}};
    s.cardinality = 20;
    c.partition.aligned_counts = {25, 50, 100, 200, 400, 800};
    c.model.embed_dim = 8;
    c.model.encoders.assign(3, EncoderLayout{{64, 64}, 16});
    c.model.head_input = 48;
    return c;
}

/// Two parties: the active one holds 26 categorical fields (embedding width
/// 16), the passive one 13 numerical fields; encoders 256 -> 128 -> 64 -> 16
/// and a 32 -> 1 head.
inline RunConfig preset_criteo_like() {
    RunConfig c = preset_standard();
    c.preset = "criteo-like";
    auto& s = c.dataset.synthetic;
    s.pool = 12000;
    s.parties = {{26, 0}, {0, 13}};
    s.party_weights = {1.5, 1.0};
    c.partition = {2, 4000, {20, 50, 100, 200}, {1, 2, 3, 4, 5}};
    c.model.embed_dim = 16;
    c.model.encoders.assign(2, EncoderLayout{{256, 128, 64}, 16});
    c.model.head_input = 32;
    return c;
}

inline std::vector<std::string> preset_names() { return {"standard", "avazu-like", "criteo-like"}; }

inline RunConfig preset(const std::string& name) {
    if (name == "standard") return preset_standard();
    if (name == "avazu-like") return preset_avazu_like();
    if (name == "criteo-like") return preset_criteo_like();
    throw ConfigError("unknown preset '" + name + "' (expected standard, avazu-like or criteo-like)");
}

/// Resolves an optional "preset" key, overlays the remaining keys on it and
/// validates the result.
inline RunConfig parse_config(const json& j) {
    if (!j.is_object()) throw ConfigError("config: expected a JSON object");
    RunConfig base;
    if (j.contains("preset")) {
        if (!j["preset"].is_string()) throw ConfigError("config.preset: expected a string");
        base = preset(j["preset"].get<std::string>());
    }
    RunConfig c = from_json_resolved(j, base);
    validate(c);
    return c;
}

inline RunConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return parse_config(j);
}

inline RunConfig parse_config(const char* text) { return parse_config(std::string(text)); }

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_config(ss.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

inline std::string dump_config(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

/// FNV-1a of the canonical document without output_dir and threads, which do
/// not affect results.
inline std::uint64_t config_hash(const RunConfig& c) {
    json j = to_json(c);
    j.erase("output_dir");
    j.erase("threads");
    j.erase("preset");
    return fnv1a(j.dump());
}

/// Hash of everything that determines the prepared dataset.
inline std::uint64_t dataset_hash(const RunConfig& c) {
    const json ds = to_json(c)["dataset"];
    const std::string kind = ds["kind"].get<std::string>();
    return fnv1a(json{{"kind", kind}, {kind, ds[kind]}}.dump());
}

/// Encoder specs for every party from the schema and the model section.
inline std::vector<nn::EncoderSpec> encoder_specs(const FeatureSchema& schema, const ModelSection& model) {
    std::vector<nn::EncoderSpec> specs;
    for (std::size_t k = 1; k <= model.encoders.size(); ++k) {
        nn::EncoderSpec s;
        s.cardinalities = schema.cardinalities(k);
        s.embed_dim = model.embed_dim;
        s.num_numerical = schema.num_numerical(k);
        s.hidden = model.encoders[k - 1].hidden;
        s.out_dim = model.encoders[k - 1].rep_dim;
        specs.push_back(std::move(s));
    }
    return specs;
}

}  // namespace vflhlp
