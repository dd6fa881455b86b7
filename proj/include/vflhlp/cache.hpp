#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vflhlp/checkpoint.hpp"
#include "vflhlp/config.hpp"
#include "vflhlp/experiment.hpp"

namespace vflhlp {

namespace fs = std::filesystem;

inline constexpr const char* kCacheFormat = "vflhlp-cache";
inline constexpr int kCacheVersion = 1;

namespace detail {

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
    if (!out) throw DataError("failed writing " + path.string());
}

inline std::string exact(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string party_file(const std::string& split, std::size_t party) {
    return split + ".party-" + std::to_string(party) + ".csv";
}

/// One party's encoded columns of a split; party 1 also carries the labels.
inline std::string party_csv(const Table& t, std::size_t party) {
    const auto idx = t.schema.party_fields(party);
    std::string out = "id";
    if (party == 1) out += ",label";
    for (auto i : idx) out += "," + t.schema.fields[i].name;
    out += "\n";
    for (std::size_t r = 0; r < t.rows(); ++r) {
        out += std::to_string(t.ids[r]);
        if (party == 1) out += "," + std::to_string(t.labels[r]);
        for (auto i : idx) {
            const double v = t.columns[i][r];
            out += "," + (t.schema.fields[i].kind == FieldKind::categorical
                              ? std::to_string(static_cast<std::uint32_t>(v))
                              : exact(v));
        }
        out += "\n";
    }
    return out;
}

inline void read_party_csv(const fs::path& path, Table& t, std::size_t party, bool first) {
    std::ifstream in(path);
    if (!in) throw DataError("dataset cache is missing " + path.string());
    const auto idx = t.schema.party_fields(party);
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line)) throw DataError(path.string() + ": empty cache file");
    const std::size_t width = 1 + (party == 1 ? 1 : 0) + idx.size();
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto cells = split_csv_line(line, line_no);
        if (cells.size() != width) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(width) +
                            " cells");
        }
        std::uint64_t id = 0;
        if (!parse_u64(cells[0], id)) throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad id");
        if (first) {
            t.ids.push_back(id);
        } else if (row >= t.ids.size() || t.ids[row] != id) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": rows out of step with party 1");
        }
        std::size_t c = 1;
        if (party == 1) t.labels.push_back(cells[c++] == "1" ? 1 : 0);
        for (auto i : idx) {
            double v = 0.0;
            if (!parse_double(cells[c++], v)) {
                throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad value");
            }
            t.columns[i].push_back(v);
        }
        ++row;
    }
    if (!first && row != t.ids.size()) throw DataError(path.string() + ": row count differs from party 1");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dataset cache: per-party CSV files per split plus manifest.json

inline fs::path manifest_path(const fs::path& dir) { return dir / "manifest.json"; }

/// True when `dir` already holds a cache built from the same dataset hash.
inline bool cache_is_current(const fs::path& dir, std::uint64_t hash) {
    if (!fs::exists(manifest_path(dir))) return false;
    try {
        const auto j = nlohmann::json::parse(detail::read_file(manifest_path(dir)));
        return j.value("format", "") == kCacheFormat && j.value("dataset_hash", "") == hex64(hash);
    } catch (const nlohmann::json::exception&) {
        return false;
    }
}

inline nlohmann::json manifest_json(const PreparedData& data, std::size_t parties) {
    nlohmann::json j;
    j["format"] = kCacheFormat;
    j["version"] = kCacheVersion;
    j["dataset_hash"] = hex64(data.hash);
    j["parties"] = parties;
    std::vector<std::size_t> counts;
    std::string dims;
    for (std::size_t k = 1; k <= parties; ++k) {
        counts.push_back(data.schema.party_fields(k).size());
        dims += (k > 1 ? "|" : "") + std::to_string(counts.back());
    }
    j["party_fields"] = counts;
    j["party_dims"] = dims;
    auto& fields = j["schema"] = nlohmann::json::array();
    for (std::size_t f = 0; f < data.schema.fields.size(); ++f) {
        const auto& s = data.schema.fields[f];
        const auto& e = data.train.encoding.columns.at(f);
        fields.push_back({{"name", s.name},
                          {"kind", to_string(s.kind)},
                          {"cardinality", s.cardinality},
                          {"party", s.party},
                          {"vocabulary", e.vocabulary},
                          {"min", e.min},
                          {"max", e.max}});
    }
    j["splits"] = {{"train", data.train.rows()},
                   {"validation", data.validation ? data.validation->rows() : 0},
                   {"test", data.test ? data.test->rows() : 0}};
    j["oracle_test_auc"] = data.oracle_test_auc ? nlohmann::json(*data.oracle_test_auc) : nlohmann::json();
    return j;
}

inline void write_cache(const fs::path& dir, const PreparedData& data, std::size_t parties) {
    fs::create_directories(dir);
    fs::remove(manifest_path(dir));
    auto write_split = [&](const std::string& name, const Table& t) {
        for (std::size_t k = 1; k <= parties; ++k) detail::write_file(dir / detail::party_file(name, k), detail::party_csv(t, k));
    };
    write_split("train", data.train);
    if (data.validation) write_split("validation", *data.validation);
    if (data.test) write_split("test", *data.test);
    // manifest last: its presence marks a complete cache
    detail::write_file(manifest_path(dir), manifest_json(data, parties).dump(2) + "\n");
}

inline PreparedData read_cache(const fs::path& dir) {
    if (!fs::exists(manifest_path(dir))) {
        throw DataError("no dataset cache at " + dir.string() + " (run 'prepare' first)");
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(detail::read_file(manifest_path(dir)));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt cache manifest: " + std::string(e.what()));
    }
    if (j.value("format", "") != kCacheFormat || j.value("version", 0) != kCacheVersion) {
        throw DataError("unsupported cache manifest in " + dir.string());
    }
    PreparedData data;
    TableEncoding enc;
    try {
        data.hash = std::stoull(j.at("dataset_hash").get<std::string>(), nullptr, 16);
        for (const auto& f : j.at("schema")) {
            FieldSpec s;
            s.name = f.at("name").get<std::string>();
            s.kind = f.at("kind").get<std::string>() == "numerical" ? FieldKind::numerical : FieldKind::categorical;
            s.cardinality = f.at("cardinality").get<std::size_t>();
            s.party = f.at("party").get<std::size_t>();
            data.schema.fields.push_back(s);
            ColumnEncoding ce;
            ce.vocabulary = f.at("vocabulary").get<std::vector<std::string>>();
            ce.min = f.at("min").get<double>();
            ce.max = f.at("max").get<double>();
            enc.columns.push_back(std::move(ce));
        }
        if (!j.at("oracle_test_auc").is_null()) data.oracle_test_auc = j.at("oracle_test_auc").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed cache manifest: " + std::string(e.what()));
    }
    const auto parties = j.at("parties").get<std::size_t>();
    auto read_split = [&](const std::string& name) {
        Table t;
        t.schema = data.schema;
        t.encoding = enc;
        t.columns.assign(data.schema.fields.size(), {});
        for (std::size_t k = 1; k <= parties; ++k) detail::read_party_csv(dir / detail::party_file(name, k), t, k, k == 1);
        return t;
    };
    data.train = read_split("train");
    const auto& splits = j.at("splits");
    if (splits.value("validation", 0) > 0) data.validation = read_split("validation");
    if (splits.value("test", 0) > 0) data.test = read_split("test");
    return data;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline fs::path checkpoint_path(const fs::path& out, std::uint64_t seed, std::size_t party) {
    return out / "checkpoints" / ("seed-" + std::to_string(seed)) / ("party-" + std::to_string(party) + ".json");
}

inline Checkpoint active_checkpoint(const ActivePretrained& a, std::uint64_t config_hash, std::uint64_t seed) {
    Checkpoint c;
    c.tags = {{"party", "1"},
              {"role", "active"},
              {"config_hash", hex64(config_hash)},
              {"seed", std::to_string(seed)},
              {"best_epoch", std::to_string(a.best_epoch)},
              {"selection_fallback", a.selection_fallback ? "true" : "false"}};
    if (std::isfinite(a.validation_auc)) c.tags["validation_auc"] = detail::exact(a.validation_auc);
    append_tensors(c, a.encoder, "encoder.");
    append_tensors(c, a.head, "head.");
    return c;
}

inline Checkpoint passive_checkpoint(const PassivePretrained& p, std::uint64_t config_hash, std::uint64_t seed) {
    Checkpoint c;
    c.tags = {{"party", std::to_string(p.party)},
              {"role", "passive"},
              {"config_hash", hex64(config_hash)},
              {"seed", std::to_string(seed)},
              {"initial_loss", detail::exact(p.initial_loss)},
              {"final_loss", detail::exact(p.final_loss)},
              {"initial_cross_entropy", detail::exact(p.initial_cross_entropy)},
              {"final_cross_entropy", detail::exact(p.final_cross_entropy)}};
    append_tensors(c, p.encoder, "encoder.");
    return c;
}

inline ActivePretrained load_active(const Checkpoint& c, const nn::EncoderSpec& spec) {
    if (!c.tags.count("role") || c.tags.at("role") != "active") throw DataError("checkpoint is not an active-party model");
    ActivePretrained a;
    Rng rng(0);
    a.encoder = nn::make_encoder(spec, rng);
    a.head = nn::Mlp::make(spec.out_dim, {}, 1, rng);
    load_tensors(c, a.encoder, "encoder.");
    load_tensors(c, a.head, "head.");
    a.best_epoch = std::stoull(c.tags.at("best_epoch"));
    a.selection_fallback = c.tags.at("selection_fallback") == "true";
    if (c.tags.count("validation_auc")) a.validation_auc = std::stod(c.tags.at("validation_auc"));
    return a;
}

inline nn::Encoder load_passive(const Checkpoint& c, const nn::EncoderSpec& spec) {
    if (!c.tags.count("role") || c.tags.at("role") != "passive") throw DataError("checkpoint is not a passive-party encoder");
    Rng rng(0);
    nn::Encoder e = nn::make_encoder(spec, rng);
    load_tensors(c, e, "encoder.");
    return e;
}

inline Checkpoint model_checkpoint(const DownstreamResult& r, std::uint64_t config_hash, std::uint64_t seed) {
    if (r.local) {
        Checkpoint c = active_checkpoint(*r.local, config_hash, seed);
        c.tags["mode"] = to_string(r.mode);
        return c;
    }
    Checkpoint c;
    c.tags = {{"mode", to_string(r.mode)}, {"config_hash", hex64(config_hash)}, {"seed", std::to_string(seed)}};
    for (std::size_t k = 0; k < r.model.encoders.size(); ++k) {
        append_tensors(c, r.model.encoders[k], "party-" + std::to_string(k + 1) + ".");
    }
    append_tensors(c, r.model.head, "head.");
    return c;
}

inline FederatedModel load_federated(const Checkpoint& c, std::span<const nn::EncoderSpec> specs) {
    FederatedModel m;
    Rng rng(0);
    std::size_t head_in = 0;
    for (std::size_t k = 0; k < specs.size(); ++k) {
        m.encoders.push_back(nn::make_encoder(specs[k], rng));
        load_tensors(c, m.encoders.back(), "party-" + std::to_string(k + 1) + ".");
        head_in += specs[k].out_dim;
    }
    m.head = nn::Mlp::make(head_in, {}, 1, rng);
    load_tensors(c, m.head, "head.");
    return m;
}

// ---------------------------------------------------------------------------
// Run records

inline std::string history_jsonl(const std::vector<EpochRecord>& history) {
    std::string out;
    for (const auto& r : history) {
        nlohmann::json j = {{"epoch", r.epoch},
                            {"loss", r.loss},
                            {"vfl_loss", r.vfl_loss},
                            {"constraint_loss", r.constraint_loss},
                            {"validation_auc", r.validation_auc ? nlohmann::json(*r.validation_auc) : nlohmann::json()}};
        out += j.dump() + "\n";
    }
    return out;
}

}  // namespace vflhlp
