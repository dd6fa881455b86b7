#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vflhlp/nn.hpp"

namespace vflhlp {

inline constexpr const char* kCheckpointFormat = "vflhlp-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Tensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> values;

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Ordered list of named row-major tensors plus free-form string tags.
struct Checkpoint {
    std::map<std::string, std::string> tags;
    std::vector<Tensor> tensors;

    const Tensor* find(const std::string& name) const {
        for (const auto& t : tensors) {
            if (t.name == name) return &t;
        }
        return nullptr;
    }

    bool has_prefix(const std::string& prefix) const {
        for (const auto& t : tensors) {
            if (t.name.rfind(prefix, 0) == 0) return true;
        }
        return false;
    }

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

template <typename M>
void append_tensors(Checkpoint& ckpt, const M& model, const std::string& prefix) {
    nn::visit_tensors(model, prefix, [&](const std::string& name, const std::vector<std::size_t>& shape,
                                         std::span<const double> v) {
        ckpt.tensors.push_back({name, shape, std::vector<double>(v.begin(), v.end())});
    });
}

/// Fills an already-shaped model from `ckpt`; every tensor must be present
/// with a matching shape.
template <typename M>
void load_tensors(const Checkpoint& ckpt, M& model, const std::string& prefix) {
    nn::visit_tensors(model, prefix, [&](const std::string& name, const std::vector<std::size_t>& shape,
                                         std::span<double> v) {
        const Tensor* t = ckpt.find(name);
        if (!t) throw DataError("checkpoint is missing tensor '" + name + "'");
        if (t->shape != shape || t->values.size() != v.size()) {
            throw SchemaError("checkpoint tensor '" + name + "' has an unexpected shape");
        }
        std::copy(t->values.begin(), t->values.end(), v.begin());
    });
}

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
    nlohmann::json j;
    j["format"] = kCheckpointFormat;
    j["version"] = kCheckpointVersion;
    j["tags"] = ckpt.tags;
    auto& arr = j["tensors"] = nlohmann::json::array();
    for (const auto& t : ckpt.tensors) {
        for (double v : t.values) {
            if (!std::isfinite(v)) throw DataError("checkpoint tensor '" + t.name + "' holds a non-finite value");
        }
        arr.push_back({{"name", t.name}, {"shape", t.shape}, {"values", t.values}});
    }
    return j.dump() + "\n";
}

inline Checkpoint parse_checkpoint(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint is not valid JSON: ") + e.what());
    }
    if (j.value("format", "") != kCheckpointFormat) throw DataError("not a vflhlp checkpoint");
    if (j.value("version", 0) != kCheckpointVersion) {
        throw DataError("unsupported checkpoint version " + j.value("version", nlohmann::json()).dump());
    }
    Checkpoint ckpt;
    try {
        ckpt.tags = j.at("tags").get<std::map<std::string, std::string>>();
        for (const auto& jt : j.at("tensors")) {
            Tensor t;
            t.name = jt.at("name").get<std::string>();
            t.shape = jt.at("shape").get<std::vector<std::size_t>>();
            t.values = jt.at("values").get<std::vector<double>>();
            std::size_t expected = 1;
            for (auto d : t.shape) expected *= d;
            if (expected != t.values.size()) throw DataError("tensor '" + t.name + "' shape/value count mismatch");
            ckpt.tensors.push_back(std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed checkpoint: ") + e.what());
    }
    return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out << serialize_checkpoint(ckpt);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read checkpoint " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_checkpoint(ss.str());
}

}  // namespace vflhlp
