#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "vflhlp/common.hpp"
#include "vflhlp/data.hpp"

namespace vflhlp {

struct PartyFieldCounts {
    std::size_t categorical = 0;
    std::size_t numerical = 0;

    friend bool operator==(const PartyFieldCounts&, const PartyFieldCounts&) = default;
};

/// Latent-factor generator. Party k draws a latent z_k ~ N(0, I_q); each of
/// its fields observes a fixed random projection of z_k plus Gaussian noise
/// (bucketized into equiprobable categories for categorical fields). The
/// label is 1[sum_k w_k <u_k, z_k> + noise * logistic > 0], so every party
/// with w_k > 0 carries label signal.
struct SynthConfig {
    std::size_t pool = 15000;  // training rows before partitioning
    std::size_t validation = 1000;
    std::size_t test = 4000;
    std::vector<PartyFieldCounts> parties;
    std::size_t cardinality = 8;
    std::size_t latent_dim = 3;
    std::vector<double> party_weights;  // empty = all ones
    double feature_noise = 0.5;
    double noise = 1.0;
    std::uint64_t seed = 7;

    friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

struct SynthSplit {
    Table table;
    std::vector<std::vector<double>> party_scores;  // per party, w_k <u_k, z_k> per row

    /// Noise-free label score using the given parties (1-based); all when empty.
    std::vector<double> oracle(std::span<const std::size_t> parties = {}) const {
        std::vector<double> out(table.rows(), 0.0);
        for (std::size_t k = 1; k <= party_scores.size(); ++k) {
            if (!parties.empty() && std::find(parties.begin(), parties.end(), k) == parties.end()) continue;
            for (std::size_t i = 0; i < out.size(); ++i) out[i] += party_scores[k - 1][i];
        }
        return out;
    }
};

struct SynthData {
    FeatureSchema schema;
    SynthSplit train;
    SynthSplit validation;
    SynthSplit test;
};

namespace detail {

/// Inverse standard normal CDF (Acklam's rational approximation, |err| < 1.2e-9).
inline double normal_quantile(double p) {
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                   1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                   6.680131188771972e+01,  -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                   -2.549671010115819e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                   3.754408661907416e+00};
    constexpr double lo = 0.02425;
    if (p < lo) {
        const double q = std::sqrt(-2 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    }
    if (p > 1 - lo) {
        const double q = std::sqrt(-2 * std::log(1 - p));
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    }
    const double q = p - 0.5;
    const double r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
}

struct FieldModel {
    std::vector<double> loading;           // unit vector in latent space
    std::vector<double> cut_points;        // categorical bucket boundaries
    std::vector<std::uint32_t> code_perm;  // bucket -> code
};

}  // namespace detail

inline void validate(const SynthConfig& cfg) {
    if (cfg.pool < 10) throw ConfigError("synthetic pool must hold at least 10 samples");
    if (cfg.parties.empty()) throw ConfigError("synthetic config needs at least one party");
    for (std::size_t k = 0; k < cfg.parties.size(); ++k) {
        if (cfg.parties[k].categorical + cfg.parties[k].numerical == 0) {
            throw ConfigError("synthetic party " + std::to_string(k + 1) + " has no fields");
        }
    }
    if (cfg.cardinality < 2) throw ConfigError("synthetic cardinality must be at least 2");
    if (cfg.latent_dim == 0) throw ConfigError("synthetic latent_dim must be positive");
    if (!cfg.party_weights.empty() && cfg.party_weights.size() != cfg.parties.size()) {
        throw ConfigError("party_weights must list one weight per party");
    }
    if (!(cfg.noise >= 0.0) || !(cfg.feature_noise >= 0.0)) throw ConfigError("noise levels must be non-negative");
}

inline SynthData synth_generate(const SynthConfig& cfg) {
    validate(cfg);
    const std::size_t K = cfg.parties.size();
    const std::size_t q = cfg.latent_dim;
    Rng structure(derive_seed(cfg.seed, "synth.structure"));

    auto unit_vector = [&](Rng& rng) {
        std::vector<double> v(q);
        double norm = 0.0;
        do {
            for (double& x : v) x = rng.normal();
            norm = std::sqrt(squared_norm(v));
        } while (norm < 1e-6);
        for (double& x : v) x /= norm;
        return v;
    };

    SynthData data;
    std::vector<std::vector<detail::FieldModel>> models(K);
    std::vector<std::vector<double>> label_dirs(K);
    const double field_sd = std::sqrt(1.0 + cfg.feature_noise * cfg.feature_noise);
    for (std::size_t k = 0; k < K; ++k) {
        label_dirs[k] = unit_vector(structure);
        const auto& counts = cfg.parties[k];
        for (std::size_t f = 0; f < counts.categorical + counts.numerical; ++f) {
            detail::FieldModel fm;
            fm.loading = unit_vector(structure);
            const bool categorical = f < counts.categorical;
            if (categorical) {
                for (std::size_t b = 1; b < cfg.cardinality; ++b) {
                    fm.cut_points.push_back(field_sd * detail::normal_quantile(static_cast<double>(b) /
                                                                               static_cast<double>(cfg.cardinality)));
                }
                std::vector<std::uint32_t> perm;
                for (std::size_t c = 1; c <= cfg.cardinality; ++c) perm.push_back(static_cast<std::uint32_t>(c));
                structure.shuffle(perm);
                fm.code_perm = perm;
            }
            models[k].push_back(std::move(fm));
            FieldSpec spec;
            spec.name = "p" + std::to_string(k + 1) + (categorical ? "_c" : "_n") +
                        std::to_string(categorical ? f : f - counts.categorical);
            spec.kind = categorical ? FieldKind::categorical : FieldKind::numerical;
            spec.cardinality = categorical ? cfg.cardinality : 0;
            spec.party = k + 1;
            data.schema.fields.push_back(spec);
        }
    }

    auto generate = [&](std::size_t n, std::string_view stream, std::uint64_t id_base) {
        Rng rng(derive_seed(cfg.seed, stream));
        SynthSplit split;
        Table& t = split.table;
        t.schema = data.schema;
        t.columns.assign(data.schema.fields.size(), std::vector<double>(n));
        t.labels.resize(n);
        split.party_scores.assign(K, std::vector<double>(n));
        std::vector<double> z(q);
        for (std::size_t i = 0; i < n; ++i) {
            t.ids.push_back(id_base + i);
            std::size_t col = 0;
            double score = 0.0;
            for (std::size_t k = 0; k < K; ++k) {
                for (double& x : z) x = rng.normal();
                const double w = cfg.party_weights.empty() ? 1.0 : cfg.party_weights[k];
                split.party_scores[k][i] = w * dot(label_dirs[k], z);
                score += split.party_scores[k][i];
                for (const auto& fm : models[k]) {
                    const double u = dot(fm.loading, z) + cfg.feature_noise * rng.normal();
                    if (fm.cut_points.empty()) {
                        t.columns[col][i] = u;
                    } else {
                        const auto bucket = static_cast<std::size_t>(
                            std::upper_bound(fm.cut_points.begin(), fm.cut_points.end(), u) - fm.cut_points.begin());
                        t.columns[col][i] = fm.code_perm[bucket];
                    }
                    ++col;
                }
            }
            t.labels[i] = score + cfg.noise * rng.logistic() > 0.0 ? 1 : 0;
        }
        return split;
    };

    data.train = generate(cfg.pool, "synth.train", 1);
    data.validation = generate(cfg.validation, "synth.validation", 1'000'000'001ULL);
    data.test = generate(cfg.test, "synth.test", 2'000'000'001ULL);

    // encodings: identity vocabulary over codes, min-max fitted on the training pool
    TableEncoding enc;
    for (std::size_t f = 0; f < data.schema.fields.size(); ++f) {
        ColumnEncoding ce;
        if (data.schema.fields[f].kind == FieldKind::categorical) {
            for (std::size_t c = 1; c <= cfg.cardinality; ++c) ce.vocabulary.push_back(std::to_string(c));
            std::sort(ce.vocabulary.begin(), ce.vocabulary.end());
        } else {
            const auto& col = data.train.table.columns[f];
            auto [lo, hi] = std::minmax_element(col.begin(), col.end());
            ce.min = *lo;
            ce.max = *hi;
        }
        enc.columns.push_back(std::move(ce));
    }
    for (SynthSplit* split : {&data.train, &data.validation, &data.test}) {
        Table& t = split->table;
        t.encoding = enc;
        for (std::size_t f = 0; f < t.columns.size(); ++f) {
            const auto& ce = enc.columns[f];
            for (double& v : t.columns[f]) {
                if (data.schema.fields[f].kind == FieldKind::numerical) {
                    v = ce.scale(v);
                } else {
                    v = ce.encode(std::to_string(static_cast<std::uint32_t>(v)));
                }
            }
        }
    }
    return data;
}

/// Partitions the generated training pool and attaches the aligned
/// validation and test splits.
inline VerticalDataset synth_vertical(const SynthData& data, const PartitionConfig& partition) {
    VerticalDataset ds = vertical_partition(data.train.table, partition);
    const std::size_t K = partition.parties;
    if (data.validation.table.rows() > 0) ds.validation = make_aligned_set(data.validation.table, K);
    if (data.test.table.rows() > 0) ds.test = make_aligned_set(data.test.table, K);
    return ds;
}

}  // namespace vflhlp
