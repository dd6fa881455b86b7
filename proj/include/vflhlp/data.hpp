#pragma once

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "vflhlp/common.hpp"
#include "vflhlp/features.hpp"

namespace vflhlp {

enum class FieldKind { categorical, numerical };

inline std::string to_string(FieldKind k) { return k == FieldKind::categorical ? "categorical" : "numerical"; }

struct FieldSpec {
    std::string name;
    FieldKind kind = FieldKind::categorical;
    std::size_t cardinality = 0;  // fitted vocabulary size, categorical only
    std::size_t party = 1;        // 1-based; party 1 holds the labels

    friend bool operator==(const FieldSpec&, const FieldSpec&) = default;
};

struct FeatureSchema {
    std::vector<FieldSpec> fields;

    /// Field indices owned by `party`: categorical fields first, then
    /// numerical ones, each group in declaration order (the FeatureBlock layout).
    std::vector<std::size_t> party_fields(std::size_t party) const {
        std::vector<std::size_t> out;
        for (FieldKind kind : {FieldKind::categorical, FieldKind::numerical}) {
            for (std::size_t i = 0; i < fields.size(); ++i) {
                if (fields[i].party == party && fields[i].kind == kind) out.push_back(i);
            }
        }
        return out;
    }

    std::vector<std::size_t> cardinalities(std::size_t party) const {
        std::vector<std::size_t> out;
        for (std::size_t i : party_fields(party)) {
            if (fields[i].kind == FieldKind::categorical) out.push_back(fields[i].cardinality);
        }
        return out;
    }

    std::size_t num_numerical(std::size_t party) const {
        std::size_t n = 0;
        for (const auto& f : fields) n += (f.party == party && f.kind == FieldKind::numerical);
        return n;
    }

    /// Every field belongs to a party in [1, parties], every party owns at
    /// least one field, names are unique.
    void validate(std::size_t parties) const {
        if (parties < 1) throw ConfigError("schema: at least one party is required");
        std::set<std::string> names;
        std::vector<std::size_t> owned(parties + 1, 0);
        for (const auto& f : fields) {
            if (!names.insert(f.name).second) throw ConfigError("schema: duplicate field '" + f.name + "'");
            if (f.party < 1 || f.party > parties) {
                throw ConfigError("field '" + f.name + "' is assigned to party " + std::to_string(f.party) + " of " +
                                  std::to_string(parties));
            }
            ++owned[f.party];
        }
        for (std::size_t k = 1; k <= parties; ++k) {
            if (owned[k] == 0) throw ConfigError("schema: party " + std::to_string(k) + " owns no fields");
        }
    }

    friend bool operator==(const FeatureSchema&, const FeatureSchema&) = default;
};

/// Fitted transform of one raw column: sorted vocabulary (code = index + 1,
/// unseen = 0) for categorical fields, min/max for numerical ones.
struct ColumnEncoding {
    std::vector<std::string> vocabulary;
    double min = 0.0;
    double max = 0.0;

    std::uint32_t encode(const std::string& raw) const {
        auto it = std::lower_bound(vocabulary.begin(), vocabulary.end(), raw);
        if (it == vocabulary.end() || *it != raw) return 0;
        return static_cast<std::uint32_t>(it - vocabulary.begin()) + 1;
    }

    /// Min-max scaling clamped to [0, 1]; a constant column maps to 0.
    double scale(double x) const {
        if (!(max > min)) return 0.0;
        return std::clamp((x - min) / (max - min), 0.0, 1.0);
    }

    friend bool operator==(const ColumnEncoding&, const ColumnEncoding&) = default;
};

struct TableEncoding {
    std::vector<ColumnEncoding> columns;  // one per schema field

    friend bool operator==(const TableEncoding&, const TableEncoding&) = default;
};

/// Encoded samples of a single table. Columns follow schema field order;
/// categorical codes are stored as exact doubles.
struct Table {
    FeatureSchema schema;
    std::vector<std::uint64_t> ids;
    std::vector<std::vector<double>> columns;
    std::vector<int> labels;  // empty when the table is unlabeled
    TableEncoding encoding;

    std::size_t rows() const { return ids.size(); }

    FeatureBlock party_block(std::size_t party, std::span<const std::size_t> rows) const {
        const auto idx = schema.party_fields(party);
        std::size_t n_cat = 0;
        for (std::size_t i : idx) n_cat += schema.fields[i].kind == FieldKind::categorical;
        FeatureBlock block(rows.size(), n_cat, idx.size() - n_cat);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            for (std::size_t f = 0; f < idx.size(); ++f) block.set_field(r, f, columns[idx[f]][rows[r]]);
        }
        return block;
    }

    FeatureBlock party_block(std::size_t party) const {
        const auto all = iota_indices(rows());
        return party_block(party, all);
    }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (quoted) throw DataError("line " + std::to_string(line_no) + ": unterminated quote");
    out.push_back(std::move(cur));
    return out;
}

inline bool parse_double(const std::string& s, double& out) {
    const char* first = s.data();
    const char* last = s.data() + s.size();
    while (first < last && *first == ' ') ++first;
    while (last > first && last[-1] == ' ') --last;
    if (first == last) return false;
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last && std::isfinite(out);
}

inline bool parse_u64(const std::string& s, std::uint64_t& out) {
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size() && !s.empty();
}

}  // namespace detail

/// Reads a header-led, comma-separated file. Without `fitted`, vocabularies
/// and min/max statistics are fitted on this file (the training split);
/// otherwise the given encoding is applied, mapping unseen categories to 0
/// and clamping scaled numerics to [0, 1]. An empty `label_column` reads an
/// unlabeled table. Errors name the offending line.
inline Table load_csv(const std::filesystem::path& path, const FeatureSchema& schema, const std::string& id_column,
                      const std::string& label_column, const TableEncoding* fitted = nullptr) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw DataError(path.string() + ": missing header row");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = detail::split_csv_line(line, line_no);
    auto find_col = [&](const std::string& name) -> std::size_t {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw DataError(path.string() + ": missing column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t id_col = find_col(id_column);
    const std::optional<std::size_t> label_col =
        label_column.empty() ? std::nullopt : std::optional<std::size_t>(find_col(label_column));
    std::vector<std::size_t> field_cols;
    for (const auto& f : schema.fields) field_cols.push_back(find_col(f.name));
    if (fitted && fitted->columns.size() != schema.fields.size()) {
        throw SchemaError("fitted encoding does not match the schema");
    }

    Table table;
    table.schema = schema;
    std::vector<std::vector<std::string>> raw(schema.fields.size());
    std::vector<std::vector<double>> numeric(schema.fields.size());
    std::unordered_map<std::uint64_t, std::size_t> seen;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = detail::split_csv_line(line, line_no);
        if (cells.size() != header.size()) {
            throw DataError(path.string() + " line " + std::to_string(line_no) + ": expected " +
                            std::to_string(header.size()) + " cells, got " + std::to_string(cells.size()));
        }
        std::uint64_t id = 0;
        if (!detail::parse_u64(cells[id_col], id)) {
            throw DataError(path.string() + " line " + std::to_string(line_no) + ": unparseable id '" +
                            cells[id_col] + "'");
        }
        if (auto [it, fresh] = seen.emplace(id, line_no); !fresh) {
            throw DataError(path.string() + " line " + std::to_string(line_no) + ": duplicate id " +
                            std::to_string(id) + " (first seen on line " + std::to_string(it->second) + ")");
        }
        table.ids.push_back(id);
        if (label_col) {
            const std::string& y = cells[*label_col];
            if (y != "0" && y != "1") {
                throw DataError(path.string() + " line " + std::to_string(line_no) + ": label must be 0 or 1, got '" +
                                y + "'");
            }
            table.labels.push_back(y == "1" ? 1 : 0);
        }
        for (std::size_t f = 0; f < schema.fields.size(); ++f) {
            const std::string& cell = cells[field_cols[f]];
            if (schema.fields[f].kind == FieldKind::categorical) {
                raw[f].push_back(cell);
            } else {
                double v = 0.0;
                if (!detail::parse_double(cell, v)) {
                    throw DataError(path.string() + " line " + std::to_string(line_no) + ": unparseable numeric '" +
                                    cell + "' in column '" + schema.fields[f].name + "'");
                }
                numeric[f].push_back(v);
            }
        }
    }
    if (table.ids.empty()) throw DataError(path.string() + ": no samples");

    if (fitted) {
        table.encoding = *fitted;
    } else {
        table.encoding.columns.resize(schema.fields.size());
        for (std::size_t f = 0; f < schema.fields.size(); ++f) {
            auto& enc = table.encoding.columns[f];
            if (schema.fields[f].kind == FieldKind::categorical) {
                enc.vocabulary = raw[f];
                std::sort(enc.vocabulary.begin(), enc.vocabulary.end());
                enc.vocabulary.erase(std::unique(enc.vocabulary.begin(), enc.vocabulary.end()), enc.vocabulary.end());
            } else {
                auto [lo, hi] = std::minmax_element(numeric[f].begin(), numeric[f].end());
                enc.min = *lo;
                enc.max = *hi;
            }
        }
    }
    table.columns.resize(schema.fields.size());
    for (std::size_t f = 0; f < schema.fields.size(); ++f) {
        const auto& enc = table.encoding.columns[f];
        auto& col = table.columns[f];
        if (schema.fields[f].kind == FieldKind::categorical) {
            table.schema.fields[f].cardinality = enc.vocabulary.size();
            for (const auto& s : raw[f]) col.push_back(enc.encode(s));
        } else {
            table.schema.fields[f].cardinality = 0;
            for (double v : numeric[f]) col.push_back(enc.scale(v));
        }
    }
    return table;
}

// ---------------------------------------------------------------------------
// Vertical partitioning

/// Rows for one ID sequence, contributed by every party in the same order.
struct AlignedBatch {
    std::vector<std::uint64_t> ids;
    std::vector<FeatureBlock> parties;  // index 0 is party 1
    std::vector<int> labels;

    std::size_t size() const { return ids.size(); }

    friend bool operator==(const AlignedBatch&, const AlignedBatch&) = default;
};

/// A fully aligned evaluation split (validation or test).
using AlignedSet = AlignedBatch;

struct PartyData {
    std::vector<std::uint64_t> ids;
    FeatureBlock features;  // X^k, the party's full local set
};

struct VerticalDataset {
    FeatureSchema schema;
    std::vector<PartyData> parties;  // index 0 is party 1 (active)
    std::vector<int> labels;         // party 1 only, one per parties[0] row
    std::vector<std::uint64_t> aligned_ids;
    std::vector<std::vector<std::size_t>> aligned_rows;    // per party, local row of each aligned id
    std::vector<std::vector<std::size_t>> unaligned_rows;  // per party
    std::optional<AlignedSet> validation;
    std::optional<AlignedSet> test;

    std::size_t party_count() const { return parties.size(); }
    std::size_t aligned_count() const { return aligned_ids.size(); }

    /// Aligned samples at the given positions of `aligned_ids`.
    AlignedBatch aligned(std::span<const std::size_t> positions) const {
        AlignedBatch batch;
        batch.ids.reserve(positions.size());
        for (std::size_t p : positions) batch.ids.push_back(aligned_ids[p]);
        for (std::size_t k = 0; k < parties.size(); ++k) {
            std::vector<std::size_t> rows;
            rows.reserve(positions.size());
            for (std::size_t p : positions) rows.push_back(aligned_rows[k][p]);
            batch.parties.push_back(parties[k].features.select(rows));
            if (k == 0) {
                for (std::size_t r : rows) batch.labels.push_back(labels[r]);
            }
        }
        return batch;
    }

    AlignedBatch aligned_all() const {
        const auto all = iota_indices(aligned_ids.size());
        return aligned(all);
    }
};

struct PartitionConfig {
    std::size_t parties = 2;
    std::size_t local_count = 0;    // per-party local samples; 0 = as many as the table allows
    std::size_t aligned_count = 0;  // ID-linked samples shared by all parties
    std::size_t core_count = 0;     // shared feature rows; 0 = aligned_count
    std::uint64_t seed = 0;
};

/// Every row of `table`, split column-wise into per-party blocks.
inline AlignedSet make_aligned_set(const Table& table, std::size_t parties) {
    AlignedSet set;
    set.ids = table.ids;
    set.labels = table.labels;
    for (std::size_t k = 1; k <= parties; ++k) set.parties.push_back(table.party_block(k));
    return set;
}

namespace detail {

inline std::uint64_t unlinked_id(std::uint64_t id, std::size_t party) {
    return splitmix64(id ^ derive_seed(0x5ca1ab1e, "unlinked-id", party));
}

}  // namespace detail

/// Splits a labeled table across parties by column and assigns local sample
/// sets by a seeded permutation P of the rows:
///   - P[0, core) is held by every party; its first `aligned_count` rows are
///     ID-linked (the aligned set), the rest keep party-scoped IDs so they
///     count as unaligned local samples;
///   - each party then receives a private, disjoint slice of
///     local_count - core further rows.
/// For a fixed seed and core, aligned sets are prefixes of each other and every
/// party's local features are identical across aligned counts.
inline VerticalDataset vertical_partition(const Table& table, const PartitionConfig& cfg) {
    const std::size_t K = cfg.parties;
    table.schema.validate(K);
    if (table.labels.size() != table.rows()) throw DataError("vertical_partition: the table must be labeled");
    const std::size_t n = table.rows();
    const std::size_t core = std::max(cfg.core_count, cfg.aligned_count);
    if (core > n) {
        throw DataError("aligned_count " + std::to_string(core) + " exceeds the " + std::to_string(n) +
                        " available samples");
    }
    const std::size_t local = cfg.local_count == 0 ? core + (n - core) / K : cfg.local_count;
    if (core > local) {
        throw DataError("aligned_count " + std::to_string(core) + " exceeds the per-party sample count " +
                        std::to_string(local));
    }
    if (core + K * (local - core) > n) {
        throw DataError("table has " + std::to_string(n) + " samples, partition needs " +
                        std::to_string(core + K * (local - core)));
    }

    Rng rng(derive_seed(cfg.seed, "partition"));
    const auto perm = permutation(n, rng);

    VerticalDataset ds;
    ds.schema = table.schema;
    ds.parties.resize(K);
    ds.aligned_rows.assign(K, {});
    ds.unaligned_rows.assign(K, {});
    for (std::size_t i = 0; i < cfg.aligned_count; ++i) ds.aligned_ids.push_back(table.ids[perm[i]]);
    for (std::size_t k = 0; k < K; ++k) {
        std::vector<std::size_t> rows(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(core));
        const std::size_t start = core + k * (local - core);
        rows.insert(rows.end(), perm.begin() + static_cast<std::ptrdiff_t>(start),
                    perm.begin() + static_cast<std::ptrdiff_t>(start + local - core));
        auto& pd = ds.parties[k];
        pd.features = table.party_block(k + 1, rows);
        pd.ids.reserve(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const std::uint64_t id = table.ids[rows[i]];
            const bool shared_unlinked = i >= cfg.aligned_count && i < core;
            pd.ids.push_back(shared_unlinked && k > 0 ? detail::unlinked_id(id, k) : id);
            (i < cfg.aligned_count ? ds.aligned_rows[k] : ds.unaligned_rows[k]).push_back(i);
        }
        if (k == 0) {
            for (std::size_t r : rows) ds.labels.push_back(table.labels[r]);
        }
    }

    // aligned set must be exactly the ID intersection
    std::unordered_map<std::uint64_t, std::size_t> counts;
    for (const auto& pd : ds.parties) {
        for (auto id : pd.ids) ++counts[id];
    }
    std::size_t shared = 0;
    for (const auto& [id, c] : counts) shared += (c == K);
    if (shared != cfg.aligned_count) throw DataError("vertical_partition: sample ID collision across parties");
    return ds;
}

/// One seeded shuffle of the aligned set per epoch; batches without
/// replacement, the short final batch is kept.
inline std::vector<AlignedBatch> sample_aligned_batches(const VerticalDataset& ds, std::size_t batch_size,
                                                        std::uint64_t seed, std::uint64_t epoch) {
    if (ds.aligned_ids.empty()) throw TrainingError("no aligned samples to train on");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    Rng rng(derive_seed(seed, "shuffle", epoch));
    const auto order = permutation(ds.aligned_ids.size(), rng);
    std::vector<AlignedBatch> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t end = std::min(order.size(), start + batch_size);
        batches.push_back(ds.aligned(std::span(order).subspan(start, end - start)));
    }
    return batches;
}

/// Index batches over `n` rows for one shuffled epoch.
inline std::vector<std::vector<std::size_t>> shuffled_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    const auto order = permutation(n, rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

}  // namespace vflhlp
