#pragma once

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "vflhlp/config.hpp"
#include "vflhlp/data.hpp"
#include "vflhlp/federated.hpp"
#include "vflhlp/metrics.hpp"
#include "vflhlp/ssl.hpp"
#include "vflhlp/supervised.hpp"
#include "vflhlp/synth.hpp"

namespace vflhlp {

/// Encoded dataset before vertical partitioning: the training pool and the
/// aligned evaluation splits.
struct PreparedData {
    FeatureSchema schema;
    Table train;
    std::optional<Table> validation;
    std::optional<Table> test;
    std::optional<double> oracle_test_auc;  // synthetic data only
    std::uint64_t hash = 0;                 // dataset_hash of the producing config
};

inline PreparedData prepare_data(const RunConfig& cfg) {
    PreparedData out;
    out.hash = dataset_hash(cfg);
    if (cfg.dataset.kind == DatasetKind::synthetic) {
        SynthData data = synth_generate(cfg.dataset.synthetic);
        out.schema = data.schema;
        if (data.test.table.rows() > 0) {
            try {
                out.oracle_test_auc = auc(data.test.oracle(std::vector<std::size_t>{}), data.test.table.labels);
            } catch (const UndefinedMetric&) {
            }
        }
        out.train = std::move(data.train.table);
        if (data.validation.table.rows() > 0) out.validation = std::move(data.validation.table);
        if (data.test.table.rows() > 0) out.test = std::move(data.test.table);
        return out;
    }
    const CsvSource& src = cfg.dataset.csv;
    FeatureSchema schema;
    for (const auto& f : src.fields) schema.fields.push_back({f.name, f.kind, 0, f.party});
    schema.validate(cfg.partition.parties);
    out.train = load_csv(src.train, schema, src.id_column, src.label_column);
    out.schema = out.train.schema;
    if (!src.validation.empty()) {
        out.validation = load_csv(src.validation, schema, src.id_column, src.label_column, &out.train.encoding);
    }
    if (!src.test.empty()) out.test = load_csv(src.test, schema, src.id_column, src.label_column, &out.train.encoding);
    return out;
}

inline std::size_t max_aligned(const RunConfig& cfg) {
    std::size_t m = 0;
    for (auto a : cfg.partition.aligned_counts) m = std::max(m, a);
    return m;
}

/// Partition for one (aligned count, seed) cell. The shared core is the
/// largest configured aligned count, so every cell of a seed sees the same
/// local data and reuses the same pre-trained models.
inline VerticalDataset partition_cell(const PreparedData& data, const RunConfig& cfg, std::size_t aligned,
                                      std::uint64_t seed) {
    PartitionConfig pc;
    pc.parties = cfg.partition.parties;
    pc.local_count = cfg.partition.local_count;
    pc.aligned_count = aligned;
    pc.core_count = max_aligned(cfg);
    pc.seed = seed;
    VerticalDataset ds = vertical_partition(data.train, pc);
    if (data.validation) ds.validation = make_aligned_set(*data.validation, pc.parties);
    if (data.test) ds.test = make_aligned_set(*data.test, pc.parties);
    return ds;
}

inline bool needs_active_pretraining(const std::vector<TrainMode>& modes, bool warm_start_active) {
    for (auto m : modes) {
        if (uses_constraint(m) || m == TrainMode::local_a) return true;
    }
    return warm_start_active;
}

inline bool needs_passive_pretraining(const std::vector<TrainMode>& modes) {
    for (auto m : modes) {
        if (uses_passive_warm_start(m)) return true;
    }
    return false;
}

struct SeedPretraining {
    std::optional<ActivePretrained> active;
    std::vector<std::optional<PassivePretrained>> passive;  // index k - 1

    PretrainedSet set() const {
        PretrainedSet s;
        s.active = active;
        for (const auto& p : passive) s.passive.push_back(p ? std::optional<nn::Encoder>(p->encoder) : std::nullopt);
        return s;
    }
};

/// Steps 1 and 2: supervised pre-training of party 1 and contrastive
/// pre-training of every passive party, each on its full local data.
inline SeedPretraining pretrain_seed(const VerticalDataset& ds, const RunConfig& cfg, std::uint64_t seed,
                                     bool active, bool passive) {
    const auto specs = encoder_specs(ds.schema, cfg.model);
    SeedPretraining out;
    out.passive.resize(ds.party_count());
    if (active) {
        SupervisedConfig sup = cfg.pretrain.supervised;
        sup.seed = seed;
        out.active = pretrain_active(ds.parties[0].features, ds.labels, specs[0], sup);
    }
    if (passive) {
        SslConfig ssl = cfg.pretrain.ssl;
        ssl.seed = seed;
        for (std::size_t k = 2; k <= ds.party_count(); ++k) {
            out.passive[k - 1] = pretrain_passive(ds.parties[k - 1].features, specs[k - 1], ssl, k);
        }
    }
    return out;
}

struct GridCell {
    TrainMode mode = TrainMode::vanilla_vfl;
    double beta = 0.0;  // meaningful for constraint modes only
    std::size_t aligned = 0;
    std::uint64_t seed = 0;
    double test_auc = 0.0;
    DownstreamResult result;
    std::string failure;  // non-empty marks a missing cell; the AUC is then NaN

    bool ok() const { return failure.empty(); }
};

/// Label used for rows and run directories, e.g. "vflhlp" or "vflhlp-beta0.1".
inline std::string row_label(TrainMode mode, double beta, bool sweep) {
    std::string label = to_string(mode);
    if (sweep && uses_constraint(mode)) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "-beta%g", beta);
        label += buf;
    }
    return label;
}

/// All cells of one seed. local_a is trained once per seed and reported at
/// every aligned count, since it never touches aligned data.
/// A failing cell is kept with its reason instead of aborting the grid;
/// `upstream_failure` marks every cell of the seed missing.
inline std::vector<GridCell> run_seed(const PreparedData& data, const RunConfig& cfg, std::uint64_t seed,
                                      const SeedPretraining& pre, const std::string& upstream_failure = {}) {
    const auto specs = encoder_specs(data.schema, cfg.model);
    const PretrainedSet set = pre.set();
    std::vector<GridCell> cells;
    std::optional<GridCell> local;
    for (std::size_t aligned : cfg.partition.aligned_counts) {
        std::optional<VerticalDataset> ds;
        std::string cell_failure = upstream_failure;
        if (cell_failure.empty()) {
            try {
                ds = partition_cell(data, cfg, aligned, seed);
                if (!ds->test) throw DataError("the dataset has no test split to evaluate on");
            } catch (const std::exception& e) {
                cell_failure = e.what();
            }
        }
        for (TrainMode mode : cfg.downstream.modes) {
            const std::vector<double> betas = uses_constraint(mode) ? cfg.downstream.betas()
                                                                    : std::vector<double>{cfg.downstream.train.beta};
            for (double beta : betas) {
                GridCell cell;
                cell.mode = mode;
                cell.beta = beta;
                cell.aligned = aligned;
                cell.seed = seed;
                if (mode == TrainMode::local_a && local) {
                    cell.test_auc = local->test_auc;
                    cell.result = local->result;
                    cell.failure = local->failure;
                    cells.push_back(std::move(cell));
                    continue;
                }
                cell.failure = cell_failure;
                if (cell.ok()) {
                    try {
                        DownstreamConfig dc = cfg.downstream.train;
                        dc.beta = beta;
                        dc.seed = seed;
                        SupervisedConfig sup = cfg.pretrain.supervised;
                        sup.seed = seed;
                        cell.result = train_downstream(*ds, mode, specs, set, dc, sup);
                        cell.test_auc = evaluate_mode(cell.result, *ds->test);
                    } catch (const std::exception& e) {
                        cell.failure = e.what();
                    }
                }
                if (!cell.ok()) {
                    cell.test_auc = std::numeric_limits<double>::quiet_NaN();
                    cell.result = {};
                }
                if (mode == TrainMode::local_a) local = cell;
                cells.push_back(std::move(cell));
            }
        }
    }
    return cells;
}

struct SeedOutcome {
    std::uint64_t seed = 0;
    SeedPretraining pretraining;
    std::vector<GridCell> cells;
};

/// Every seed of the grid, optionally spread over `cfg.threads` workers.
/// Output order depends only on the config. Training failures become missing
/// cells; only errors outside any cell (e.g. an invalid partition) propagate.
inline std::vector<SeedOutcome> run_grid(const PreparedData& data, const RunConfig& cfg) {
    const auto& seeds = cfg.partition.seeds;
    std::vector<SeedOutcome> outcomes(seeds.size());
    std::vector<std::exception_ptr> errors(seeds.size());
    const bool active = needs_active_pretraining(cfg.downstream.modes, cfg.downstream.train.warm_start_active);
    const bool passive = needs_passive_pretraining(cfg.downstream.modes);
    auto job = [&](std::size_t i) {
        try {
            const std::uint64_t seed = seeds[i];
            const VerticalDataset base = partition_cell(data, cfg, max_aligned(cfg), seed);
            outcomes[i].seed = seed;
            std::string failure;
            try {
                outcomes[i].pretraining = pretrain_seed(base, cfg, seed, active, passive);
            } catch (const std::exception& e) {
                outcomes[i].pretraining = {};
                failure = std::string("pre-training failed: ") + e.what();
            }
            outcomes[i].cells = run_seed(data, cfg, seed, outcomes[i].pretraining, failure);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    const std::size_t workers = std::min<std::size_t>(std::max<std::size_t>(cfg.threads, 1), seeds.size());
    if (workers <= 1) {
        for (std::size_t i = 0; i < seeds.size(); ++i) job(i);
    } else {
        std::vector<std::thread> pool;
        std::atomic<std::size_t> next{0};
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < seeds.size(); i = next++) job(i);
            });
        }
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return outcomes;
}

// ---------------------------------------------------------------------------
// Result table

struct ResultRow {
    std::string label;
    TrainMode mode = TrainMode::vanilla_vfl;
    double beta = 0.0;
    std::vector<MeanStd> columns;  // one per aligned count
};

struct ResultTable {
    std::vector<std::size_t> aligned_counts;
    std::vector<ResultRow> rows;
    std::optional<std::vector<double>> delta;  // mean(vflhlp) - mean(vanilla_vfl)
    std::optional<double> oracle_auc;
    std::size_t seed_count = 0;  // cells per column when nothing is missing

    const ResultRow* find(const std::string& label) const {
        for (const auto& r : rows) {
            if (r.label == label) return &r;
        }
        return nullptr;
    }
};

inline ResultTable summarize(const std::vector<SeedOutcome>& outcomes, const RunConfig& cfg,
                             std::optional<double> oracle_auc = std::nullopt) {
    ResultTable table;
    table.aligned_counts = cfg.partition.aligned_counts;
    table.oracle_auc = oracle_auc;
    table.seed_count = cfg.partition.seeds.size();
    const bool sweep = cfg.downstream.beta_sweep.size() > 1;
    std::map<std::pair<std::string, std::size_t>, std::vector<double>> values;
    for (const auto& o : outcomes) {
        for (const auto& c : o.cells) {
            if (c.ok()) values[{row_label(c.mode, c.beta, sweep), c.aligned}].push_back(c.test_auc);
        }
    }
    for (TrainMode mode : cfg.downstream.modes) {
        const std::vector<double> betas =
            uses_constraint(mode) ? cfg.downstream.betas() : std::vector<double>{cfg.downstream.train.beta};
        for (double beta : betas) {
            ResultRow row;
            row.label = row_label(mode, beta, sweep);
            row.mode = mode;
            row.beta = beta;
            for (auto a : table.aligned_counts) row.columns.push_back(mean_std(values[{row.label, a}]));
            table.rows.push_back(std::move(row));
        }
    }
    const ResultRow* hlp = nullptr;
    const ResultRow* vanilla = nullptr;
    for (const auto& r : table.rows) {
        if (r.mode == TrainMode::vflhlp && !hlp) hlp = &r;
        if (r.mode == TrainMode::vanilla_vfl && !vanilla) vanilla = &r;
    }
    if (hlp && vanilla) {
        std::vector<double> d;
        for (std::size_t i = 0; i < table.aligned_counts.size(); ++i) {
            const bool present = hlp->columns[i].count > 0 && vanilla->columns[i].count > 0;
            d.push_back(present ? hlp->columns[i].mean - vanilla->columns[i].mean
                                : std::numeric_limits<double>::quiet_NaN());
        }
        table.delta = d;
    }
    return table;
}

namespace detail {

inline std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

/// RFC 4180 quoting when the field needs it.
inline std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace detail

/// Markdown table: mean ± std to three decimals, plus the delta row. A column
/// with missing cells shows how many seeds it averages.
inline std::string format_markdown(const ResultTable& t) {
    std::string out = "| model |";
    for (auto a : t.aligned_counts) out += " " + std::to_string(a) + " |";
    out += "\n|---|";
    for (std::size_t i = 0; i < t.aligned_counts.size(); ++i) out += "---|";
    out += "\n";
    for (const auto& r : t.rows) {
        out += "| " + r.label + " |";
        for (const auto& c : r.columns) {
            if (c.count == 0) {
                out += " missing |";
                continue;
            }
            out += " " + detail::fmt("%.3f", c.mean) + " ± " + detail::fmt("%.3f", c.std);
            if (c.count < t.seed_count) out += " (n=" + std::to_string(c.count) + ")";
            out += " |";
        }
        out += "\n";
    }
    if (t.delta) {
        out += "| delta vflhlp |";
        for (double d : *t.delta) out += std::isnan(d) ? std::string(" missing |") : " " + detail::fmt("%+.3f", d) + " |";
        out += "\n";
    }
    if (t.oracle_auc) out += "\nBayes-score ceiling on the test split: " + detail::fmt("%.3f", *t.oracle_auc) + "\n";
    return out;
}

inline std::string format_csv(const ResultTable& t) {
    std::string out = "model,mode,beta,aligned,mean,std,n\n";
    for (const auto& r : t.rows) {
        for (std::size_t i = 0; i < t.aligned_counts.size(); ++i) {
            out += r.label + "," + to_string(r.mode) + "," + detail::fmt("%.17g", r.beta) + "," +
                   std::to_string(t.aligned_counts[i]) + "," + detail::fmt("%.17g", r.columns[i].mean) + "," +
                   detail::fmt("%.17g", r.columns[i].std) + "," + std::to_string(r.columns[i].count) + "\n";
        }
    }
    return out;
}

inline std::string format_cells_csv(const std::vector<SeedOutcome>& outcomes, bool sweep) {
    std::string out = "model,mode,beta,aligned,seed,test_auc,failure\n";
    for (const auto& o : outcomes) {
        for (const auto& c : o.cells) {
            out += row_label(c.mode, c.beta, sweep) + "," + to_string(c.mode) + "," + detail::fmt("%.17g", c.beta) +
                   "," + std::to_string(c.aligned) + "," + std::to_string(c.seed) + "," +
                   (c.ok() ? detail::fmt("%.17g", c.test_auc) : std::string()) + "," + detail::csv_quote(c.failure) +
                   "\n";
        }
    }
    return out;
}

}  // namespace vflhlp
