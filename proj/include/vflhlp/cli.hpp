#pragma once

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vflhlp/cache.hpp"
#include "vflhlp/config.hpp"
#include "vflhlp/experiment.hpp"

#ifndef VFLHLP_VERSION
#define VFLHLP_VERSION "unknown"
#endif

namespace vflhlp {

enum ExitCode : int { kExitOk = 0, kExitInternal = 1, kExitConfig = 2, kExitData = 3, kExitTraining = 4 };

struct CliOptions {
    std::string command;
    std::string config_path;
    std::string out_dir;  // empty = VFLHLP_OUT_DIR, then config.output_dir
    std::optional<std::uint64_t> seed;
    std::optional<std::string> mode;
    std::optional<std::size_t> aligned;
    bool passive_only = false;
};

namespace detail {

/// Output layout under the resolved output directory.
struct Layout {
    fs::path root;

    fs::path cache() const { return root / "cache"; }
    fs::path runs() const { return root / "runs"; }
    fs::path results() const { return root / "results"; }
    fs::path run_dir(const std::string& label, std::size_t aligned, std::uint64_t seed) const {
        return runs() / (label + "-a" + std::to_string(aligned) + "-s" + std::to_string(seed));
    }
};

inline fs::path resolve_out(const CliOptions& opt, const RunConfig& cfg) {
    if (!opt.out_dir.empty()) return opt.out_dir;
    if (const char* env = std::getenv("VFLHLP_OUT_DIR"); env && *env) return env;
    return cfg.output_dir;
}

inline std::string utc_now() {
    const std::time_t t = std::time(nullptr);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// The only artifact allowed to vary between identical runs.
inline void write_run_meta(const Layout& layout, const std::string& command, const RunConfig& cfg,
                           const std::string& started, double seconds) {
    nlohmann::json j = {{"command", command},
                        {"config_hash", hex64(config_hash(cfg))},
                        {"version", VFLHLP_VERSION},
                        {"started_utc", started},
                        {"finished_utc", utc_now()},
                        {"wall_seconds", seconds}};
    write_file(layout.root / ("run_meta." + command + ".json"), j.dump(2) + "\n");
}

inline PreparedData ensure_cache(const Layout& layout, const RunConfig& cfg, std::ostream& log, bool& reused) {
    const std::uint64_t hash = dataset_hash(cfg);
    reused = cache_is_current(layout.cache(), hash);
    if (!reused) {
        log << "preparing dataset cache in " << layout.cache().string() << "\n";
        write_cache(layout.cache(), prepare_data(cfg), cfg.partition.parties);
    }
    return read_cache(layout.cache());
}

inline PreparedData require_cache(const Layout& layout, const RunConfig& cfg) {
    if (!cache_is_current(layout.cache(), dataset_hash(cfg))) {
        throw DataError("no dataset cache for this config under " + layout.cache().string() +
                        "; run 'prepare' with the same config first");
    }
    return read_cache(layout.cache());
}

inline void save_pretraining(const Layout& layout, const SeedPretraining& pre, std::uint64_t hash,
                             std::uint64_t seed) {
    if (pre.active) save_checkpoint(active_checkpoint(*pre.active, hash, seed), checkpoint_path(layout.root, seed, 1));
    for (const auto& p : pre.passive) {
        if (p) save_checkpoint(passive_checkpoint(*p, hash, seed), checkpoint_path(layout.root, seed, p->party));
    }
}

/// Loads the checkpoints `modes` need; a missing one names its party.
inline PretrainedSet load_pretraining(const Layout& layout, const std::vector<nn::EncoderSpec>& specs,
                                      const std::vector<TrainMode>& modes, bool warm_start_active, std::uint64_t seed) {
    PretrainedSet set;
    set.passive.resize(specs.size());
    auto require = [&](std::size_t party, const std::string& mode) {
        const fs::path p = checkpoint_path(layout.root, seed, party);
        if (!fs::exists(p)) {
            throw DataError("mode " + mode + " needs the pre-trained model of party " + std::to_string(party) +
                            " for seed " + std::to_string(seed) + ", expected at " + p.string() +
                            "; run 'pretrain' first");
        }
        return load_checkpoint(p);
    };
    for (TrainMode m : modes) {
        if ((uses_constraint(m) || m == TrainMode::local_a || warm_start_active) && !set.active) {
            set.active = load_active(require(1, to_string(m)), specs[0]);
        }
        if (uses_passive_warm_start(m)) {
            for (std::size_t k = 2; k <= specs.size(); ++k) {
                if (!set.passive[k - 1]) set.passive[k - 1] = load_passive(require(k, to_string(m)), specs[k - 1]);
            }
        }
    }
    return set;
}

inline void write_run(const Layout& layout, const GridCell& cell, bool sweep, std::uint64_t hash) {
    const std::string label = row_label(cell.mode, cell.beta, sweep);
    const fs::path dir = layout.run_dir(label, cell.aligned, cell.seed);
    write_file(dir / "history.jsonl", history_jsonl(cell.result.history));
    save_checkpoint(model_checkpoint(cell.result, hash, cell.seed), dir / "model.json");
    nlohmann::json j = {{"model", label},
                        {"mode", to_string(cell.mode)},
                        {"beta", cell.beta},
                        {"aligned", cell.aligned},
                        {"seed", cell.seed},
                        {"test_auc", cell.test_auc},
                        {"config_hash", hex64(hash)},
                        {"version", VFLHLP_VERSION}};
    write_file(dir / "result.json", j.dump(2) + "\n");
}

inline void write_results(const Layout& layout, const std::vector<SeedOutcome>& outcomes, const RunConfig& cfg,
                          const ResultTable& table) {
    const bool sweep = cfg.downstream.beta_sweep.size() > 1;
    write_file(layout.results() / "table.md", format_markdown(table));
    write_file(layout.results() / "table.csv", format_csv(table));
    write_file(layout.results() / "cells.csv", format_cells_csv(outcomes, sweep));
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : table.rows) {
        nlohmann::json cols = nlohmann::json::array();
        for (std::size_t i = 0; i < table.aligned_counts.size(); ++i) {
            const bool present = r.columns[i].count > 0;
            cols.push_back({{"aligned", table.aligned_counts[i]},
                            {"mean", present ? nlohmann::json(r.columns[i].mean) : nlohmann::json()},
                            {"std", present ? nlohmann::json(r.columns[i].std) : nlohmann::json()},
                            {"n", r.columns[i].count}});
        }
        rows.push_back({{"model", r.label}, {"mode", to_string(r.mode)}, {"beta", r.beta}, {"columns", cols}});
    }
    nlohmann::json j = {{"version", VFLHLP_VERSION},
                        {"config_hash", hex64(config_hash(cfg))},
                        {"seeds", cfg.partition.seeds},
                        {"aligned_counts", cfg.partition.aligned_counts},
                        {"rows", rows},
                        {"delta_vflhlp", table.delta ? nlohmann::json(*table.delta) : nlohmann::json()},
                        {"oracle_test_auc", table.oracle_auc ? nlohmann::json(*table.oracle_auc) : nlohmann::json()}};
    write_file(layout.results() / "results.json", j.dump(2) + "\n");
}

inline std::vector<TrainMode> selected_modes(const CliOptions& opt, const RunConfig& cfg) {
    if (opt.mode) return {parse_mode(*opt.mode)};
    return cfg.downstream.modes;
}

inline std::vector<std::size_t> selected_counts(const CliOptions& opt, const RunConfig& cfg) {
    if (opt.aligned) return {*opt.aligned};
    return cfg.partition.aligned_counts;
}

// ---------------------------------------------------------------------------
// Commands

inline int cmd_prepare(const CliOptions&, const RunConfig& cfg, const Layout& layout, std::ostream& out,
                       std::ostream& log) {
    bool reused = false;
    PreparedData data = ensure_cache(layout, cfg, log, reused);
    const auto manifest = manifest_json(data, cfg.partition.parties);
    out << (reused ? "cache up to date: " : "cache written: ") << layout.cache().string() << "\n"
        << "party fields " << manifest["party_dims"].get<std::string>() << ", train " << data.train.rows()
        << ", validation " << (data.validation ? data.validation->rows() : 0) << ", test "
        << (data.test ? data.test->rows() : 0) << "\n";
    return kExitOk;
}

inline int cmd_pretrain(const CliOptions& opt, const RunConfig& cfg, const Layout& layout, std::ostream& out,
                        std::ostream& log) {
    const PreparedData data = require_cache(layout, cfg);
    const std::uint64_t hash = config_hash(cfg);
    for (std::uint64_t seed : cfg.partition.seeds) {
        log << "pre-training seed " << seed << (opt.passive_only ? " (passive parties only)" : "") << "\n";
        const VerticalDataset base = partition_cell(data, cfg, max_aligned(cfg), seed);
        const SeedPretraining pre = pretrain_seed(base, cfg, seed, !opt.passive_only, true);
        save_pretraining(layout, pre, hash, seed);
        if (pre.active) {
            out << "seed " << seed << " party 1: best epoch " << pre.active->best_epoch << ", validation AUC "
                << detail::fmt("%.4f", pre.active->validation_auc) << "\n";
        }
        for (const auto& p : pre.passive) {
            if (!p) continue;
            out << "seed " << seed << " party " << p->party << ": contrastive loss "
                << detail::fmt("%.4f", p->initial_loss) << " -> " << detail::fmt("%.4f", p->final_loss)
                << " (cross-entropy reduction " << detail::fmt("%.1f%%", 100.0 * p->cross_entropy_reduction())
                << ")\n";
        }
    }
    return kExitOk;
}

inline int cmd_train(const CliOptions& opt, const RunConfig& cfg, const Layout& layout, std::ostream& out,
                     std::ostream& log) {
    const PreparedData data = require_cache(layout, cfg);
    const std::uint64_t hash = config_hash(cfg);
    const auto specs = encoder_specs(data.schema, cfg.model);
    const auto modes = selected_modes(opt, cfg);
    const bool sweep = cfg.downstream.beta_sweep.size() > 1;
    for (std::uint64_t seed : cfg.partition.seeds) {
        const PretrainedSet pre = load_pretraining(layout, specs, modes, cfg.downstream.train.warm_start_active, seed);
        for (std::size_t aligned : selected_counts(opt, cfg)) {
            const VerticalDataset ds = partition_cell(data, cfg, aligned, seed);
            if (!ds.test) throw DataError("the dataset has no test split to evaluate on");
            for (TrainMode mode : modes) {
                const auto betas = uses_constraint(mode) ? cfg.downstream.betas()
                                                         : std::vector<double>{cfg.downstream.train.beta};
                for (double beta : betas) {
                    log << "training " << row_label(mode, beta, sweep) << ", aligned " << aligned << ", seed "
                        << seed << "\n";
                    GridCell cell;
                    cell.mode = mode;
                    cell.beta = beta;
                    cell.aligned = aligned;
                    cell.seed = seed;
                    DownstreamConfig dc = cfg.downstream.train;
                    dc.beta = beta;
                    dc.seed = seed;
                    SupervisedConfig sup = cfg.pretrain.supervised;
                    sup.seed = seed;
                    cell.result = train_downstream(ds, mode, specs, pre, dc, sup);
                    cell.test_auc = evaluate_mode(cell.result, *ds.test);
                    write_run(layout, cell, sweep, hash);
                    out << row_label(mode, beta, sweep) << " aligned " << aligned << " seed " << seed
                        << " test AUC " << detail::fmt("%.6f", cell.test_auc) << "\n";
                }
            }
        }
    }
    return kExitOk;
}

inline int cmd_eval(const CliOptions& opt, const RunConfig& cfg, const Layout& layout, std::ostream& out,
                    std::ostream&) {
    const PreparedData data = require_cache(layout, cfg);
    if (!data.test) throw DataError("the dataset has no test split to evaluate on");
    const auto specs = encoder_specs(data.schema, cfg.model);
    const AlignedSet test = make_aligned_set(*data.test, cfg.partition.parties);
    const bool sweep = cfg.downstream.beta_sweep.size() > 1;
    std::size_t mismatches = 0;
    for (std::uint64_t seed : cfg.partition.seeds) {
        for (std::size_t aligned : selected_counts(opt, cfg)) {
            for (TrainMode mode : selected_modes(opt, cfg)) {
                const auto betas = uses_constraint(mode) ? cfg.downstream.betas()
                                                         : std::vector<double>{cfg.downstream.train.beta};
                for (double beta : betas) {
                    const std::string label = row_label(mode, beta, sweep);
                    const fs::path dir = layout.run_dir(label, aligned, seed);
                    if (!fs::exists(dir / "model.json") || !fs::exists(dir / "result.json")) {
                        throw DataError("no trained model at " + dir.string() + "; run 'train' first");
                    }
                    const Checkpoint ckpt = load_checkpoint(dir / "model.json");
                    DownstreamResult r;
                    r.mode = mode;
                    if (mode == TrainMode::local_a) {
                        r.local = load_active(ckpt, specs[0]);
                    } else {
                        r.model = load_federated(ckpt, specs);
                    }
                    const double auc_now = evaluate_mode(r, test);
                    const auto recorded = nlohmann::json::parse(read_file(dir / "result.json")).at("test_auc").get<double>();
                    const bool same = auc_now == recorded;
                    mismatches += !same;
                    out << label << " aligned " << aligned << " seed " << seed << " test AUC "
                        << detail::fmt("%.6f", auc_now) << (same ? " (matches training)" : " (DIFFERS from training)")
                        << "\n";
                }
            }
        }
    }
    if (mismatches > 0) {
        throw TrainingError(std::to_string(mismatches) + " evaluation(s) differ from the AUC recorded at train time");
    }
    return kExitOk;
}

inline int cmd_grid(const CliOptions& opt, const RunConfig& cfg_in, const Layout& layout, std::ostream& out,
                    std::ostream& log) {
    RunConfig cfg = cfg_in;
    if (opt.mode) cfg.downstream.modes = {parse_mode(*opt.mode)};
    if (opt.aligned) cfg.partition.aligned_counts = {*opt.aligned};
    bool reused = false;
    const PreparedData data = ensure_cache(layout, cfg, log, reused);
    log << "running " << cfg.partition.seeds.size() << " seed(s) x " << cfg.partition.aligned_counts.size()
        << " aligned count(s) x " << cfg.downstream.modes.size() << " mode(s)\n";
    const auto outcomes = run_grid(data, cfg);
    const std::uint64_t hash = config_hash(cfg);
    const bool sweep = cfg.downstream.beta_sweep.size() > 1;
    for (const auto& o : outcomes) {
        save_pretraining(layout, o.pretraining, hash, o.seed);
        for (const auto& c : o.cells) {
            if (c.ok()) write_run(layout, c, sweep, hash);
        }
    }
    const ResultTable table = summarize(outcomes, cfg, data.oracle_test_auc);
    write_results(layout, outcomes, cfg, table);
    out << format_markdown(table);
    std::size_t missing = 0;
    for (const auto& o : outcomes) {
        for (const auto& c : o.cells) {
            if (c.ok()) continue;
            ++missing;
            log << "missing cell " << row_label(c.mode, c.beta, sweep) << " aligned=" << c.aligned
                << " seed=" << c.seed << ": " << c.failure << "\n";
        }
    }
    if (missing > 0) {
        throw TrainingError(std::to_string(missing) + " grid cell(s) failed; see results/cells.csv");
    }
    return kExitOk;
}

}  // namespace detail

/// Entry point shared by the executable and in-process callers; returns the
/// process exit code.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
    CLI::App app{"Vertical federated learning with local pre-training", "vflhlp"};
    CliOptions opt;
    std::uint64_t seed = 0;
    std::string mode;
    std::size_t aligned = 0;
    app.add_option("command", opt.command, "prepare | pretrain | train | eval | grid")
        ->required()
        ->check(CLI::IsMember({"prepare", "pretrain", "train", "eval", "grid"}));
    app.add_option("--config", opt.config_path, "JSON run config")->required();
    app.add_option("--out", opt.out_dir, "output directory (overrides VFLHLP_OUT_DIR and output_dir)");
    auto* seed_opt = app.add_option("--seed", seed, "run a single root seed instead of partition.seeds");
    auto* mode_opt = app.add_option("--mode", mode, "restrict to one training mode");
    auto* aligned_opt = app.add_option("--aligned", aligned, "restrict to one aligned count");
    app.add_flag("--passive-only", opt.passive_only, "pretrain: skip the active party");
    app.set_version_flag("--version", VFLHLP_VERSION);

    std::vector<std::string> storage = args;
    storage.insert(storage.begin(), "vflhlp");
    std::vector<char*> argv;
    for (auto& s : storage) argv.push_back(s.data());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }
    if (*seed_opt) opt.seed = seed;
    if (*mode_opt) opt.mode = mode;
    if (*aligned_opt) opt.aligned = aligned;

    const auto started = detail::utc_now();
    const auto t0 = std::chrono::steady_clock::now();
    try {
        RunConfig cfg = load_config(opt.config_path);
        if (opt.seed) cfg.partition.seeds = {*opt.seed};
        if (opt.mode) parse_mode(*opt.mode);
        const detail::Layout layout{detail::resolve_out(opt, cfg)};
        int code = kExitOk;
        if (opt.command == "prepare") code = detail::cmd_prepare(opt, cfg, layout, out, err);
        if (opt.command == "pretrain") code = detail::cmd_pretrain(opt, cfg, layout, out, err);
        if (opt.command == "train") code = detail::cmd_train(opt, cfg, layout, out, err);
        if (opt.command == "eval") code = detail::cmd_eval(opt, cfg, layout, out, err);
        if (opt.command == "grid") code = detail::cmd_grid(opt, cfg, layout, out, err);
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        detail::write_run_meta(layout, opt.command, cfg, started, seconds);
        return code;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const SchemaError& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const TrainingError& e) {
        err << "training error: " << e.what() << "\n";
        return kExitTraining;
    } catch (const UndefinedMetric& e) {
        err << "training error: " << e.what() << "\n";
        return kExitTraining;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
}

}  // namespace vflhlp
