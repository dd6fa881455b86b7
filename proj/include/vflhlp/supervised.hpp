#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "vflhlp/common.hpp"
#include "vflhlp/data.hpp"
#include "vflhlp/metrics.hpp"
#include "vflhlp/nn.hpp"
#include "vflhlp/ssl.hpp"

namespace vflhlp {

struct SupervisedConfig {
    std::size_t epochs = 20;
    std::size_t batch = 128;
    nn::OptimizerConfig optimizer{nn::OptimizerKind::adam, 1e-3};
    double val_fraction = 0.1;
    std::uint64_t seed = 0;

    friend bool operator==(const SupervisedConfig&, const SupervisedConfig&) = default;
};

/// Theta^1 and Theta^0 of the active party plus training metadata.
struct ActivePretrained {
    nn::Encoder encoder;  // Theta^1, same architecture as h^1
    nn::Mlp head;         // Theta^0, single affine map rep_dim -> 1
    std::size_t epochs = 0;
    std::size_t best_epoch = 0;  // 0 = initialization
    double final_loss = std::numeric_limits<double>::quiet_NaN();
    double validation_auc = std::numeric_limits<double>::quiet_NaN();
    bool selection_fallback = false;  // validation AUC undefined, last epoch kept
    std::vector<double> loss_trace;
    std::vector<double> validation_trace;
};

inline nn::Mlp initial_local_head(std::size_t rep_dim, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "init.local_head"));
    return nn::Mlp::make(rep_dim, {}, 1, rng);
}

inline std::vector<double> local_logits(const ActivePretrained& model, const FeatureBlock& x) {
    Matrix logits = nn::forward(model.head, nn::forward(model.encoder, x));
    return {logits.values().begin(), logits.values().end()};
}

/// Sigmoid scores of the local model f(Theta^0; h^1(Theta^1; x)).
inline std::vector<double> local_predict(const ActivePretrained& model, const FeatureBlock& x) {
    auto scores = local_logits(model, x);
    for (double& s : scores) s = sigmoid(s);
    return scores;
}

/// Supervised pre-training on the active party's full labeled local data.
/// The weights of the epoch with the best held-out AUC are returned.
inline ActivePretrained pretrain_active(const FeatureBlock& x, std::span<const int> y, const nn::EncoderSpec& spec,
                                        const SupervisedConfig& cfg) {
    if (x.rows == 0) throw TrainingError("active party has no local samples");
    if (y.size() != x.rows) throw SchemaError("pretrain_active: one label per local sample is required");
    if (cfg.batch == 0) throw ConfigError("supervised batch size must be positive");
    if (!(cfg.val_fraction >= 0.0 && cfg.val_fraction < 1.0)) throw ConfigError("val_fraction must lie in [0, 1)");

    ActivePretrained out;
    out.encoder = initial_encoder(spec, cfg.seed, 1);
    out.head = initial_local_head(spec.out_dim, cfg.seed);

    Rng split_rng(derive_seed(cfg.seed, "supervised.split"));
    const auto perm = permutation(x.rows, split_rng);
    auto n_val = static_cast<std::size_t>(std::floor(cfg.val_fraction * static_cast<double>(x.rows) + 0.5));
    if (n_val >= x.rows) n_val = x.rows - 1;
    std::vector<std::size_t> val_rows(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> train_rows(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
    const FeatureBlock x_val = x.select(val_rows);
    std::vector<int> y_val;
    for (std::size_t r : val_rows) y_val.push_back(y[r]);

    nn::Optimizer enc_opt(cfg.optimizer);
    nn::Optimizer head_opt(cfg.optimizer);
    Rng shuffle(derive_seed(cfg.seed, "supervised.shuffle"));
    nn::Encoder best_encoder = out.encoder;
    nn::Mlp best_head = out.head;
    double best_auc = -1.0;
    bool validation_defined = true;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double total = 0.0;
        for (const auto& batch_idx : shuffled_batches(train_rows.size(), cfg.batch, shuffle)) {
            std::vector<std::size_t> rows;
            std::vector<int> labels;
            for (std::size_t i : batch_idx) {
                rows.push_back(train_rows[i]);
                labels.push_back(y[train_rows[i]]);
            }
            FeatureBlock xb = x.select(rows);
            nn::EncoderTape et;
            nn::MlpTape ht;
            Matrix rep = nn::forward(out.encoder, xb, &et);
            Matrix logits = nn::forward(out.head, rep, &ht);
            nn::LossResult loss = nn::bce_with_logits(logits.values(), labels);
            Matrix upstream(logits.rows(), 1);
            std::copy(loss.grad.begin(), loss.grad.end(), upstream.values().begin());
            nn::MlpGrad hg = nn::backward(out.head, ht, upstream);
            nn::EncoderGrad eg = nn::backward(out.encoder, et, hg.input);
            head_opt.step(out.head, hg.params);
            enc_opt.step(out.encoder, eg.params);
            total += loss.loss * static_cast<double>(rows.size());
        }
        out.loss_trace.push_back(total / static_cast<double>(train_rows.size()));
        out.epochs = epoch;

        if (!validation_defined) continue;
        double val_auc = 0.0;
        try {
            val_auc = auc(local_predict(out, x_val), y_val);
        } catch (const UndefinedMetric&) {
            validation_defined = false;
            continue;
        }
        out.validation_trace.push_back(val_auc);
        if (val_auc > best_auc) {
            best_auc = val_auc;
            best_encoder = out.encoder;
            best_head = out.head;
            out.best_epoch = epoch;
        }
    }
    if (!out.loss_trace.empty()) out.final_loss = out.loss_trace.back();
    if (cfg.epochs == 0) return out;
    if (!validation_defined) {
        out.selection_fallback = true;
        out.best_epoch = out.epochs;
        out.validation_trace.clear();
        return out;
    }
    out.encoder = std::move(best_encoder);
    out.head = std::move(best_head);
    out.validation_auc = best_auc;
    return out;
}

}  // namespace vflhlp
