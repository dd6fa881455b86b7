#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "vflhlp/common.hpp"
#include "vflhlp/data.hpp"
#include "vflhlp/metrics.hpp"
#include "vflhlp/nn.hpp"
#include "vflhlp/ssl.hpp"
#include "vflhlp/supervised.hpp"
#include "vflhlp/transport.hpp"

namespace vflhlp {

enum class TrainMode { vanilla_vfl, vflhlp, vflhlp_a, vflhlp_p, local_a };

inline std::string to_string(TrainMode m) {
    switch (m) {
        case TrainMode::vanilla_vfl: return "vanilla_vfl";
        case TrainMode::vflhlp: return "vflhlp";
        case TrainMode::vflhlp_a: return "vflhlp_a";
        case TrainMode::vflhlp_p: return "vflhlp_p";
        case TrainMode::local_a: return "local_a";
    }
    return "?";
}

inline TrainMode parse_mode(const std::string& s) {
    for (TrainMode m : {TrainMode::vanilla_vfl, TrainMode::vflhlp, TrainMode::vflhlp_a, TrainMode::vflhlp_p,
                        TrainMode::local_a}) {
        if (to_string(m) == s) return m;
    }
    throw ConfigError("unknown mode '" + s + "' (expected vanilla_vfl, vflhlp, vflhlp_a, vflhlp_p or local_a)");
}

/// Anchors (Theta^1, Theta^0) constrain the active sub-model.
inline bool uses_constraint(TrainMode m) { return m == TrainMode::vflhlp || m == TrainMode::vflhlp_a; }

/// Passive encoders start from their contrastive pre-training.
inline bool uses_passive_warm_start(TrainMode m) { return m == TrainMode::vflhlp || m == TrainMode::vflhlp_p; }

// ---------------------------------------------------------------------------
// Knowledge-transfer constraint

struct ProximalTerm {
    double loss = 0.0;  // 0.5 * sum (theta - anchor)^2
    std::vector<double> grad;
};

inline ProximalTerm proximal(std::span<const double> theta, std::span<const double> anchor) {
    if (theta.size() != anchor.size()) throw SchemaError("proximal term: parameter/anchor size mismatch");
    ProximalTerm out;
    out.grad.resize(theta.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double d = theta[i] - anchor[i];
        out.grad[i] = d;
        sum += d * d;
    }
    out.loss = 0.5 * sum;
    return out;
}

inline void check_same_shape(const nn::Encoder& a, const nn::Encoder& b, const std::string& what) {
    auto sa = nn::parameter_spans(a);
    auto sb = nn::parameter_spans(b);
    bool ok = sa.size() == sb.size();
    for (std::size_t i = 0; ok && i < sa.size(); ++i) ok = sa[i].size() == sb[i].size();
    ok = ok && a.embeddings.dim == b.embeddings.dim && a.num_numerical == b.num_numerical;
    for (std::size_t i = 0; ok && i < a.mlp.layers.size(); ++i) {
        ok = a.mlp.layers[i].weights.same_shape(b.mlp.layers[i].weights);
    }
    if (!ok) throw SchemaError(what + ": encoder architectures differ");
}

struct EncoderConstraint {
    double loss = 0.0;
    nn::Encoder grad;
};

/// 0.5 * ||theta^1 - Theta^1||^2 and its gradient (theta^1 - Theta^1).
inline EncoderConstraint encoder_constraint(const nn::Encoder& theta, const nn::Encoder& anchor) {
    check_same_shape(theta, anchor, "encoder constraint");
    EncoderConstraint out{0.0, nn::zeros_like(theta)};
    auto t = nn::parameter_spans(theta);
    auto a = nn::parameter_spans(anchor);
    auto g = nn::parameter_spans(out.grad);
    for (std::size_t i = 0; i < t.size(); ++i) {
        ProximalTerm p = proximal(t[i], a[i]);
        out.loss += p.loss;
        std::copy(p.grad.begin(), p.grad.end(), g[i].begin());
    }
    return out;
}

struct HeadConstraint {
    double loss = 0.0;
    nn::Mlp grad;  // non-zero only on the active slice
};

/// theta^0_s is the block of head weight columns that multiplies party 1's
/// representation, plus the head bias; it is anchored to Theta^0's weights and bias.
inline HeadConstraint head_constraint(const nn::Mlp& head, const nn::Mlp& anchor) {
    if (head.layers.size() != 1 || anchor.layers.size() != 1) {
        throw SchemaError("head constraint: heads must be single affine layers");
    }
    const nn::DenseLayer& h = head.layers[0];
    const nn::DenseLayer& a = anchor.layers[0];
    if (h.out_dim() != a.out_dim() || a.in_dim() > h.in_dim()) {
        throw SchemaError("head constraint: theta^0_s slice " + std::to_string(h.out_dim()) + "x" +
                          std::to_string(a.in_dim()) + " does not fit anchor " + a.weights.shape_string() +
                          " within head " + h.weights.shape_string());
    }
    HeadConstraint out{0.0, nn::zeros_like(head)};
    nn::DenseLayer& g = out.grad.layers[0];
    for (std::size_t o = 0; o < h.out_dim(); ++o) {
        ProximalTerm p = proximal(h.weights.row(o).subspan(0, a.in_dim()), a.weights.row(o));
        out.loss += p.loss;
        std::copy(p.grad.begin(), p.grad.end(), g.weights.row(o).begin());
    }
    ProximalTerm pb = proximal(h.bias, a.bias);
    out.loss += pb.loss;
    g.bias = pb.grad;
    return out;
}

struct ConstraintLoss {
    double loss = 0.0;
    nn::Encoder encoder_grad;  // w.r.t. theta^1
    nn::Mlp head_grad;         // w.r.t. theta^0 (zero outside theta^0_s)
};

/// L_cons = 0.5 * (sum (theta^1 - Theta^1)^2 + sum (theta^0_s - Theta^0)^2), a plain sum over entries.
inline ConstraintLoss constraint_loss(const nn::Encoder& theta1, const nn::Encoder& anchor1, const nn::Mlp& head,
                                      const nn::Mlp& anchor0) {
    EncoderConstraint e = encoder_constraint(theta1, anchor1);
    HeadConstraint h = head_constraint(head, anchor0);
    return {e.loss + h.loss, std::move(e.grad), std::move(h.grad)};
}

/// L = L_vfl + beta * L_cons
inline double total_loss(double vfl_loss, double cons_loss, double beta) {
    if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative");
    return vfl_loss + beta * cons_loss;
}

// ---------------------------------------------------------------------------
// Nodes

/// Party k: owns h^k, its optimizer and (party 1 only) the anchor Theta^1.
class PartyNode {
public:
    PartyNode(std::size_t party, nn::Encoder encoder, nn::OptimizerConfig optimizer,
              std::optional<nn::Encoder> anchor = std::nullopt, double beta = 0.0)
        : party_(party), encoder_(std::move(encoder)), optimizer_(optimizer), anchor_(std::move(anchor)), beta_(beta) {
        if (party_ < 1 || party_ > 255) throw ConfigError("party id must lie in [1, 255]");
        if (anchor_) check_same_shape(encoder_, *anchor_, "party " + std::to_string(party_) + " anchor");
        if (!(beta_ >= 0.0)) throw ConfigError("beta must be non-negative");
    }

    std::size_t party() const { return party_; }
    const nn::Encoder& encoder() const { return encoder_; }
    nn::Encoder& encoder() { return encoder_; }
    bool anchored() const { return anchor_.has_value(); }

    RepresentationMsg forward(const FeatureBlock& x, std::uint32_t round) {
        RepresentationMsg msg;
        msg.party = static_cast<std::uint8_t>(party_);
        msg.round = round;
        msg.values = nn::forward(encoder_, x, &tape_);
        tape_round_ = round;
        return msg;
    }

    /// 0.5 * ||theta^k - Theta^k||^2 at the current parameters (0 when unanchored).
    double constraint_term() const { return anchor_ ? encoder_constraint(encoder_, *anchor_).loss : 0.0; }

    /// d L / d theta^k = (d r^k / d theta^k)^T grad + beta * (theta^k - Theta^k).
    nn::Encoder gradients(const GradientMsg& msg) const {
        if (msg.party != party_) throw TrainingError("gradient message delivered to the wrong party");
        if (!tape_round_ || *tape_round_ != msg.round) {
            throw TrainingError("party " + std::to_string(party_) + " received a gradient for an unknown round");
        }
        nn::Encoder grad = nn::backward(encoder_, tape_, msg.values).params;
        if (anchor_) nn::add_scaled(grad, encoder_constraint(encoder_, *anchor_).grad, beta_);
        return grad;
    }

    void update(const nn::Encoder& grad) { optimizer_.step(encoder_, grad); }

private:
    std::size_t party_;
    nn::Encoder encoder_;
    nn::Optimizer optimizer_;
    std::optional<nn::Encoder> anchor_;
    double beta_;
    nn::EncoderTape tape_;
    std::optional<std::uint32_t> tape_round_;
};

/// Server: prediction head f over [r^1 | ... | r^K], labels and the anchor
/// Theta^0, all controlled by the active party.
class ServerNode {
public:
    struct Step {
        double vfl_loss = 0.0;
        double constraint = 0.0;  // head part of L_cons
        nn::Mlp head_grad;
        std::vector<GradientMsg> gradients;
    };

    ServerNode(nn::Mlp head, std::vector<std::size_t> rep_dims, nn::OptimizerConfig optimizer,
               std::optional<nn::Mlp> anchor = std::nullopt, double beta = 0.0)
        : head_(std::move(head)), rep_dims_(std::move(rep_dims)), optimizer_(optimizer), anchor_(std::move(anchor)),
          beta_(beta) {
        std::size_t total = 0;
        for (auto d : rep_dims_) total += d;
        if (head_.in_dim() != total) {
            throw SchemaError("head input " + std::to_string(head_.in_dim()) + " != sum of representation dims " +
                              std::to_string(total));
        }
        if (head_.out_dim() != 1) throw SchemaError("prediction head must emit one logit");
        if (anchor_) {
            head_constraint(head_, *anchor_);
            if (anchor_->in_dim() != rep_dims_.at(0)) {
                throw SchemaError("anchor head input must equal party 1's representation dim");
            }
        }
        if (!(beta_ >= 0.0)) throw ConfigError("beta must be non-negative");
    }

    const nn::Mlp& head() const { return head_; }
    nn::Mlp& head() { return head_; }
    std::size_t parties() const { return rep_dims_.size(); }
    double beta() const { return beta_; }
    bool anchored() const { return anchor_.has_value(); }

    /// Concatenates representations in party order; all must cover the same batch.
    Matrix concat(std::span<const Matrix> reps) const {
        if (reps.size() != rep_dims_.size()) throw TrainingError("server expects one representation per party");
        for (std::size_t k = 0; k < reps.size(); ++k) {
            if (reps[k].cols() != rep_dims_[k]) {
                throw SchemaError("party " + std::to_string(k + 1) + " sent " + reps[k].shape_string() +
                                  ", expected width " + std::to_string(rep_dims_[k]));
            }
        }
        return hconcat(reps);
    }

    Matrix logits(std::span<const Matrix> reps) const { return nn::forward(head_, concat(reps)); }

    Step process(std::span<const RepresentationMsg> reps, std::span<const int> labels, std::uint32_t round) const {
        std::vector<Matrix> blocks;
        for (std::size_t k = 0; k < reps.size(); ++k) {
            if (reps[k].party != k + 1 || reps[k].round != round) {
                throw TrainingError("server received an out-of-order representation");
            }
            blocks.push_back(reps[k].values);
        }
        nn::MlpTape tape;
        Matrix logit = nn::forward(head_, concat(blocks), &tape);
        nn::LossResult loss = nn::bce_with_logits(logit.values(), labels);
        Matrix upstream(logit.rows(), 1);
        std::copy(loss.grad.begin(), loss.grad.end(), upstream.values().begin());
        nn::MlpGrad g = nn::backward(head_, tape, upstream);

        Step step;
        step.vfl_loss = loss.loss;
        step.head_grad = std::move(g.params);
        if (anchor_) {
            HeadConstraint hc = head_constraint(head_, *anchor_);
            step.constraint = hc.loss;
            nn::add_scaled(step.head_grad, hc.grad, beta_);
        }
        std::size_t offset = 0;
        for (std::size_t k = 0; k < rep_dims_.size(); ++k) {
            GradientMsg msg;
            msg.party = static_cast<std::uint8_t>(k + 1);
            msg.round = round;
            msg.values = column_block(g.input, offset, rep_dims_[k]);
            offset += rep_dims_[k];
            step.gradients.push_back(std::move(msg));
        }
        return step;
    }

    void update(const nn::Mlp& grad) { optimizer_.step(head_, grad); }

private:
    nn::Mlp head_;
    std::vector<std::size_t> rep_dims_;
    nn::Optimizer optimizer_;
    std::optional<nn::Mlp> anchor_;
    double beta_;
};

// ---------------------------------------------------------------------------
// One round of split training

struct RoundStats {
    double loss = 0.0;
    double vfl_loss = 0.0;
    double constraint_loss = 0.0;
};

struct ObjectiveGradients {
    RoundStats stats;
    std::vector<nn::Encoder> party_grads;
    nn::Mlp head_grad;
};

namespace detail {

inline ObjectiveGradients exchange(std::span<PartyNode> parties, ServerNode& server, const AlignedBatch& batch,
                                   Transport& transport, std::uint32_t round, bool apply) {
    const std::size_t K = parties.size();
    if (batch.parties.size() != K || server.parties() != K) throw TrainingError("batch/party/server count mismatch");
    if (batch.labels.size() != batch.size()) throw TrainingError("batch labels do not cover the batch");

    for (std::size_t k = 0; k < K; ++k) transport.send(parties[k].forward(batch.parties[k], round));
    double cons = 0.0;
    for (const auto& p : parties) cons += p.constraint_term();

    std::vector<RepresentationMsg> reps;
    for (std::size_t k = 0; k < K; ++k) reps.push_back(transport.receive_representation(static_cast<std::uint8_t>(k + 1)));
    ServerNode::Step step = server.process(reps, batch.labels, round);
    cons += step.constraint;
    if (apply) server.update(step.head_grad);
    for (auto& msg : step.gradients) transport.send(std::move(msg));

    ObjectiveGradients out;
    for (std::size_t k = 0; k < K; ++k) {
        GradientMsg msg = transport.receive_gradient(static_cast<std::uint8_t>(k + 1));
        nn::Encoder grad = parties[k].gradients(msg);
        if (apply) {
            parties[k].update(grad);
        } else {
            out.party_grads.push_back(std::move(grad));
        }
    }
    out.stats.vfl_loss = step.vfl_loss;
    out.stats.constraint_loss = cons;
    out.stats.loss = total_loss(step.vfl_loss, cons, server.beta());
    if (!apply) out.head_grad = std::move(step.head_grad);
    return out;
}

}  // namespace detail

/// Parties send r^k, the server evaluates L, updates theta^0 and returns
/// d L / d r^k, and each party back-propagates and updates theta^k.
inline RoundStats run_round(std::span<PartyNode> parties, ServerNode& server, const AlignedBatch& batch,
                            Transport& transport, std::uint32_t round) {
    return detail::exchange(parties, server, batch, transport, round, true).stats;
}

/// The same exchange without any parameter update: gradients of L w.r.t.
/// every party encoder and the head.
inline ObjectiveGradients objective_gradients(std::span<PartyNode> parties, ServerNode& server,
                                              const AlignedBatch& batch, Transport& transport, std::uint32_t round) {
    return detail::exchange(parties, server, batch, transport, round, false);
}

// ---------------------------------------------------------------------------
// Training driver

struct DownstreamConfig {
    double beta = 0.1;
    nn::OptimizerKind optimizer = nn::OptimizerKind::adam;
    double server_lr = 1e-3;  // eta_1
    double party_lr = 1e-3;   // eta_2
    std::size_t epochs = 20;
    std::size_t batch = 64;
    std::uint64_t seed = 0;
    bool warm_start_active = false;

    friend bool operator==(const DownstreamConfig&, const DownstreamConfig&) = default;
};

struct PretrainedSet {
    std::optional<ActivePretrained> active;
    std::vector<std::optional<nn::Encoder>> passive;  // index k - 1; entry 0 unused

    const nn::Encoder* passive_encoder(std::size_t party) const {
        if (party < 1 || party > passive.size() || !passive[party - 1]) return nullptr;
        return &*passive[party - 1];
    }
};

struct FederatedModel {
    std::vector<nn::Encoder> encoders;  // index 0 is party 1
    nn::Mlp head;

    friend bool operator==(const FederatedModel&, const FederatedModel&) = default;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double loss = 0.0;
    double vfl_loss = 0.0;
    double constraint_loss = 0.0;
    std::optional<double> validation_auc;
};

struct DownstreamResult {
    TrainMode mode = TrainMode::vanilla_vfl;
    FederatedModel model;                  // federated modes
    std::optional<ActivePretrained> local; // local_a
    std::vector<EpochRecord> history;
    TransportLog log;
};

inline nn::Mlp initial_head(std::size_t in_dim, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "init.head"));
    return nn::Mlp::make(in_dim, {}, 1, rng);
}

inline std::vector<double> federated_logits(const FederatedModel& model, std::span<const FeatureBlock> views,
                                            std::size_t batch_size = 0) {
    if (views.size() != model.encoders.size()) {
        throw SchemaError("prediction needs " + std::to_string(model.encoders.size()) + " party views, got " +
                          std::to_string(views.size()));
    }
    const std::size_t n = views.empty() ? 0 : views[0].rows;
    for (const auto& v : views) {
        if (v.rows != n) throw SchemaError("party views cover different samples");
    }
    std::vector<double> out;
    out.reserve(n);
    const std::size_t step = batch_size == 0 ? std::max<std::size_t>(n, 1) : batch_size;
    for (std::size_t start = 0; start < n; start += step) {
        const std::size_t end = std::min(n, start + step);
        const auto idx = [&] {
            std::vector<std::size_t> v;
            for (std::size_t i = start; i < end; ++i) v.push_back(i);
            return v;
        }();
        std::vector<Matrix> reps;
        for (std::size_t k = 0; k < views.size(); ++k) {
            reps.push_back(nn::forward(model.encoders[k], batch_size == 0 ? views[k] : views[k].select(idx)));
        }
        Matrix logits = nn::forward(model.head, hconcat(reps));
        out.insert(out.end(), logits.values().begin(), logits.values().end());
    }
    return out;
}

/// Scores in (0, 1) for fully aligned samples; optional mini-batching.
inline std::vector<double> federated_predict(const FederatedModel& model, std::span<const FeatureBlock> views,
                                             std::size_t batch_size = 0) {
    auto scores = federated_logits(model, views, batch_size);
    for (double& s : scores) s = sigmoid(s);
    return scores;
}

/// Test AUC of a trained model on an aligned split; local_a only reads party 1's view.
inline double evaluate_mode(const DownstreamResult& trained, const AlignedSet& test) {
    if (trained.mode == TrainMode::local_a) {
        if (!trained.local) throw TrainingError("local_a result carries no local model");
        if (test.parties.empty()) throw SchemaError("test split has no party views");
        return auc(local_predict(*trained.local, test.parties[0]), test.labels);
    }
    return auc(federated_predict(trained.model, test.parties), test.labels);
}

/// Algorithm driver for all modes. Active encoder and head start randomly;
/// passive encoders start from Theta^k under warm-start modes; constraint
/// modes anchor theta^1 and theta^0_s to (Theta^1, Theta^0). local_a trains
/// (or reuses) the active party's local model instead of federating.
inline DownstreamResult train_downstream(const VerticalDataset& ds, TrainMode mode,
                                         std::span<const nn::EncoderSpec> specs, const PretrainedSet& pretrained,
                                         const DownstreamConfig& cfg, const SupervisedConfig& local_cfg = {}) {
    const std::size_t K = ds.party_count();
    if (specs.size() != K) throw ConfigError("one encoder spec per party is required");
    DownstreamResult result;
    result.mode = mode;

    if (mode == TrainMode::local_a) {
        result.local = pretrained.active ? *pretrained.active
                                         : pretrain_active(ds.parties[0].features, ds.labels, specs[0], local_cfg);
        return result;
    }
    if (ds.aligned_ids.empty()) throw TrainingError("no aligned samples to train on");
    if (!(cfg.beta >= 0.0)) throw ConfigError("beta must be non-negative");
    if ((uses_constraint(mode) || cfg.warm_start_active) && !pretrained.active) {
        throw TrainingError("mode " + to_string(mode) + " requires the pre-trained model of party 1");
    }

    FederatedModel& model = result.model;
    std::vector<std::size_t> rep_dims;
    for (std::size_t k = 0; k < K; ++k) {
        model.encoders.push_back(initial_encoder(specs[k], cfg.seed, k + 1));
        rep_dims.push_back(specs[k].out_dim);
    }
    if (uses_passive_warm_start(mode)) {
        for (std::size_t k = 2; k <= K; ++k) {
            const nn::Encoder* enc = pretrained.passive_encoder(k);
            if (!enc) {
                throw TrainingError("mode " + to_string(mode) + " requires the pre-trained encoder of party " +
                                    std::to_string(k));
            }
            check_same_shape(model.encoders[k - 1], *enc, "party " + std::to_string(k) + " warm start");
            model.encoders[k - 1] = *enc;
        }
    }
    if (cfg.warm_start_active) {
        check_same_shape(model.encoders[0], pretrained.active->encoder, "party 1 warm start");
        model.encoders[0] = pretrained.active->encoder;
    }
    std::size_t head_in = 0;
    for (auto d : rep_dims) head_in += d;

    const bool constrained = uses_constraint(mode);
    const nn::OptimizerConfig party_opt{cfg.optimizer, cfg.party_lr};
    const nn::OptimizerConfig server_opt{cfg.optimizer, cfg.server_lr};
    std::vector<PartyNode> parties;
    for (std::size_t k = 0; k < K; ++k) {
        std::optional<nn::Encoder> anchor;
        if (k == 0 && constrained) anchor = pretrained.active->encoder;
        parties.emplace_back(k + 1, model.encoders[k], party_opt, std::move(anchor), constrained ? cfg.beta : 0.0);
    }
    ServerNode server(initial_head(head_in, cfg.seed), rep_dims, server_opt,
                      constrained ? std::optional<nn::Mlp>(pretrained.active->head) : std::nullopt,
                      constrained ? cfg.beta : 0.0);

    Transport transport;
    std::uint32_t round = 0;
    auto snapshot = [&] {
        FederatedModel m;
        for (const auto& p : parties) m.encoders.push_back(p.encoder());
        m.head = server.head();
        return m;
    };
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch + 1;
        std::size_t rounds = 0;
        for (const auto& batch : sample_aligned_batches(ds, cfg.batch, cfg.seed, epoch)) {
            RoundStats s = run_round(parties, server, batch, transport, round++);
            rec.loss += s.loss;
            rec.vfl_loss += s.vfl_loss;
            rec.constraint_loss += s.constraint_loss;
            ++rounds;
        }
        rec.loss /= static_cast<double>(rounds);
        rec.vfl_loss /= static_cast<double>(rounds);
        rec.constraint_loss /= static_cast<double>(rounds);
        if (ds.validation) {
            try {
                rec.validation_auc = auc(federated_predict(snapshot(), ds.validation->parties), ds.validation->labels);
            } catch (const UndefinedMetric&) {
            }
        }
        result.history.push_back(rec);
    }
    model = snapshot();
    result.log = transport.take_log();
    return result;
}

// ---------------------------------------------------------------------------
// Leakage audit

/// Hashes of every raw feature column and the label vector of `batch`, in
/// the encoding the transport hashes (row-major float64).
inline void collect_raw_hashes(const AlignedBatch& batch, std::unordered_set<std::uint64_t>& out) {
    for (const auto& block : batch.parties) {
        for (std::size_t f = 0; f < block.num_fields(); ++f) out.insert(fnv1a(block.column(f)));
    }
    std::vector<double> y(batch.labels.begin(), batch.labels.end());
    out.insert(fnv1a(y));
}

/// Raw-data hashes for every batch of a run with `cfg`'s schedule, plus the
/// full aligned columns.
inline std::unordered_set<std::uint64_t> raw_data_hashes(const VerticalDataset& ds, const DownstreamConfig& cfg) {
    std::unordered_set<std::uint64_t> out;
    collect_raw_hashes(ds.aligned_all(), out);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (const auto& batch : sample_aligned_batches(ds, cfg.batch, cfg.seed, epoch)) collect_raw_hashes(batch, out);
    }
    return out;
}

struct AuditReport {
    std::size_t messages = 0;
    std::size_t foreign_kinds = 0;     // anything but upstream representations / downstream gradients
    std::size_t bad_rounds = 0;        // rounds without exactly K messages each way
    std::size_t hash_collisions = 0;   // payloads equal to raw columns or labels

    bool passed() const { return foreign_kinds == 0 && bad_rounds == 0 && hash_collisions == 0; }
};

inline AuditReport audit_transport(const TransportLog& log, const std::unordered_set<std::uint64_t>& raw_hashes,
                                   std::size_t parties) {
    AuditReport report;
    report.messages = log.size();
    std::map<std::uint32_t, std::pair<std::size_t, std::size_t>> per_round;
    for (const auto& r : log) {
        const bool ok = (r.direction == Direction::upstream && r.kind == MessageKind::representation) ||
                        (r.direction == Direction::downstream && r.kind == MessageKind::gradient);
        if (!ok) ++report.foreign_kinds;
        if (raw_hashes.count(r.content_hash)) ++report.hash_collisions;
        auto& c = per_round[r.round];
        (r.direction == Direction::upstream ? c.first : c.second) += 1;
    }
    for (const auto& [round, c] : per_round) {
        if (c.first != parties || c.second != parties) ++report.bad_rounds;
    }
    return report;
}

}  // namespace vflhlp
