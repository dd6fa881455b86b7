#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "vflhlp/data.hpp"
#include "vflhlp/federated.hpp"
#include "vflhlp/nn.hpp"
#include "vflhlp/synth.hpp"
#include "vflhlp/transport.hpp"

namespace vflhlp::testing {

inline FeatureBlock random_block(std::size_t rows, const std::vector<std::size_t>& cardinalities,
                                 std::size_t numerical, Rng& rng) {
    FeatureBlock b(rows, cardinalities.size(), numerical);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t f = 0; f < cardinalities.size(); ++f) {
            b.cat(r, f) = static_cast<std::uint32_t>(1 + rng.below(cardinalities[f]));
        }
        for (std::size_t f = 0; f < numerical; ++f) b.numerical(r, f) = rng.uniform();
    }
    return b;
}

inline std::vector<int> random_labels(std::size_t n, Rng& rng) {
    std::vector<int> y(n);
    for (auto& v : y) v = static_cast<int>(rng.below(2));
    y[0] = 0;
    if (n > 1) y[1] = 1;
    return y;
}

/// Smallest |pre-activation| of any hidden relu unit in a forward pass;
/// finite differences are only trusted away from the kinks.
inline double relu_margin(const nn::Mlp& mlp, const Matrix& input) {
    double margin = INFINITY;
    Matrix h = input;
    for (const auto& layer : mlp.layers) {
        for (std::size_t n = 0; n < h.rows(); ++n) {
            for (std::size_t o = 0; o < layer.out_dim(); ++o) {
                const double pre = layer.bias[o] + dot(layer.weights.row(o), h.row(n));
                if (layer.activation == nn::Activation::relu) margin = std::min(margin, std::abs(pre));
            }
        }
        h = nn::forward(layer, h);
    }
    return margin;
}

inline double relu_margin(const nn::Encoder& enc, const FeatureBlock& x) {
    return relu_margin(enc.mlp, nn::embed(enc, x));
}

/// Centralized oracle: every encoder and the head in one object, trained by
/// one chain-rule pass over the concatenated representation.
struct Monolith {
    std::vector<nn::Encoder> encoders;
    nn::Mlp head;
    double lr = 0.1;

    double loss(const AlignedBatch& batch) const {
        std::vector<Matrix> reps;
        for (std::size_t k = 0; k < encoders.size(); ++k) reps.push_back(nn::forward(encoders[k], batch.parties[k]));
        Matrix logits = nn::forward(head, hconcat(reps));
        return nn::bce_with_logits(logits.values(), batch.labels).loss;
    }

    /// One plain SGD step on BCE; returns the loss before the step.
    double sgd_step(const AlignedBatch& batch) {
        std::vector<nn::EncoderTape> tapes(encoders.size());
        std::vector<Matrix> reps;
        for (std::size_t k = 0; k < encoders.size(); ++k) {
            reps.push_back(nn::forward(encoders[k], batch.parties[k], &tapes[k]));
        }
        nn::MlpTape head_tape;
        Matrix logits = nn::forward(head, hconcat(reps), &head_tape);
        nn::LossResult l = nn::bce_with_logits(logits.values(), batch.labels);
        Matrix upstream(logits.rows(), 1);
        for (std::size_t i = 0; i < l.grad.size(); ++i) upstream(i, 0) = l.grad[i];
        nn::MlpGrad hg = nn::backward(head, head_tape, upstream);
        std::vector<nn::Encoder> grads;
        std::size_t offset = 0;
        for (std::size_t k = 0; k < encoders.size(); ++k) {
            Matrix block(hg.input.rows(), reps[k].cols());
            for (std::size_t r = 0; r < block.rows(); ++r) {
                for (std::size_t c = 0; c < block.cols(); ++c) block(r, c) = hg.input(r, offset + c);
            }
            offset += reps[k].cols();
            grads.push_back(nn::backward(encoders[k], tapes[k], block).params);
        }
        nn::add_scaled(head, hg.params, -lr);
        for (std::size_t k = 0; k < encoders.size(); ++k) nn::add_scaled(encoders[k], grads[k], -lr);
        return l.loss;
    }
};

/// Literal sum over the anchored entries: every encoder tensor, the first
/// anchor.in_dim head columns and the head bias.
inline double naive_constraint(const nn::Encoder& theta1, const nn::Encoder& anchor1, const nn::Mlp& head,
                               const nn::Mlp& anchor0) {
    double s = 0.0;
    const auto a = nn::flatten(theta1);
    const auto b = nn::flatten(anchor1);
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    const auto& h = head.layers[0];
    const auto& g = anchor0.layers[0];
    for (std::size_t o = 0; o < h.out_dim(); ++o) {
        for (std::size_t i = 0; i < g.in_dim(); ++i) s += (h.weights(o, i) - g.weights(o, i)) * (h.weights(o, i) - g.weights(o, i));
        s += (h.bias[o] - g.bias[o]) * (h.bias[o] - g.bias[o]);
    }
    return 0.5 * s;
}

/// Random split model over K parties, small enough for exhaustive finite
/// differences, with relu units kept away from their kinks on `batch`.
struct SplitInstance {
    std::vector<nn::EncoderSpec> specs;
    std::vector<nn::Encoder> encoders;
    nn::Mlp head;
    nn::Encoder anchor1;
    nn::Mlp anchor0;
    AlignedBatch batch;

    std::size_t parameter_count() const {
        std::size_t n = nn::parameter_count(head);
        for (const auto& e : encoders) n += nn::parameter_count(e);
        return n;
    }
};

inline nn::Encoder perturbed_encoder(const nn::EncoderSpec& spec, Rng& rng) {
    nn::Encoder enc = nn::make_encoder(spec, rng);
    for (auto& t : enc.embeddings.tables) {
        for (double& v : t.values()) v = rng.uniform(-0.5, 0.5);
    }
    for (auto& l : enc.mlp.layers) {
        for (double& b : l.bias) b = rng.uniform(-0.2, 0.2);
    }
    return enc;
}

inline SplitInstance random_split_instance(std::uint64_t seed, std::size_t parties) {
    Rng rng(derive_seed(seed, "test.split-instance"));
    SplitInstance s;
    const std::size_t rows = 6;
    for (std::size_t k = 0; k < parties; ++k) {
        std::vector<std::size_t> cards;
        for (std::size_t f = 0, n = 1 + rng.below(3); f < n; ++f) cards.push_back(2 + rng.below(5));
        const std::size_t numerical = rng.below(3);
        const std::size_t width = 3 + rng.below(4);
        s.specs.push_back({cards, 2 + rng.below(3), numerical, {width}, 2 + rng.below(3)});
        s.batch.parties.push_back(random_block(rows, cards, numerical, rng));
    }
    s.batch.labels = random_labels(rows, rng);
    for (std::size_t i = 0; i < rows; ++i) s.batch.ids.push_back(i + 1);
    for (std::size_t k = 0; k < parties; ++k) {
        nn::Encoder enc;
        do {
            enc = perturbed_encoder(s.specs[k], rng);
        } while (relu_margin(enc, s.batch.parties[k]) < 1e-3);
        s.encoders.push_back(std::move(enc));
    }
    std::size_t head_in = 0;
    for (const auto& spec : s.specs) head_in += spec.out_dim;
    s.head = nn::Mlp::make(head_in, {}, 1, rng);
    for (double& b : s.head.layers[0].bias) b = rng.uniform(-0.3, 0.3);
    s.anchor1 = perturbed_encoder(s.specs[0], rng);
    s.anchor0 = nn::Mlp::make(s.specs[0].out_dim, {}, 1, rng);
    for (double& b : s.anchor0.layers[0].bias) b = rng.uniform(-0.3, 0.3);
    return s;
}

/// L = BCE(head([h^1 | ... | h^K])) + beta * L_cons, evaluated without the split protocol.
inline double centralized_objective(const std::vector<nn::Encoder>& encoders, const nn::Mlp& head,
                                    const SplitInstance& s, double beta) {
    Monolith m{encoders, head};
    return m.loss(s.batch) + beta * naive_constraint(encoders[0], s.anchor1, head, s.anchor0);
}

/// Max relative error between the protocol's gradients of L (every encoder
/// and the head) and central differences of the centralized objective.
inline double objective_gradient_error(const SplitInstance& s, double beta, double eps = 1e-5) {
    std::vector<PartyNode> parties;
    for (std::size_t k = 0; k < s.encoders.size(); ++k) {
        std::optional<nn::Encoder> anchor;
        if (k == 0) anchor = s.anchor1;
        parties.emplace_back(k + 1, s.encoders[k], nn::OptimizerConfig{nn::OptimizerKind::sgd, 0.1}, anchor, beta);
    }
    std::vector<std::size_t> dims;
    for (const auto& spec : s.specs) dims.push_back(spec.out_dim);
    ServerNode server(s.head, dims, {nn::OptimizerKind::sgd, 0.1}, s.anchor0, beta);
    Transport transport;
    const ObjectiveGradients g = objective_gradients(parties, server, s.batch, transport, 0);
    std::vector<double> analytic;
    for (const auto& pg : g.party_grads) {
        const auto f = nn::flatten(pg);
        analytic.insert(analytic.end(), f.begin(), f.end());
    }
    const auto hf = nn::flatten(g.head_grad);
    analytic.insert(analytic.end(), hf.begin(), hf.end());

    std::vector<nn::Encoder> encoders = s.encoders;
    nn::Mlp head = s.head;
    std::vector<std::span<double>> params;
    for (auto& e : encoders) {
        for (auto sp : nn::parameter_spans(e)) params.push_back(sp);
    }
    for (auto sp : nn::parameter_spans(head)) params.push_back(sp);
    const auto numeric =
        nn::numeric_gradient(params, [&] { return centralized_objective(encoders, head, s, beta); }, eps);
    return nn::max_relative_error(analytic, numeric, 1e-6);
}

struct EquivalenceReport {
    std::size_t rounds = 0;
    double max_loss_diff = 0.0;
    double max_param_diff = 0.0;
};

/// Trains the split protocol (plain SGD, no anchors) and the monolith side
/// by side over the same batch schedule.
inline EquivalenceReport split_vs_monolith(std::uint64_t seed, std::size_t rounds, double lr = 0.05) {
    SynthConfig sc;
    sc.pool = 400;
    sc.validation = 0;
    sc.test = 0;
    sc.parties = {{3, 1}, {2, 2}, {4, 0}};
    sc.seed = seed;
    const SynthData data = synth_generate(sc);
    const VerticalDataset ds = vertical_partition(data.train.table, {3, 120, 48, 0, seed});
    std::vector<nn::EncoderSpec> specs;
    std::vector<std::size_t> dims;
    for (std::size_t k = 1; k <= 3; ++k) {
        specs.push_back({ds.schema.cardinalities(k), 3, ds.schema.num_numerical(k), {6}, 3 + k % 2});
        dims.push_back(specs.back().out_dim);
    }
    std::vector<PartyNode> parties;
    Monolith mono;
    mono.lr = lr;
    for (std::size_t k = 0; k < 3; ++k) {
        nn::Encoder e = initial_encoder(specs[k], seed, k + 1);
        mono.encoders.push_back(e);
        parties.emplace_back(k + 1, e, nn::OptimizerConfig{nn::OptimizerKind::sgd, lr});
    }
    std::size_t head_in = 0;
    for (auto d : dims) head_in += d;
    mono.head = initial_head(head_in, seed);
    ServerNode server(mono.head, dims, {nn::OptimizerKind::sgd, lr});
    Transport transport;
    EquivalenceReport r;
    for (std::size_t epoch = 0; r.rounds < rounds; ++epoch) {
        for (const auto& batch : sample_aligned_batches(ds, 16, seed, epoch)) {
            if (r.rounds == rounds) break;
            const RoundStats s = run_round(parties, server, batch, transport, static_cast<std::uint32_t>(r.rounds));
            const double m = mono.sgd_step(batch);
            r.max_loss_diff = std::max(r.max_loss_diff, std::abs(s.loss - m));
            ++r.rounds;
        }
    }
    auto diff = [&](const auto& a, const auto& b) {
        const auto fa = nn::flatten(a);
        const auto fb = nn::flatten(b);
        for (std::size_t i = 0; i < fa.size(); ++i) r.max_param_diff = std::max(r.max_param_diff, std::abs(fa[i] - fb[i]));
    };
    for (std::size_t k = 0; k < 3; ++k) diff(parties[k].encoder(), mono.encoders[k]);
    diff(server.head(), mono.head);
    return r;
}

}  // namespace vflhlp::testing
